#include "cpdefer/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include <fmt/format.h>

#include "cpdefer/error.hpp"

namespace cpdefer {

namespace {

void check_label(const ProbVector& p, int y) {
  if (y < 0 || static_cast<std::size_t>(y) >= p.size()) {
    throw ValidationError(fmt::format("label {} outside [0, {})", y, p.size()));
  }
}

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ValidationError(fmt::format("miscoverage alpha must lie in (0, 1), got {}", alpha));
  }
}

double rank_penalty(const RapsParams& params, std::size_t rank) {
  const auto over = static_cast<double>(rank) - static_cast<double>(params.k_reg);
  return params.lambda * std::max(0.0, over);
}

const RapsParams& require_raps(const RapsParams* params) {
  if (params == nullptr) throw ValidationError("RAPS scoring requires RAPS parameters");
  return *params;
}

}  // namespace

std::string_view to_string(ScoreKind kind) {
  switch (kind) {
    case ScoreKind::LAC: return "lac";
    case ScoreKind::APS: return "aps";
    case ScoreKind::RAPS: return "raps";
  }
  return "?";
}

ScoreKind parse_score_kind(std::string_view text) {
  if (text == "lac" || text == "LAC") return ScoreKind::LAC;
  if (text == "aps" || text == "APS") return ScoreKind::APS;
  if (text == "raps" || text == "RAPS") return ScoreKind::RAPS;
  throw ValidationError(fmt::format("unknown score '{}' (expected lac, aps or raps)", text));
}

void RapsParams::validate(std::size_t num_classes) const {
  if (k_reg < 0 || (num_classes > 0 && static_cast<std::size_t>(k_reg) > num_classes)) {
    throw ValidationError(fmt::format("RAPS k_reg {} outside [0, {}]", k_reg, num_classes));
  }
  if (!std::isfinite(lambda) || lambda < 0.0) {
    throw ValidationError(fmt::format("RAPS lambda {} must be finite and non-negative", lambda));
  }
}

std::vector<RapsParams> default_raps_grid(std::size_t num_classes) {
  std::vector<RapsParams> grid;
  for (int k : {1, 2, 3, 5}) {
    if (static_cast<std::size_t>(k) > num_classes) continue;
    for (double lambda : {0.001, 0.01, 0.1, 0.5}) grid.push_back({k, lambda});
  }
  return grid;
}

bool PredictionSet::contains(int y) const {
  return std::binary_search(labels.begin(), labels.end(), y);
}

double score_lac(const ProbVector& p, int y) {
  check_label(p, y);
  return 1.0 - p[static_cast<std::size_t>(y)];
}

double score_aps(const ProbVector& p, int y) {
  check_label(p, y);
  const auto order = p.order();
  const std::size_t pos = p.position(y);
  double cum = 0.0;
  for (std::size_t i = 0; i <= pos; ++i) cum += p[static_cast<std::size_t>(order[i])];
  return cum;
}

double score_raps(const ProbVector& p, int y, const RapsParams& params) {
  return score_aps(p, y) + rank_penalty(params, p.position(y) + 1);
}

double score(ScoreKind kind, const ProbVector& p, int y, const RapsParams* params) {
  switch (kind) {
    case ScoreKind::LAC: return score_lac(p, y);
    case ScoreKind::APS: return score_aps(p, y);
    case ScoreKind::RAPS: return score_raps(p, y, require_raps(params));
  }
  return 0.0;
}

std::vector<double> ranked_scores(ScoreKind kind, const ProbVector& p, const RapsParams* params) {
  const auto order = p.order();
  std::vector<double> out(order.size());
  if (kind == ScoreKind::LAC) {
    for (std::size_t i = 0; i < order.size(); ++i) out[i] = 1.0 - p[static_cast<std::size_t>(order[i])];
    return out;
  }
  const RapsParams* raps = kind == ScoreKind::RAPS ? &require_raps(params) : nullptr;
  double cum = 0.0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    cum += p[static_cast<std::size_t>(order[i])];
    out[i] = raps ? cum + rank_penalty(*raps, i + 1) : cum;
  }
  return out;
}

std::size_t conformal_rank(std::size_t n, double alpha) {
  check_alpha(alpha);
  const double target = static_cast<double>(n + 1) * (1.0 - alpha);
  // Guard against products like 10 * 0.9 landing a hair above an integer.
  const double k = std::ceil(target - 1e-9);
  return k < 1.0 ? 1 : static_cast<std::size_t>(k);
}

CalibrationScores::CalibrationScores(std::vector<double> scores, ScoreKind kind, std::size_t num_classes)
    : sorted_(std::move(scores)), kind_(kind), num_classes_(num_classes) {
  if (sorted_.empty()) throw ValidationError("calibration needs at least one score");
  for (double s : sorted_) {
    if (std::isnan(s)) throw ValidationError("calibration score is NaN");
  }
  std::sort(sorted_.begin(), sorted_.end());
}

ConformalThreshold CalibrationScores::threshold(double alpha) const {
  const std::size_t k = conformal_rank(sorted_.size(), alpha);
  ConformalThreshold thr;
  thr.alpha = alpha;
  thr.n_cal = sorted_.size();
  thr.kind = kind_;
  thr.num_classes = num_classes_;
  thr.tau = k > sorted_.size() ? std::numeric_limits<double>::infinity() : sorted_[k - 1];
  return thr;
}

ConformalThreshold calibrate(std::span<const double> cal_scores, double alpha, ScoreKind kind,
                             std::size_t num_classes) {
  check_alpha(alpha);
  return CalibrationScores({cal_scores.begin(), cal_scores.end()}, kind, num_classes).threshold(alpha);
}

std::vector<double> calibration_scores(const ProbabilityTable& table, std::span<const std::size_t> rows,
                                       ScoreKind kind, const RapsParams* params) {
  std::vector<double> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(score(kind, table[r].probs, table[r].truth, params));
  return out;
}

std::size_t set_size_from_ranked(std::span<const double> ranked, const ConformalThreshold& thr) {
  const auto admitted =
      static_cast<std::size_t>(std::upper_bound(ranked.begin(), ranked.end(), thr.tau) - ranked.begin());
  if (thr.kind == ScoreKind::LAC) return admitted;
  return std::min(admitted + 1, ranked.size());
}

PredictionSet predict_set(const ProbVector& p, const ConformalThreshold& thr, const RapsParams* params) {
  if (thr.num_classes != 0 && thr.num_classes != p.size()) {
    throw ValidationError(fmt::format("probability vector has {} classes but the threshold was calibrated on {}",
                                      p.size(), thr.num_classes));
  }
  if ((thr.kind == ScoreKind::RAPS) != (params != nullptr)) {
    throw ValidationError("RAPS parameters must be given exactly when the threshold is a RAPS threshold");
  }
  const auto ranked = ranked_scores(thr.kind, p, params);
  const std::size_t m = set_size_from_ranked(ranked, thr);
  PredictionSet set;
  set.alpha = thr.alpha;
  set.labels.assign(p.order().begin(), p.order().begin() + static_cast<std::ptrdiff_t>(m));
  std::sort(set.labels.begin(), set.labels.end());
  return set;
}

RapsParams tune_raps(const ProbabilityTable& table, std::span<const std::size_t> tuning_rows, double alpha,
                     std::span<const RapsParams> grid) {
  check_alpha(alpha);
  if (grid.empty()) throw ValidationError("RAPS tuning grid is empty");
  if (tuning_rows.size() < 4) {
    throw ValidationError(fmt::format("RAPS tuning needs at least 4 samples, got {}", tuning_rows.size()));
  }
  const std::size_t half = tuning_rows.size() / 2;
  const auto cal_rows = tuning_rows.first(half);
  const auto eval_rows = tuning_rows.subspan(half);

  struct Candidate {
    RapsParams params;
    double coverage;
    double mean_size;
  };
  std::vector<Candidate> evaluated;
  for (const RapsParams& params : grid) {
    params.validate(table.num_classes());
    const auto thr = calibrate(calibration_scores(table, cal_rows, ScoreKind::RAPS, &params), alpha,
                               ScoreKind::RAPS, table.num_classes());
    std::size_t covered = 0;
    std::size_t total_size = 0;
    for (std::size_t r : eval_rows) {
      const auto& row = table[r];
      const auto ranked = ranked_scores(ScoreKind::RAPS, row.probs, &params);
      const std::size_t m = set_size_from_ranked(ranked, thr);
      total_size += m;
      if (row.probs.position(row.truth) < m) ++covered;
    }
    const auto n = static_cast<double>(eval_rows.size());
    evaluated.push_back({params, static_cast<double>(covered) / n, static_cast<double>(total_size) / n});
  }

  auto tie_order = [](const Candidate& a, const Candidate& b) {
    return std::tie(a.mean_size, a.params.lambda, a.params.k_reg) <
           std::tie(b.mean_size, b.params.lambda, b.params.k_reg);
  };
  const Candidate* best = nullptr;
  for (const Candidate& c : evaluated) {
    if (c.coverage < 1.0 - alpha) continue;
    if (!best || tie_order(c, *best)) best = &c;
  }
  if (best) return best->params;
  for (const Candidate& c : evaluated) {
    if (!best || c.coverage > best->coverage || (c.coverage == best->coverage && tie_order(c, *best))) best = &c;
  }
  return best->params;
}

}  // namespace cpdefer
