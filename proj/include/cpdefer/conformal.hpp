#pragma once

// Split-conformal prediction sets around a probability-vector model.
//
// Three nonconformity scores are supported. LAC scores a label by one minus
// its probability. APS scores it by the cumulative probability of every label
// ranked at or above it. RAPS adds lambda * max(0, rank - k_reg) to the APS
// score. Ranks are one-based positions in ProbVector::order().

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "cpdefer/prob_vector.hpp"
#include "cpdefer/table.hpp"

namespace cpdefer {

enum class ScoreKind { LAC, APS, RAPS };

std::string_view to_string(ScoreKind kind);
ScoreKind parse_score_kind(std::string_view text);

struct RapsParams {
  int k_reg = 1;
  double lambda = 0.0;

  void validate(std::size_t num_classes) const;
  friend bool operator==(const RapsParams&, const RapsParams&) = default;
};

/// k_reg in {1, 2, 3, 5} x lambda in {0.001, 0.01, 0.1, 0.5}, dropping any
/// k_reg above num_classes.
std::vector<RapsParams> default_raps_grid(std::size_t num_classes);

struct ConformalThreshold {
  double tau = std::numeric_limits<double>::infinity();
  double alpha = 0.1;
  std::size_t n_cal = 0;
  ScoreKind kind = ScoreKind::LAC;
  std::size_t num_classes = 0;  // 0 when calibrated without a class count

  bool admits_all() const { return tau == std::numeric_limits<double>::infinity(); }
};

struct PredictionSet {
  std::vector<int> labels;  // ascending class index
  double alpha = 0.0;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  bool contains(int y) const;
};

double score_lac(const ProbVector& p, int y);
double score_aps(const ProbVector& p, int y);
double score_raps(const ProbVector& p, int y, const RapsParams& params);
double score(ScoreKind kind, const ProbVector& p, int y, const RapsParams* params);

/// Score of the label at each position of p.order(). The sequence is
/// non-decreasing for all three kinds, and entry i equals score(kind, p,
/// p.order()[i]) bit for bit.
std::vector<double> ranked_scores(ScoreKind kind, const ProbVector& p, const RapsParams* params);

/// Conformal rank k = ceil((n + 1)(1 - alpha)); values above n mean "admit all".
std::size_t conformal_rank(std::size_t n, double alpha);

/// Sorted calibration scores, reusable across many alpha values.
class CalibrationScores {
 public:
  CalibrationScores(std::vector<double> scores, ScoreKind kind, std::size_t num_classes = 0);

  ConformalThreshold threshold(double alpha) const;
  std::size_t size() const { return sorted_.size(); }
  ScoreKind kind() const { return kind_; }

 private:
  std::vector<double> sorted_;
  ScoreKind kind_;
  std::size_t num_classes_;
};

ConformalThreshold calibrate(std::span<const double> cal_scores, double alpha,
                             ScoreKind kind = ScoreKind::LAC, std::size_t num_classes = 0);

/// True-label scores of the given table rows.
std::vector<double> calibration_scores(const ProbabilityTable& table,
                                       std::span<const std::size_t> rows, ScoreKind kind,
                                       const RapsParams* params);

/// Number of leading labels of p.order() that enter the set. Sets are always
/// such a prefix: LAC admits every label with score <= tau (possibly none);
/// APS and RAPS additionally admit the first label whose score exceeds tau.
std::size_t set_size_from_ranked(std::span<const double> ranked, const ConformalThreshold& thr);

PredictionSet predict_set(const ProbVector& p, const ConformalThreshold& thr,
                          const RapsParams* params = nullptr);

/// Picks RAPS parameters on a tuning subset: calibrate on its first half,
/// measure coverage and mean set size on the second half, and keep the
/// smallest-set candidate that covers at least 1 - alpha (ties: smaller
/// lambda, then smaller k_reg). When no candidate covers, the best-covering
/// one wins under the same tie order.
RapsParams tune_raps(const ProbabilityTable& table, std::span<const std::size_t> tuning_rows,
                     double alpha, std::span<const RapsParams> grid);

}  // namespace cpdefer
