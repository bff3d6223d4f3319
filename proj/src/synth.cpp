#include "cpdefer/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <fmt/format.h>

#include "cpdefer/error.hpp"
#include "cpdefer/rng.hpp"

namespace cpdefer {

ExpertSpec ExpertSpec::generalist(double accuracy, double coverage) {
  ExpertSpec s;
  s.kind = Kind::Generalist;
  s.accuracy = accuracy;
  s.coverage = coverage;
  return s;
}

ExpertSpec ExpertSpec::specialist(std::vector<int> block, double inside, double outside, double coverage) {
  ExpertSpec s;
  s.kind = Kind::Specialist;
  s.block = std::move(block);
  s.inside_accuracy = inside;
  s.outside_accuracy = outside;
  s.coverage = coverage;
  return s;
}

double ExpertSpec::accuracy_on(int y) const {
  if (kind == Kind::Generalist) return accuracy;
  return std::find(block.begin(), block.end(), y) != block.end() ? inside_accuracy : outside_accuracy;
}

namespace {

bool unit(double x) { return x >= 0.0 && x <= 1.0; }

void check_labels(const std::vector<int>& labels, std::size_t c, const char* what) {
  std::set<int> seen;
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= c) throw ValidationError(fmt::format("{} label {} outside [0, {})", what, y, c));
    if (!seen.insert(y).second) throw ValidationError(fmt::format("{} repeats label {}", what, y));
  }
}

}  // namespace

void SynthConfig::validate() const {
  if (num_classes < 2) throw ValidationError("synthetic data needs at least 2 classes");
  if (num_samples < num_classes) {
    throw ValidationError(fmt::format("num_samples {} is below num_classes {}", num_samples, num_classes));
  }
  const double chance = 1.0 / static_cast<double>(num_classes);
  if (!(model_target_accuracy > chance && model_target_accuracy <= 1.0)) {
    throw ValidationError(fmt::format("model_target_accuracy {} outside (1/C, 1]", model_target_accuracy));
  }
  if (!(confusion_sharpness > 0.0 && std::isfinite(confusion_sharpness))) {
    throw ValidationError("confusion_sharpness must be positive");
  }
  std::set<int> used;
  for (const auto& b : confusion_blocks) {
    if (b.size() < 2) throw ValidationError("confusion blocks need at least 2 labels");
    check_labels(b, num_classes, "confusion block");
    for (int y : b) {
      if (!used.insert(y).second) throw ValidationError(fmt::format("label {} is in two confusion blocks", y));
    }
  }
  for (const auto& e : experts) {
    if (!(e.coverage > 0.0 && e.coverage <= 1.0)) throw ValidationError(fmt::format("coverage {} outside (0, 1]", e.coverage));
    if (!(e.cost >= 0.0 && std::isfinite(e.cost))) throw ValidationError("expert cost must be finite and >= 0");
    if (e.kind == ExpertSpec::Kind::Generalist) {
      if (!unit(e.accuracy)) throw ValidationError(fmt::format("accuracy {} outside [0, 1]", e.accuracy));
    } else {
      if (e.block.empty()) throw ValidationError("specialist block must not be empty");
      check_labels(e.block, num_classes, "specialist block");
      if (!unit(e.inside_accuracy) || !unit(e.outside_accuracy)) {
        throw ValidationError("specialist accuracies must lie in [0, 1]");
      }
    }
  }
}

namespace {

double uniform_between(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform_unit(rng); }

}  // namespace

SynthDataset gen_dataset(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t c = cfg.num_classes;
  const double acc = std::min(cfg.model_target_accuracy, 1.0 - 1e-9);
  // Easy samples are always right; hard ones are right with probability q.
  const double hard_fraction = acc >= 0.5 ? 2.0 * (1.0 - acc) : 1.0;
  const double hard_correct = acc >= 0.5 ? 0.5 : acc;

  std::vector<int> block_of(c, -1);
  for (std::size_t b = 0; b < cfg.confusion_blocks.size(); ++b) {
    for (int y : cfg.confusion_blocks[b]) block_of[static_cast<std::size_t>(y)] = static_cast<int>(b);
  }

  Rng rng(cfg.seed);
  std::gamma_distribution<double> gamma(cfg.confusion_sharpness, 1.0);
  std::vector<ProbabilityTable::Row> rows;
  std::vector<ExpertRecord> records;
  std::vector<std::string> expert_ids;
  for (std::size_t e = 0; e < cfg.experts.size(); ++e) expert_ids.push_back(fmt::format("e{:02d}", e));

  for (std::size_t i = 0; i < cfg.num_samples; ++i) {
    const int y = static_cast<int>(uniform_index(rng, c));
    const bool hard = uniform_unit(rng) < hard_fraction;
    const bool correct = !hard || uniform_unit(rng) < hard_correct;

    int confuser;
    if (block_of[static_cast<std::size_t>(y)] >= 0) {
      const auto& block = cfg.confusion_blocks[static_cast<std::size_t>(block_of[static_cast<std::size_t>(y)])];
      const std::size_t pos = static_cast<std::size_t>(std::find(block.begin(), block.end(), y) - block.begin());
      std::size_t pick = uniform_index(rng, block.size() - 1);
      if (pick >= pos) ++pick;
      confuser = block[pick];
    } else {
      auto pick = static_cast<int>(uniform_index(rng, c - 1));
      confuser = pick >= y ? pick + 1 : pick;
    }
    const int top_label = correct ? y : confuser;
    const int second_label = correct ? confuser : y;

    const double top = hard ? uniform_between(rng, c == 2 ? 0.5 : 0.4, 0.6) : uniform_between(rng, 0.7, 1.0);
    const double rest_total = 1.0 - top;
    const double share = hard ? uniform_between(rng, 0.6, 0.95) : uniform_between(rng, 0.5, 0.9);
    double second = c == 2 ? rest_total : std::min(share * rest_total, top * 0.999);
    const double spread = rest_total - second;

    std::vector<double> p(c, 0.0);
    p[static_cast<std::size_t>(top_label)] = top;
    p[static_cast<std::size_t>(second_label)] = second;
    if (c > 2) {
      std::vector<double> g(c - 2);
      double sum = 0.0;
      for (double& v : g) sum += (v = gamma(rng));
      std::size_t j = 0;
      for (std::size_t k = 0; k < c; ++k) {
        if (static_cast<int>(k) == top_label || static_cast<int>(k) == second_label) continue;
        p[k] = sum > 0.0 ? spread * g[j] / sum : spread / static_cast<double>(c - 2);
        ++j;
      }
    }
    const std::string sample_id = fmt::format("s{:06d}", i);
    bool rescaled = false;
    rows.push_back({sample_id, y, ProbVector::normalized(std::move(p), rescaled)});

    if (cfg.experts.empty()) continue;
    std::vector<bool> covered(cfg.experts.size());
    bool any = false;
    while (!any) {
      for (std::size_t e = 0; e < cfg.experts.size(); ++e) {
        covered[e] = cfg.experts[e].coverage >= 1.0 || uniform_unit(rng) < cfg.experts[e].coverage;
        any = any || covered[e];
      }
    }
    for (std::size_t e = 0; e < cfg.experts.size(); ++e) {
      if (!covered[e]) continue;
      int label = y;
      if (uniform_unit(rng) >= cfg.experts[e].accuracy_on(y)) {
        const auto pick = static_cast<int>(uniform_index(rng, c - 1));
        label = pick >= y ? pick + 1 : pick;
      }
      records.push_back({expert_ids[e], sample_id, label});
    }
  }

  SynthDataset out{ProbabilityTable(c, std::move(rows)), {}};
  out.store = AnnotationStore(std::move(records), out.table);
  std::map<std::string, double> costs;
  for (std::size_t e = 0; e < cfg.experts.size(); ++e) costs[expert_ids[e]] = cfg.experts[e].cost;
  out.store.set_costs(costs);
  return out;
}

double theoretical_expert_accuracy(const ExpertSpec& spec, std::size_t num_classes) {
  if (spec.kind == ExpertSpec::Kind::Generalist) return spec.accuracy;
  const auto inside = static_cast<double>(spec.block.size());
  return (inside * spec.inside_accuracy + (static_cast<double>(num_classes) - inside) * spec.outside_accuracy) /
         static_cast<double>(num_classes);
}

SynthConfig canonical_scenario(std::uint64_t seed) {
  SynthConfig cfg;
  cfg.num_classes = 10;
  cfg.num_samples = 3000;
  cfg.model_target_accuracy = 0.9;
  cfg.confusion_blocks = {{0, 1, 2}, {3, 4, 5}, {6, 7, 8}};
  cfg.experts.push_back(ExpertSpec::generalist(0.95));
  for (const auto& block : cfg.confusion_blocks) cfg.experts.push_back(ExpertSpec::specialist(block, 0.99, 0.3));
  cfg.seed = seed;
  return cfg;
}

SynthConfig ablation_scenario(std::uint64_t seed) {
  SynthConfig cfg;
  cfg.num_classes = 10;
  cfg.num_samples = 3000;
  cfg.model_target_accuracy = 0.9;
  cfg.confusion_blocks = {{0, 1, 2}, {3, 4, 5}, {6, 7, 8}};
  for (int i = 0; i < 12; ++i) cfg.experts.push_back(ExpertSpec::generalist(0.60 + 0.0336 * i));
  cfg.seed = seed;
  return cfg;
}

namespace {

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace

SynthConfig synth_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> kKeys = {"num_classes",         "num_samples",      "model_target_accuracy",
                                              "confusion_sharpness", "confusion_blocks", "experts",
                                              "seed"};
  static const std::set<std::string> kExpertKeys = {"kind",    "accuracy", "block", "inside_accuracy",
                                                    "outside_accuracy", "coverage", "cost",  "count"};
  try {
    if (!j.is_object()) throw ValidationError("synthetic config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
      if (!kKeys.count(key)) throw ValidationError(fmt::format("unknown synthetic config key '{}'", key));
    }
    SynthConfig cfg;
    cfg.num_classes = get_or<std::size_t>(j, "num_classes", cfg.num_classes);
    cfg.num_samples = get_or<std::size_t>(j, "num_samples", cfg.num_samples);
    cfg.model_target_accuracy = get_or<double>(j, "model_target_accuracy", cfg.model_target_accuracy);
    cfg.confusion_sharpness = get_or<double>(j, "confusion_sharpness", cfg.confusion_sharpness);
    cfg.confusion_blocks = get_or<std::vector<std::vector<int>>>(j, "confusion_blocks", {});
    cfg.seed = get_or<std::uint64_t>(j, "seed", 0);
    for (const auto& e : get_or<nlohmann::json>(j, "experts", nlohmann::json::array())) {
      for (const auto& [key, value] : e.items()) {
        if (!kExpertKeys.count(key)) throw ValidationError(fmt::format("unknown expert key '{}'", key));
      }
      const auto kind = e.at("kind").get<std::string>();
      ExpertSpec spec;
      if (kind == "generalist") {
        spec = ExpertSpec::generalist(e.at("accuracy").get<double>());
      } else if (kind == "specialist") {
        spec = ExpertSpec::specialist(e.at("block").get<std::vector<int>>(), e.at("inside_accuracy").get<double>(),
                                      e.at("outside_accuracy").get<double>());
      } else {
        throw ValidationError(fmt::format("unknown expert kind '{}' (expected generalist or specialist)", kind));
      }
      spec.coverage = get_or<double>(e, "coverage", 1.0);
      spec.cost = get_or<double>(e, "cost", 1.0);
      const int count = get_or<int>(e, "count", 1);
      if (count < 1) throw ValidationError("expert count must be at least 1");
      for (int i = 0; i < count; ++i) cfg.experts.push_back(spec);
    }
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("malformed synthetic config: {}", e.what()));
  }
}

nlohmann::json to_json(const SynthConfig& cfg) {
  nlohmann::json experts = nlohmann::json::array();
  for (const auto& e : cfg.experts) {
    nlohmann::json x;
    if (e.kind == ExpertSpec::Kind::Generalist) {
      x["kind"] = "generalist";
      x["accuracy"] = e.accuracy;
    } else {
      x["kind"] = "specialist";
      x["block"] = e.block;
      x["inside_accuracy"] = e.inside_accuracy;
      x["outside_accuracy"] = e.outside_accuracy;
    }
    x["coverage"] = e.coverage;
    x["cost"] = e.cost;
    experts.push_back(std::move(x));
  }
  return {{"num_classes", cfg.num_classes},
          {"num_samples", cfg.num_samples},
          {"model_target_accuracy", cfg.model_target_accuracy},
          {"confusion_sharpness", cfg.confusion_sharpness},
          {"confusion_blocks", cfg.confusion_blocks},
          {"seed", cfg.seed},
          {"experts", std::move(experts)}};
}

}  // namespace cpdefer
