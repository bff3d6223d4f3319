#include "cpdefer/experts.hpp"

#include <fmt/format.h>

#include "cpdefer/error.hpp"

namespace cpdefer {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes)
    : num_classes_(num_classes), counts_(num_classes * num_classes, 0) {
  if (num_classes < 2) throw ValidationError("a confusion matrix needs at least 2 classes");
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t t = 0;
  for (std::size_t i = 0; i < num_classes_; ++i) t += counts_[i * num_classes_ + i];
  return t;
}

void ConfusionMatrix::add(int truth, int predicted, std::int64_t delta) {
  const auto c = static_cast<int>(num_classes_);
  if (truth < 0 || truth >= c || predicted < 0 || predicted >= c) {
    throw ValidationError(fmt::format("confusion cell ({}, {}) outside a {}-class matrix", truth, predicted, c));
  }
  std::int64_t& cell = counts_[index(truth, predicted)];
  if (cell + delta < 0) throw ValidationError("confusion count would become negative");
  cell += delta;
  total_ += delta;
}

int compare(const Evidence& a, const Evidence& b) {
  // Counts stay far below 2^31, so the cross products fit in 64 bits.
  const std::int64_t lhs = a.correct * b.total;
  const std::int64_t rhs = b.correct * a.total;
  return lhs < rhs ? -1 : (lhs > rhs ? 1 : 0);
}

std::optional<double> ExpertProfile::overall_accuracy() const {
  const Evidence e = overall();
  if (!e.defined()) return std::nullopt;
  return e.value();
}

ConfusionMatrix build_confusion(std::span<const ExpertRecord> records,
                                const std::unordered_map<std::string, int>& truths, std::size_t num_classes,
                                const std::optional<std::string>& exclude) {
  ConfusionMatrix cm(num_classes);
  for (const ExpertRecord& r : records) {
    if (exclude && r.sample_id == *exclude) continue;
    auto it = truths.find(r.sample_id);
    if (it == truths.end()) {
      throw ValidationError(fmt::format("no ground truth for sample '{}' (expert '{}')", r.sample_id, r.expert_id));
    }
    cm.add(it->second, r.predicted_label);
  }
  return cm;
}

Evidence segregativity_evidence(const ConfusionMatrix& cm, std::span<const int> labels) {
  Evidence e;
  for (int i : labels) {
    e.correct += cm.count(i, i);
    for (int j : labels) e.total += cm.count(i, j);
  }
  return e;
}

std::optional<double> segregativity(const ConfusionMatrix& cm, const PredictionSet& set) {
  for (int y : set.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= cm.num_classes()) {
      throw ValidationError(fmt::format("label {} outside [0, {})", y, cm.num_classes()));
    }
  }
  const Evidence e = segregativity_evidence(cm, set.labels);
  if (!e.defined()) return std::nullopt;
  return e.value();
}

std::string_view to_string(TieRule rule) {
  return rule == TieRule::Random ? "random" : "cost";
}

TieRule parse_tie_rule(std::string_view text) {
  if (text == "random") return TieRule::Random;
  if (text == "cost" || text == "least-cost") return TieRule::LeastCost;
  throw ValidationError(fmt::format("unknown tie rule '{}' (expected random or cost)", text));
}

std::vector<std::size_t> argmax_group(std::span<const Evidence> scores) {
  std::vector<std::size_t> group;
  const Evidence* best = nullptr;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!scores[i].defined()) continue;
    const int c = best ? compare(scores[i], *best) : 1;
    if (c > 0) {
      best = &scores[i];
      group.assign(1, i);
    } else if (c == 0) {
      group.push_back(i);
    }
  }
  if (!best) {
    group.resize(scores.size());
    for (std::size_t i = 0; i < group.size(); ++i) group[i] = i;
  }
  return group;
}

std::size_t break_tie(std::span<const std::size_t> group, std::span<const double> costs, TieRule rule,
                      Rng& rng) {
  if (group.empty()) throw ValidationError("cannot break a tie among zero candidates");
  if (rule == TieRule::Random) return group[uniform_index(rng, group.size())];
  std::size_t best = group.front();
  for (std::size_t g : group) {
    if (costs[g] < costs[best]) best = g;
  }
  return best;
}

std::size_t select_expert(std::span<const ExpertProfile> profiles, const PredictionSet& label_set,
                          TieRule tie_rule, Rng& rng) {
  if (profiles.empty()) throw ValidationError("cannot select an expert from an empty pool");
  std::vector<Evidence> scores(profiles.size());
  bool any_defined = false;
  if (!label_set.empty()) {
    for (std::size_t i = 0; i < profiles.size(); ++i) {
      scores[i] = segregativity_evidence(profiles[i].confusion, label_set.labels);
      any_defined = any_defined || scores[i].defined();
    }
  }
  if (!any_defined) {
    for (std::size_t i = 0; i < profiles.size(); ++i) scores[i] = profiles[i].overall();
  }
  const auto group = argmax_group(scores);

  std::vector<double> costs(profiles.size());
  for (std::size_t i = 0; i < profiles.size(); ++i) costs[i] = profiles[i].cost;
  if (tie_rule == TieRule::LeastCost) {
    // Lexicographic id order among equal costs, independent of list order.
    std::size_t best = group.front();
    for (std::size_t g : group) {
      if (costs[g] < costs[best] || (costs[g] == costs[best] && profiles[g].expert_id < profiles[best].expert_id)) {
        best = g;
      }
    }
    return best;
  }
  return break_tie(group, costs, tie_rule, rng);
}

}  // namespace cpdefer
