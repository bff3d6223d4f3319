#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cpdefer/conformal.hpp"
#include "cpdefer/rng.hpp"
#include "cpdefer/table.hpp"

namespace cpdefer {

/// C x C tally of (true label, predicted label) pairs; rows are truths.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t num_classes);

  std::size_t num_classes() const { return num_classes_; }
  std::int64_t count(int truth, int predicted) const {
    return counts_[index(truth, predicted)];
  }
  std::int64_t total() const { return total_; }
  std::int64_t trace() const;

  /// Adds delta to one cell; counts may never go negative.
  void add(int truth, int predicted, std::int64_t delta = 1);

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t index(int truth, int predicted) const {
    return static_cast<std::size_t>(truth) * num_classes_ + static_cast<std::size_t>(predicted);
  }

  std::size_t num_classes_ = 0;
  std::vector<std::int64_t> counts_;
  std::int64_t total_ = 0;
};

/// An exact accuracy ratio correct / total. Undefined when total is zero.
struct Evidence {
  std::int64_t correct = 0;
  std::int64_t total = 0;

  bool defined() const { return total > 0; }
  double value() const { return static_cast<double>(correct) / static_cast<double>(total); }
};

/// Exact comparison of two defined ratios.
int compare(const Evidence& a, const Evidence& b);

struct ExpertProfile {
  std::string expert_id;
  ConfusionMatrix confusion;
  double cost = 1.0;

  Evidence overall() const { return {confusion.trace(), confusion.total()}; }
  std::optional<double> overall_accuracy() const;
};

/// Tallies records against their truths, skipping any record on `exclude`.
ConfusionMatrix build_confusion(std::span<const ExpertRecord> records,
                                const std::unordered_map<std::string, int>& truths, std::size_t num_classes,
                                const std::optional<std::string>& exclude = std::nullopt);

/// Diagonal mass over the label_set x label_set sub-matrix: the accuracy of
/// the expert on records whose truth and prediction both lie in the set.
Evidence segregativity_evidence(const ConfusionMatrix& cm, std::span<const int> labels);
std::optional<double> segregativity(const ConfusionMatrix& cm, const PredictionSet& set);

enum class TieRule { Random, LeastCost };

std::string_view to_string(TieRule rule);
TieRule parse_tie_rule(std::string_view text);

/// Indices of the maximal defined entries of `scores` (ascending). When no
/// entry is defined, every index ties.
std::vector<std::size_t> argmax_group(std::span<const Evidence> scores);

/// Breaks a tie among candidate positions: uniformly through rng, or by the
/// lowest cost with earlier (lexicographically smaller) ids first.
std::size_t break_tie(std::span<const std::size_t> group, std::span<const double> costs, TieRule rule,
                      Rng& rng);

/// Picks the expert to defer to and returns its position in `profiles`.
///
/// An empty label set scores every expert by overall accuracy. Otherwise
/// experts are scored by segregativity over the set; experts without evidence
/// on the set are left out, and if none has any the overall accuracy is used.
std::size_t select_expert(std::span<const ExpertProfile> profiles, const PredictionSet& label_set,
                          TieRule tie_rule, Rng& rng);

}  // namespace cpdefer
