#include "cpdefer/table.hpp"

#include <algorithm>
#include <set>
#include <tuple>

#include <fmt/format.h>

#include "cpdefer/error.hpp"

namespace cpdefer {

ProbabilityTable::ProbabilityTable(std::size_t num_classes, std::vector<Row> rows)
    : num_classes_(num_classes), rows_(std::move(rows)) {
  if (num_classes_ < 2) throw ValidationError("a probability table needs at least 2 classes");
  std::sort(rows_.begin(), rows_.end(),
            [](const Row& a, const Row& b) { return a.sample_id < b.sample_id; });
  index_.reserve(rows_.size());
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    const Row& r = rows_[i];
    if (r.probs.size() != num_classes_) {
      throw ValidationError(fmt::format("sample '{}' has {} probabilities, expected {}", r.sample_id,
                                        r.probs.size(), num_classes_));
    }
    if (r.truth < 0 || static_cast<std::size_t>(r.truth) >= num_classes_) {
      throw ValidationError(fmt::format("sample '{}' has true label {} outside [0, {})", r.sample_id,
                                        r.truth, num_classes_));
    }
    if (!index_.emplace(r.sample_id, i).second) {
      throw ValidationError(fmt::format("duplicate sample_id '{}'", r.sample_id));
    }
  }
}

std::optional<std::size_t> ProbabilityTable::find(const std::string& sample_id) const {
  auto it = index_.find(sample_id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::unordered_map<std::string, int> ProbabilityTable::truth_map() const {
  std::unordered_map<std::string, int> out;
  out.reserve(rows_.size());
  for (const Row& r : rows_) out.emplace(r.sample_id, r.truth);
  return out;
}

AnnotationStore::AnnotationStore(std::vector<ExpertRecord> records, const ProbabilityTable& table)
    : records_(std::move(records)) {
  std::sort(records_.begin(), records_.end(), [](const ExpertRecord& a, const ExpertRecord& b) {
    return std::tie(a.expert_id, a.sample_id) < std::tie(b.expert_id, b.sample_id);
  });
  for (std::size_t i = 1; i < records_.size(); ++i) {
    if (records_[i].expert_id == records_[i - 1].expert_id &&
        records_[i].sample_id == records_[i - 1].sample_id) {
      throw ValidationError(fmt::format("duplicate annotation by expert '{}' on sample '{}'",
                                        records_[i].expert_id, records_[i].sample_id));
    }
  }
  by_row_.assign(table.size(), {});
  for (const ExpertRecord& r : records_) {
    auto row = table.find(r.sample_id);
    if (!row) {
      throw ValidationError(fmt::format("annotation by expert '{}' references unknown sample '{}'",
                                        r.expert_id, r.sample_id));
    }
    if (r.predicted_label < 0 || static_cast<std::size_t>(r.predicted_label) >= table.num_classes()) {
      throw ValidationError(fmt::format("expert '{}' label {} on sample '{}' is outside [0, {})", r.expert_id,
                                        r.predicted_label, r.sample_id, table.num_classes()));
    }
    if (expert_ids_.empty() || expert_ids_.back() != r.expert_id) {
      expert_index_.emplace(r.expert_id, expert_ids_.size());
      expert_ids_.push_back(r.expert_id);
      by_expert_.emplace_back();
    }
    const std::size_t e = expert_ids_.size() - 1;
    by_expert_[e].push_back({*row, r.predicted_label});
    by_row_[*row].push_back({e, r.predicted_label});
  }
  // Records are sorted by expert first, so per-row lists are already ordered
  // by expert index; per-expert lists need row order.
  for (auto& list : by_expert_) {
    std::sort(list.begin(), list.end(),
              [](const ExpertAnnotation& a, const ExpertAnnotation& b) { return a.row < b.row; });
  }
  costs_.assign(expert_ids_.size(), 1.0);
}

std::optional<std::size_t> AnnotationStore::find_expert(const std::string& id) const {
  auto it = expert_index_.find(id);
  if (it == expert_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<int> AnnotationStore::label_of(std::size_t e, std::size_t row) const {
  for (const SampleAnnotation& a : by_row_[row]) {
    if (a.expert == e) return a.label;
  }
  return std::nullopt;
}

void AnnotationStore::set_costs(const std::map<std::string, double>& costs) {
  for (const auto& [id, cost] : costs) {
    if (!(cost >= 0.0)) throw ValidationError(fmt::format("expert '{}' has invalid cost {}", id, cost));
    if (auto e = find_expert(id)) costs_[*e] = cost;
  }
}

AnnotationStore AnnotationStore::keep_experts(std::span<const std::size_t> experts,
                                              const ProbabilityTable& table) const {
  std::set<std::size_t> keep(experts.begin(), experts.end());
  std::vector<ExpertRecord> kept;
  std::map<std::string, double> costs;
  for (std::size_t e : keep) {
    if (e >= num_experts()) throw ValidationError(fmt::format("expert index {} out of range", e));
    costs.emplace(expert_ids_[e], costs_[e]);
  }
  for (const ExpertRecord& r : records_) {
    if (keep.count(expert_index_.at(r.expert_id))) kept.push_back(r);
  }
  AnnotationStore out(std::move(kept), table);
  out.set_costs(costs);
  return out;
}

ClassMapping ClassMapping::from_pairs(const std::vector<std::pair<int, int>>& pairs) {
  ClassMapping m;
  m.coarse_of_fine.assign(pairs.size(), -1);
  int max_coarse = -1;
  for (const auto& [fine, coarse] : pairs) {
    if (fine < 0 || static_cast<std::size_t>(fine) >= pairs.size()) {
      throw ValidationError(fmt::format("fine label {} outside [0, {})", fine, pairs.size()));
    }
    if (coarse < 0) throw ValidationError(fmt::format("coarse label {} is negative", coarse));
    if (m.coarse_of_fine[static_cast<std::size_t>(fine)] != -1) {
      throw ValidationError(fmt::format("fine label {} mapped twice", fine));
    }
    m.coarse_of_fine[static_cast<std::size_t>(fine)] = coarse;
    max_coarse = std::max(max_coarse, coarse);
  }
  std::vector<bool> seen(static_cast<std::size_t>(max_coarse + 1), false);
  for (int c : m.coarse_of_fine) seen[static_cast<std::size_t>(c)] = true;
  for (std::size_t c = 0; c < seen.size(); ++c) {
    if (!seen[c]) throw ValidationError(fmt::format("coarse labels are not contiguous: {} is unused", c));
  }
  m.num_coarse = seen.size();
  return m;
}

}  // namespace cpdefer
