#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cpdefer/prob_vector.hpp"

namespace cpdefer {

/// Exported model outputs: one ground-truth label and probability vector per
/// sample. Rows are kept sorted by sample id so that the in-memory table does
/// not depend on input row order.
class ProbabilityTable {
 public:
  struct Row {
    std::string sample_id;
    int truth = 0;
    ProbVector probs;
  };

  ProbabilityTable() = default;
  ProbabilityTable(std::size_t num_classes, std::vector<Row> rows);

  std::size_t num_classes() const { return num_classes_; }
  std::size_t size() const { return rows_.size(); }
  const Row& operator[](std::size_t i) const { return rows_[i]; }
  std::span<const Row> rows() const { return rows_; }

  std::optional<std::size_t> find(const std::string& sample_id) const;
  std::unordered_map<std::string, int> truth_map() const;

 private:
  std::size_t num_classes_ = 0;
  std::vector<Row> rows_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ExpertRecord {
  std::string expert_id;
  std::string sample_id;
  int predicted_label = 0;

  friend bool operator==(const ExpertRecord&, const ExpertRecord&) = default;
};

/// The replayable expert pool: (expert, sample, label) triples validated
/// against a ProbabilityTable and indexed both ways.
///
/// Experts are numbered by ascending expert id; per-sample annotation lists
/// are sorted by that number.
class AnnotationStore {
 public:
  struct SampleAnnotation {
    std::size_t expert;
    int label;
  };
  struct ExpertAnnotation {
    std::size_t row;
    int label;
  };

  AnnotationStore() = default;
  AnnotationStore(std::vector<ExpertRecord> records, const ProbabilityTable& table);

  std::size_t num_experts() const { return expert_ids_.size(); }
  std::size_t num_rows() const { return by_row_.size(); }
  std::span<const ExpertRecord> records() const { return records_; }

  const std::string& expert_id(std::size_t e) const { return expert_ids_[e]; }
  std::optional<std::size_t> find_expert(const std::string& id) const;

  std::span<const SampleAnnotation> for_row(std::size_t row) const { return by_row_[row]; }
  std::span<const ExpertAnnotation> for_expert(std::size_t e) const { return by_expert_[e]; }
  std::optional<int> label_of(std::size_t e, std::size_t row) const;

  double cost(std::size_t e) const { return costs_[e]; }
  /// Unlisted experts keep cost 1.
  void set_costs(const std::map<std::string, double>& costs);

  /// A store restricted to the given experts (by index), costs preserved.
  AnnotationStore keep_experts(std::span<const std::size_t> experts,
                               const ProbabilityTable& table) const;

 private:
  std::vector<ExpertRecord> records_;
  std::vector<std::string> expert_ids_;
  std::unordered_map<std::string, std::size_t> expert_index_;
  std::vector<std::vector<SampleAnnotation>> by_row_;
  std::vector<std::vector<ExpertAnnotation>> by_expert_;
  std::vector<double> costs_;
};

/// Total map from fine labels 0..F-1 onto contiguous coarse labels 0..G-1.
struct ClassMapping {
  std::vector<int> coarse_of_fine;
  std::size_t num_coarse = 0;

  static ClassMapping from_pairs(const std::vector<std::pair<int, int>>& pairs);
  std::size_t num_fine() const { return coarse_of_fine.size(); }
};

}  // namespace cpdefer
