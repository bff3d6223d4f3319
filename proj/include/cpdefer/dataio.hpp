#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpdefer/evaluation.hpp"
#include "cpdefer/table.hpp"

namespace cpdefer {

struct LoadDiagnostics {
  std::size_t renormalized_rows = 0;
};

/// Reads `sample_id,true_label,p_0,...,p_{C-1}`; C comes from the header.
ProbabilityTable load_probabilities(const std::filesystem::path& path, LoadDiagnostics* diag = nullptr);

/// Reads `expert_id,sample_id,predicted_label`, checked against `table`. An
/// empty file (or a header with no rows) yields an empty store.
AnnotationStore load_annotations(const std::filesystem::path& path, const ProbabilityTable& table);

/// Reads `fine_label,coarse_label`.
ClassMapping load_class_mapping(const std::filesystem::path& path);

/// Reads `expert_id,cost`.
std::map<std::string, double> load_costs(const std::filesystem::path& path);

/// One class name per line, line i naming class i.
std::vector<std::string> load_label_names(const std::filesystem::path& path);

/// Sums fine probabilities into coarse classes (ascending fine index) and
/// renormalizes; truths go through the same map.
ProbabilityTable aggregate_superclasses(const ProbabilityTable& table, const ClassMapping& mapping);

void write_probabilities(const ProbabilityTable& table, const std::filesystem::path& path);
void write_annotations(const AnnotationStore& store, const std::filesystem::path& path);

inline constexpr const char* kResultsHeader = "split,score,strategy,alpha,accuracy,n_queries,max_qpe,avg_qpe";

/// results.csv text for rows in the given order.
std::string format_results(std::span<const RunResult> rows);
std::vector<RunResult> load_results(const std::filesystem::path& path);

nlohmann::json summary_json(std::span<const StrategySummary> summaries);

struct ResultPaths {
  std::filesystem::path results_csv;
  std::filesystem::path summary_json;
};

/// Writes results.csv (rows sorted by sort_results) and summary.json into
/// out_dir, creating it if needed. `meta` is stored under "run".
ResultPaths write_results(std::vector<RunResult> rows, std::span<const StrategySummary> summaries,
                          const std::filesystem::path& out_dir, const nlohmann::json& meta = nlohmann::json::object());

/// Parses a JSON object file.
nlohmann::json load_json(const std::filesystem::path& path);

/// Writes `text` to `path`, throwing ReplayError when the file cannot be written.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace cpdefer
