#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cpdefer/conformal.hpp"
#include "cpdefer/experts.hpp"
#include "cpdefer/policy.hpp"
#include "cpdefer/table.hpp"

namespace cpdefer {

// ---------------------------------------------------------------------------
// Splits and the alpha grid

struct SplitSpec {
  std::uint64_t seed = 0;
  std::size_t cal_size = 1000;
  std::size_t split_index = 0;

  /// The split parameters for split `index` of an experiment seeded with `master_seed`.
  static SplitSpec derive(std::uint64_t master_seed, std::size_t cal_size, std::size_t index);
};

struct Split {
  std::vector<std::size_t> cal;   // ascending row indices
  std::vector<std::size_t> test;  // ascending row indices
};

/// Stratified calibration/test partition. Classes get cal_size * n_c / N
/// slots with largest-remainder rounding (ties toward lower classes); each
/// class then contributes a seeded uniform draw of its rows.
Split stratified_split(const ProbabilityTable& table, const SplitSpec& spec);

/// 0.001, 0.002, ... up to round(1 - model_accuracy, 3), then every 0.01 above
/// that up to 0.99.
std::vector<double> alpha_grid(double model_accuracy);

/// Top-label accuracy of the model over the table.
double model_accuracy(const ProbabilityTable& table);

// ---------------------------------------------------------------------------
// Results

struct RunResult {
  Strategy strategy = Strategy::ModelOnly;
  ScoreKind score = ScoreKind::APS;
  double alpha = 0.0;
  std::size_t split_index = 0;
  double accuracy = 0.0;
  std::int64_t n_queries = 0;
  std::int64_t max_qpe = 0;
  std::optional<double> avg_qpe;  // absent when nothing was queried

  friend bool operator==(const RunResult&, const RunResult&) = default;
};

struct Workload {
  std::int64_t n_queries = 0;
  std::int64_t max_qpe = 0;
  std::optional<double> avg_qpe;
};

Workload workload_metrics(std::span<const Outcome> outcomes);
/// Same tally from per-expert query counts.
Workload workload_from_counts(std::span<const std::int64_t> queries_per_expert);

/// Orders rows by (score, strategy, alpha, split).
void sort_results(std::vector<RunResult>& rows);

/// Alpha with the highest accuracy averaged over splits; ties go to the
/// smallest alpha. All rows must belong to one strategy.
double select_alpha_opt(std::span<const RunResult> results);

// ---------------------------------------------------------------------------
// Significance

enum class PairedTest { PairedT, Wilcoxon };

struct SignificanceVerdict {
  PairedTest test_used = PairedTest::PairedT;
  double p_value = 1.0;
  int stars = 0;
  bool complementarity = false;
  Strategy baseline = Strategy::BestExpert;  // the stronger baseline by mean
};

std::string_view to_string(PairedTest t);

/// 0-4 stars for p below 0.05, 0.01, 0.001, 0.0001 (strict).
int significance_stars(double p);

/// One-tailed method-vs-baseline test on per-split accuracies: paired t when
/// Shapiro-Wilk (at 0.05) keeps normality of the differences, Wilcoxon
/// otherwise.
SignificanceVerdict one_sided_test(std::span<const double> method, std::span<const double> baseline);

/// Tests against the stronger of the two baselines (by mean accuracy) and
/// flags complementarity when the method beats both at p < 0.05.
SignificanceVerdict complementarity_test(std::span<const double> method_accs,
                                         std::span<const double> best_expert_accs,
                                         std::span<const double> model_accs);

// ---------------------------------------------------------------------------
// Replay

/// How expert profiles are estimated for selection. Leave-one-out uses every
/// annotation except the one on the current sample; shots restricts each
/// expert to n sampled records per true label (re-drawn per split), still
/// excluding the current sample.
struct Knowledge {
  std::optional<int> shots;

  static Knowledge leave_one_out() { return {}; }
  static Knowledge n_shots(int n) { return {n}; }
  static Knowledge parse(std::string_view text);
  std::string to_string() const;
};

struct ExperimentConfig {
  ScoreKind score = ScoreKind::APS;
  std::vector<Strategy> strategies{kAllStrategies.begin(), kAllStrategies.end()};
  std::vector<double> alphas;  // empty: alpha_grid(model accuracy of the table)
  TieRule tie_rule = TieRule::Random;
  Knowledge knowledge;
  std::uint64_t seed = 0;
  std::size_t cal_size = 1000;
  std::size_t splits = 20;
  std::vector<RapsParams> raps_grid;  // empty: default_raps_grid(C)
  double raps_tune_alpha = 0.1;
  double raps_tune_fraction = 0.2;
  int jobs = 0;  // 0: OpenMP default
};

struct Dataset {
  const ProbabilityTable& table;
  const AnnotationStore& store;
};

struct SplitRun {
  std::vector<RunResult> rows;
  std::optional<RapsParams> raps;
  std::size_t short_shot_cells = 0;  // (expert, label) cells with fewer records than requested shots
};

/// The alphas a config sweeps over this table.
std::vector<double> resolve_alphas(const ExperimentConfig& cfg, const ProbabilityTable& table);

/// One calibration/test split, every (strategy, alpha) pair. Per-sample
/// preparation and the (alpha, strategy) tasks run as OpenMP loops; each task
/// draws from its own stream derived from (seed, split, alpha index, strategy),
/// so results do not depend on the thread count.
SplitRun run_split(const Dataset& data, const ExperimentConfig& cfg, const SplitSpec& split,
                   std::span<const double> alphas);

/// Serial reference for run_split: rebuilds leave-one-out profiles per sample
/// and calls decide/resolve for every input. Must match run_split exactly.
SplitRun run_split_reference(const Dataset& data, const ExperimentConfig& cfg, const SplitSpec& split,
                             std::span<const double> alphas);

struct ExperimentRun {
  std::vector<double> alphas;
  std::vector<RunResult> rows;  // sorted by sort_results
  std::vector<std::optional<RapsParams>> raps_per_split;
  std::size_t short_shot_cells = 0;
};

ExperimentRun run_experiment(const Dataset& data, const ExperimentConfig& cfg);

/// Per-expert record indices into store.for_expert(e) used for n-shot profiles.
std::vector<std::vector<std::size_t>> sample_shots(const AnnotationStore& store, const ProbabilityTable& table,
                                                   int shots, std::uint64_t seed, std::size_t* short_cells = nullptr);

// ---------------------------------------------------------------------------
// Summaries

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
};

MeanSd mean_sd(std::span<const double> values);

struct StrategySummary {
  ScoreKind score = ScoreKind::APS;
  Strategy strategy = Strategy::ModelOnly;
  std::optional<double> alpha_opt;  // absent for alpha-free strategies
  std::size_t n_splits = 0;
  MeanSd accuracy;
  MeanSd n_queries;
  MeanSd max_qpe;
  std::optional<MeanSd> avg_qpe;
  std::vector<double> split_accuracies;  // at alpha_opt, by split index
  std::optional<SignificanceVerdict> significance;
};

/// Per (score, strategy) summaries at alpha_opt, with significance for the
/// prediction-set strategies when both BestExpert and ModelOnly rows exist.
std::vector<StrategySummary> summarize(std::span<const RunResult> rows);

/// Mean, standard deviation and 95% half-width (1.96 sd / sqrt(n)) of a metric
/// over splits at every alpha, for one (score, strategy).
struct CurvePoint {
  double alpha;
  double mean;
  double half_width;
};
enum class Metric { Accuracy, Queries, MaxQpe, AvgQpe };
std::vector<CurvePoint> metric_curve(std::span<const RunResult> rows, ScoreKind score, Strategy strategy,
                                     Metric metric);

// ---------------------------------------------------------------------------
// Ablations

/// 1.0, 1 - step, 1 - 2 step, ... down to the last positive value.
std::vector<double> expert_fraction_grid(double step = 0.05);

/// Experts (indices) in the bottom ceil(f * K) by overall accuracy on all
/// records; ties broken by expert id.
std::vector<std::size_t> bottom_experts(const AnnotationStore& store, const ProbabilityTable& table,
                                        double f_kept);

struct FractionPoint {
  double f_kept = 1.0;
  std::size_t experts_kept = 0;
  ExperimentRun run;
};

/// Runs the experiment for each f_kept in order, stopping before the first
/// fraction that leaves some sample without annotators.
std::vector<FractionPoint> ablate_expert_fraction(const Dataset& data, const ExperimentConfig& cfg,
                                                  std::span<const double> fractions);

struct ShotsPoint {
  int n_shots = 0;
  ExperimentRun run;
};

/// Runs the experiment once per shot count. Only selection uses the n-shot
/// profiles; BestExpert keeps full leave-one-out knowledge and every
/// resolution replays the full store.
std::vector<ShotsPoint> ablate_shots(const Dataset& data, const ExperimentConfig& cfg, std::span<const int> shots);

}  // namespace cpdefer
