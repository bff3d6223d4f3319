#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cpdefer/evaluation.hpp"

namespace cpdefer {

/// Fixed-width text table: alpha_opt, accuracy (% mean +- sd) with
/// significance marks ('*' paired t, 'o' Wilcoxon), total queries, max
/// queries per expert, average queries per queried expert.
std::string format_summary_table(std::span<const StrategySummary> summaries);

struct PlotSeries {
  std::string name;
  std::vector<CurvePoint> points;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool bands = true;  // shade mean +- half_width
};

/// Standalone SVG line chart.
std::string svg_line_plot(const PlotSpec& spec, std::span<const PlotSeries> series);

/// report.txt plus accuracy and workload plots (one pair per score) in
/// out_dir. Returns the written paths.
std::vector<std::filesystem::path> write_report(std::span<const RunResult> rows, const std::filesystem::path& out_dir);

/// One summary row per (point, strategy) for an ablation sweep.
struct AblationRow {
  std::string point;  // the swept value as printed
  double x = 0.0;
  StrategySummary summary;
};

std::string format_ablation_csv(const std::string& point_column, std::span<const AblationRow> rows);

}  // namespace cpdefer
