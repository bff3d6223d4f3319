#include "cpdefer/report.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include <fmt/format.h>

#include "cpdefer/dataio.hpp"

namespace cpdefer {

namespace {

std::string marks(const StrategySummary& s) {
  if (!s.significance || s.significance->stars == 0) return "";
  const char mark = s.significance->test_used == PairedTest::PairedT ? '*' : 'o';
  return std::string(static_cast<std::size_t>(s.significance->stars), mark);
}

std::string pm(const MeanSd& m, int digits) { return fmt::format("{:.{}f} +- {:.{}f}", m.mean, digits, m.sd, digits); }

}  // namespace

std::string format_summary_table(std::span<const StrategySummary> summaries) {
  std::vector<std::array<std::string, 7>> cells;
  cells.push_back({"score", "strategy", "alpha_opt", "accuracy (%)", "queries", "max/expert", "avg/expert"});
  for (const StrategySummary& s : summaries) {
    const bool queries = s.strategy != Strategy::ModelOnly;
    const MeanSd pct{s.accuracy.mean * 100.0, s.accuracy.sd * 100.0};
    cells.push_back({std::string(to_string(s.score)), std::string(to_string(s.strategy)),
                     s.alpha_opt ? fmt::format("{}", *s.alpha_opt) : "-", pm(pct, 2) + marks(s),
                     queries ? pm(s.n_queries, 0) : "-", queries ? pm(s.max_qpe, 2) : "-",
                     s.avg_qpe ? pm(*s.avg_qpe, 2) : "-"});
  }
  std::array<std::size_t, 7> width{};
  for (const auto& row : cells) {
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::string out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t i = 0; i < cells[r].size(); ++i) {
      out += fmt::format("{:<{}}", cells[r][i], width[i]);
      out += i + 1 < cells[r].size() ? "  " : "\n";
    }
    if (r == 0) {
      for (std::size_t i = 0; i < width.size(); ++i) out += std::string(width[i], '-') + (i + 1 < width.size() ? "  " : "\n");
    }
  }
  std::vector<const StrategySummary*> flagged;
  for (const StrategySummary& s : summaries) {
    if (s.significance && s.significance->complementarity) flagged.push_back(&s);
  }
  if (!summaries.empty()) {
    out += "\nmarks: * paired t-test, o Wilcoxon; 1-4 marks for p < 0.05, 0.01, 0.001, 0.0001\n";
    for (const auto* s : flagged) {
      out += fmt::format("complementarity: {} ({}) beats both baselines at p < 0.05\n", to_string(s->strategy),
                         to_string(s->score));
    }
  }
  return out;
}

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += ch;
    }
  }
  return out;
}

// Roughly five round tick values covering [lo, hi].
std::vector<double> ticks(double lo, double hi) {
  const double span = hi - lo;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    step = m * mag;
    if (step >= raw) break;
  }
  std::vector<double> out;
  for (double t = std::ceil(lo / step) * step; t <= hi + step * 1e-9; t += step) out.push_back(t);
  return out;
}

}  // namespace

std::string svg_line_plot(const PlotSpec& spec, std::span<const PlotSeries> series) {
  constexpr double W = 720, H = 440, L = 70, R = 180, T = 40, B = 55;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (const auto& p : s.points) {
      x0 = std::min(x0, p.alpha);
      x1 = std::max(x1, p.alpha);
      const double hw = spec.bands ? p.half_width : 0.0;
      y0 = std::min(y0, p.mean - hw);
      y1 = std::max(y1, p.mean + hw);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pad = (y1 - y0) * 0.05;
  y0 -= pad;
  y1 += pad;
  const auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  const auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::string out = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
      W, H, W, H);
  out += fmt::format("<text x=\"{}\" y=\"22\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n", (L + W - R) / 2,
                     escape(spec.title));
  out += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>\n", L, T,
                     W - L - R, H - T - B);
  for (double t : ticks(x0, x1)) {
    out += fmt::format("<line x1=\"{0:.1f}\" y1=\"{1}\" x2=\"{0:.1f}\" y2=\"{2}\" stroke=\"#444\"/>"
                       "<text x=\"{0:.1f}\" y=\"{3}\" text-anchor=\"middle\">{4:.3g}</text>\n",
                       px(t), H - B, H - B + 5, H - B + 19, t);
  }
  for (double t : ticks(y0, y1)) {
    out += fmt::format("<line x1=\"{0}\" y1=\"{1:.1f}\" x2=\"{2}\" y2=\"{1:.1f}\" stroke=\"#ddd\"/>"
                       "<text x=\"{3}\" y=\"{4:.1f}\" text-anchor=\"end\">{5:.4g}</text>\n",
                       L, py(t), W - R, L - 6, py(t) + 4, t);
  }
  out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", (L + W - R) / 2, H - 12,
                     escape(spec.x_label));
  out += fmt::format("<text transform=\"translate(18 {}) rotate(-90)\" text-anchor=\"middle\">{}</text>\n",
                     (T + H - B) / 2, escape(spec.y_label));

  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* color = kPalette[i % std::size(kPalette)];
    if (s.points.empty()) continue;
    if (spec.bands) {
      std::string band;
      for (const auto& p : s.points) band += fmt::format("{:.2f},{:.2f} ", px(p.alpha), py(p.mean + p.half_width));
      for (auto it = s.points.rbegin(); it != s.points.rend(); ++it) {
        band += fmt::format("{:.2f},{:.2f} ", px(it->alpha), py(it->mean - it->half_width));
      }
      out += fmt::format("<polygon points=\"{}\" fill=\"{}\" fill-opacity=\"0.18\" stroke=\"none\"/>\n", band, color);
    }
    std::string line;
    for (const auto& p : s.points) line += fmt::format("{:.2f},{:.2f} ", px(p.alpha), py(p.mean));
    out += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.6\"/>\n", line, color);
    const double ly = T + 14 + 18 * static_cast<double>(i);
    out += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"{3}\" stroke-width=\"2\"/>"
                       "<text x=\"{4}\" y=\"{5}\">{6}</text>\n",
                       W - R + 12, ly, W - R + 32, color, W - R + 38, ly + 4, escape(s.name));
  }
  out += "</svg>\n";
  return out;
}

std::vector<std::filesystem::path> write_report(std::span<const RunResult> rows, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const auto summaries = summarize(rows);
  std::vector<std::filesystem::path> written;
  written.push_back(out_dir / "report.txt");
  write_text(written.back(), format_summary_table(summaries));

  std::map<ScoreKind, std::vector<Strategy>> present;
  for (const RunResult& r : rows) {
    auto& v = present[r.score];
    if (std::find(v.begin(), v.end(), r.strategy) == v.end()) v.push_back(r.strategy);
  }
  for (auto& [score, strategies] : present) {
    std::sort(strategies.begin(), strategies.end());
    std::vector<PlotSeries> acc;
    std::vector<PlotSeries> load;
    for (Strategy s : strategies) {
      auto curve = metric_curve(rows, score, s, Metric::Accuracy);
      for (auto& p : curve) p.mean *= 100.0, p.half_width *= 100.0;
      acc.push_back({std::string(to_string(s)), std::move(curve)});
      if (s != Strategy::ModelOnly) load.push_back({std::string(to_string(s)), metric_curve(rows, score, s, Metric::Queries)});
    }
    const std::string name(to_string(score));
    written.push_back(out_dir / fmt::format("accuracy_vs_alpha_{}.svg", name));
    write_text(written.back(), svg_line_plot({fmt::format("Accuracy vs alpha ({})", name), "alpha", "accuracy (%)"}, acc));
    written.push_back(out_dir / fmt::format("queries_vs_alpha_{}.svg", name));
    write_text(written.back(),
               svg_line_plot({fmt::format("Expert queries vs alpha ({})", name), "alpha", "total expert queries"}, load));
  }
  return written;
}

std::string format_ablation_csv(const std::string& point_column, std::span<const AblationRow> rows) {
  std::string out = point_column +
                    ",score,strategy,alpha_opt,accuracy_mean,accuracy_sd,n_queries_mean,max_qpe_mean,avg_qpe_mean,"
                    "p_value,stars,test\n";
  for (const AblationRow& row : rows) {
    const StrategySummary& s = row.summary;
    out += fmt::format("{},{},{},{},{},{},{},{},", row.point, to_string(s.score), to_string(s.strategy),
                       s.alpha_opt ? fmt::format("{}", *s.alpha_opt) : "", s.accuracy.mean, s.accuracy.sd,
                       s.n_queries.mean, s.max_qpe.mean);
    if (s.avg_qpe) out += fmt::format("{}", s.avg_qpe->mean);
    if (s.significance) {
      out += fmt::format(",{},{},{}\n", s.significance->p_value, s.significance->stars, to_string(s.significance->test_used));
    } else {
      out += ",,,\n";
    }
  }
  return out;
}

}  // namespace cpdefer
