#include "cpdefer/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <tuple>

#include <fmt/format.h>

#include "cpdefer/error.hpp"
#include "cpdefer/rng.hpp"
#include "cpdefer/stats.hpp"
#include "seed_tags.hpp"

namespace cpdefer {

SplitSpec SplitSpec::derive(std::uint64_t master_seed, std::size_t cal_size, std::size_t index) {
  return {derive_seed(master_seed, seed_tag::kSplit, index), cal_size, index};
}

Split stratified_split(const ProbabilityTable& table, const SplitSpec& spec) {
  const std::size_t n = table.size();
  const std::size_t c = table.num_classes();
  if (spec.cal_size == 0) throw ValidationError("calibration size must be positive");
  if (spec.cal_size >= n) {
    throw ValidationError(fmt::format("calibration size {} leaves no test samples out of {}", spec.cal_size, n));
  }
  if (spec.cal_size < c) {
    throw ValidationError(fmt::format("calibration size {} is smaller than the class count {}", spec.cal_size, c));
  }
  std::vector<std::vector<std::size_t>> by_class(c);
  for (std::size_t r = 0; r < n; ++r) by_class[static_cast<std::size_t>(table[r].truth)].push_back(r);

  std::vector<std::size_t> quota(c);
  std::vector<std::size_t> remainder(c);
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < c; ++k) {
    const std::size_t scaled = spec.cal_size * by_class[k].size();
    quota[k] = scaled / n;
    remainder[k] = scaled % n;
    assigned += quota[k];
  }
  std::vector<std::size_t> order(c);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < spec.cal_size; ++i, ++assigned) ++quota[order[i % c]];

  Rng rng(spec.seed);
  Split out;
  std::vector<bool> in_cal(n, false);
  for (std::size_t k = 0; k < c; ++k) {
    auto& rows = by_class[k];
    // Partial Fisher-Yates: the first quota[k] slots become a uniform draw.
    for (std::size_t i = 0; i < quota[k]; ++i) {
      const std::size_t j = i + uniform_index(rng, rows.size() - i);
      std::swap(rows[i], rows[j]);
      in_cal[rows[i]] = true;
    }
  }
  for (std::size_t r = 0; r < n; ++r) (in_cal[r] ? out.cal : out.test).push_back(r);
  return out;
}

std::vector<double> alpha_grid(double model_accuracy) {
  if (!(model_accuracy > 0.001 && model_accuracy < 0.999)) {
    throw ValidationError(fmt::format("model accuracy {} must lie in (0.001, 0.999) to build the alpha grid",
                                      model_accuracy));
  }
  // Work in thousandths so both segments land on exact grid points.
  const long fine_end = std::max(1L, std::lround((1.0 - model_accuracy) * 1000.0));
  std::vector<double> grid;
  for (long k = 1; k <= fine_end; ++k) grid.push_back(static_cast<double>(k) / 1000.0);
  for (long k = (fine_end / 10 + 1) * 10; k <= 990; k += 10) grid.push_back(static_cast<double>(k) / 1000.0);
  return grid;
}

double model_accuracy(const ProbabilityTable& table) {
  if (table.size() == 0) throw ValidationError("model accuracy of an empty table");
  std::size_t correct = 0;
  for (const auto& row : table.rows()) correct += row.probs.argmax() == row.truth;
  return static_cast<double>(correct) / static_cast<double>(table.size());
}

Workload workload_from_counts(std::span<const std::int64_t> queries_per_expert) {
  Workload w;
  std::int64_t distinct = 0;
  for (std::int64_t q : queries_per_expert) {
    if (q <= 0) continue;
    w.n_queries += q;
    w.max_qpe = std::max(w.max_qpe, q);
    ++distinct;
  }
  if (distinct > 0) w.avg_qpe = static_cast<double>(w.n_queries) / static_cast<double>(distinct);
  return w;
}

Workload workload_metrics(std::span<const Outcome> outcomes) {
  std::map<std::string, std::int64_t> per_expert;
  for (const Outcome& o : outcomes) {
    if (o.queried_expert) ++per_expert[*o.queried_expert];
  }
  std::vector<std::int64_t> counts;
  for (const auto& [id, q] : per_expert) counts.push_back(q);
  return workload_from_counts(counts);
}

void sort_results(std::vector<RunResult>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const RunResult& a, const RunResult& b) {
    return std::tie(a.score, a.strategy, a.alpha, a.split_index) <
           std::tie(b.score, b.strategy, b.alpha, b.split_index);
  });
}

namespace {

// Mean accuracy per alpha, in ascending alpha order.
std::map<double, double> mean_accuracy_by_alpha(std::span<const RunResult> rows) {
  std::map<double, std::pair<double, std::size_t>> acc;
  for (const RunResult& r : rows) {
    auto& slot = acc[r.alpha];
    slot.first += r.accuracy;
    ++slot.second;
  }
  std::map<double, double> out;
  for (const auto& [alpha, s] : acc) out.emplace(alpha, s.first / static_cast<double>(s.second));
  return out;
}

}  // namespace

double select_alpha_opt(std::span<const RunResult> results) {
  if (results.empty()) throw ValidationError("cannot pick alpha_opt from no results");
  for (const RunResult& r : results) {
    if (r.strategy != results.front().strategy || r.score != results.front().score) {
      throw ValidationError("alpha_opt selection mixes strategies");
    }
  }
  const auto means = mean_accuracy_by_alpha(results);
  double best_alpha = means.begin()->first;
  double best = means.begin()->second;
  for (const auto& [alpha, mean] : means) {
    if (mean > best) {
      best = mean;
      best_alpha = alpha;
    }
  }
  return best_alpha;
}

std::string_view to_string(PairedTest t) { return t == PairedTest::PairedT ? "paired_t" : "wilcoxon"; }

int significance_stars(double p) {
  int stars = 0;
  for (double level : {0.05, 0.01, 0.001, 0.0001}) stars += p < level;
  return stars;
}

SignificanceVerdict one_sided_test(std::span<const double> method, std::span<const double> baseline) {
  if (method.size() != baseline.size()) throw ValidationError("per-split accuracy vectors differ in length");
  if (method.size() < 3) {
    throw ValidationError(fmt::format("significance testing needs at least 3 splits, got {}", method.size()));
  }
  std::vector<double> d(method.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = method[i] - baseline[i];

  SignificanceVerdict v;
  if (std::all_of(d.begin(), d.end(), [](double x) { return x == 0.0; })) {
    v.test_used = PairedTest::PairedT;
    v.p_value = 0.5;
    return v;
  }
  bool normal = false;
  if (std::adjacent_find(d.begin(), d.end(), std::not_equal_to<>()) != d.end()) {
    normal = stats::shapiro_wilk(d).p_value >= 0.05;
  }
  if (normal) {
    v.test_used = PairedTest::PairedT;
    v.p_value = stats::paired_t_one_tailed(method, baseline).p_value;
  } else {
    v.test_used = PairedTest::Wilcoxon;
    v.p_value = stats::wilcoxon_one_tailed(method, baseline).p_value;
  }
  v.stars = significance_stars(v.p_value);
  return v;
}

SignificanceVerdict complementarity_test(std::span<const double> method_accs, std::span<const double> best_expert_accs,
                                         std::span<const double> model_accs) {
  if (method_accs.size() != best_expert_accs.size() || method_accs.size() != model_accs.size()) {
    throw ValidationError("per-split accuracy vectors differ in length");
  }
  const auto mean = [](std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  const bool expert_stronger = mean(best_expert_accs) >= mean(model_accs);
  const auto stronger = expert_stronger ? best_expert_accs : model_accs;
  const auto weaker = expert_stronger ? model_accs : best_expert_accs;

  SignificanceVerdict v = one_sided_test(method_accs, stronger);
  v.baseline = expert_stronger ? Strategy::BestExpert : Strategy::ModelOnly;
  const SignificanceVerdict other = one_sided_test(method_accs, weaker);
  v.complementarity = v.p_value < 0.05 && other.p_value < 0.05;
  return v;
}

Knowledge Knowledge::parse(std::string_view text) {
  if (text == "loo") return leave_one_out();
  if (text.starts_with("shots:")) {
    const std::string digits(text.substr(6));
    std::size_t used = 0;
    int n = -1;
    try {
      n = std::stoi(digits, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == digits.size() && n > 0) return n_shots(n);
  }
  throw ValidationError(fmt::format("unknown knowledge mode '{}' (expected loo or shots:N)", text));
}

std::string Knowledge::to_string() const { return shots ? fmt::format("shots:{}", *shots) : "loo"; }

std::vector<double> resolve_alphas(const ExperimentConfig& cfg, const ProbabilityTable& table) {
  if (!cfg.alphas.empty()) {
    std::vector<double> alphas = cfg.alphas;
    for (double a : alphas) {
      if (!(a > 0.0 && a < 1.0)) throw ValidationError(fmt::format("alpha {} outside (0, 1)", a));
    }
    std::sort(alphas.begin(), alphas.end());
    alphas.erase(std::unique(alphas.begin(), alphas.end()), alphas.end());
    return alphas;
  }
  return alpha_grid(model_accuracy(table));
}

ExperimentRun run_experiment(const Dataset& data, const ExperimentConfig& cfg) {
  if (cfg.splits == 0) throw ValidationError("an experiment needs at least one split");
  ExperimentRun run;
  run.alphas = resolve_alphas(cfg, data.table);
  for (std::size_t s = 0; s < cfg.splits; ++s) {
    SplitRun one = run_split(data, cfg, SplitSpec::derive(cfg.seed, cfg.cal_size, s), run.alphas);
    run.rows.insert(run.rows.end(), one.rows.begin(), one.rows.end());
    run.raps_per_split.push_back(one.raps);
    run.short_shot_cells += one.short_shot_cells;
  }
  sort_results(run.rows);
  return run;
}

std::vector<std::vector<std::size_t>> sample_shots(const AnnotationStore& store, const ProbabilityTable& table,
                                                   int shots, std::uint64_t seed, std::size_t* short_cells) {
  if (shots <= 0) throw ValidationError(fmt::format("n_shots must be positive, got {}", shots));
  std::vector<std::vector<std::size_t>> out(store.num_experts());
  std::size_t shortfall = 0;
  const auto want = static_cast<std::size_t>(shots);
  for (std::size_t e = 0; e < store.num_experts(); ++e) {
    const auto records = store.for_expert(e);
    std::vector<std::vector<std::size_t>> by_label(table.num_classes());
    for (std::size_t j = 0; j < records.size(); ++j) {
      by_label[static_cast<std::size_t>(table[records[j].row].truth)].push_back(j);
    }
    Rng rng(derive_seed(seed, e));
    for (auto& cell : by_label) {
      if (cell.size() < want) {
        ++shortfall;
        out[e].insert(out[e].end(), cell.begin(), cell.end());
        continue;
      }
      for (std::size_t i = 0; i < want; ++i) {
        const std::size_t j = i + uniform_index(rng, cell.size() - i);
        std::swap(cell[i], cell[j]);
      }
      out[e].insert(out[e].end(), cell.begin(), cell.begin() + static_cast<std::ptrdiff_t>(want));
    }
    std::sort(out[e].begin(), out[e].end());
  }
  if (short_cells) *short_cells = shortfall;
  return out;
}

MeanSd mean_sd(std::span<const double> values) {
  MeanSd out;
  if (values.empty()) return out;
  const auto n = static_cast<double>(values.size());
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.sd = std::sqrt(ss / (n - 1.0));
  }
  return out;
}

std::vector<StrategySummary> summarize(std::span<const RunResult> rows) {
  std::map<std::pair<ScoreKind, Strategy>, std::vector<RunResult>> groups;
  for (const RunResult& r : rows) groups[{r.score, r.strategy}].push_back(r);

  std::vector<StrategySummary> out;
  for (auto& [key, group] : groups) {
    StrategySummary s;
    s.score = key.first;
    s.strategy = key.second;
    double alpha = group.front().alpha;
    if (is_alpha_free(s.strategy)) {
      for (const RunResult& r : group) alpha = std::min(alpha, r.alpha);
    } else {
      alpha = select_alpha_opt(group);
    }
    if (!is_alpha_free(s.strategy)) s.alpha_opt = alpha;

    std::vector<const RunResult*> at;
    for (const RunResult& r : group) {
      if (r.alpha == alpha) at.push_back(&r);
    }
    std::sort(at.begin(), at.end(), [](auto* a, auto* b) { return a->split_index < b->split_index; });
    std::vector<double> q, mq, aq;
    for (const RunResult* r : at) {
      s.split_accuracies.push_back(r->accuracy);
      q.push_back(static_cast<double>(r->n_queries));
      mq.push_back(static_cast<double>(r->max_qpe));
      if (r->avg_qpe) aq.push_back(*r->avg_qpe);
    }
    s.n_splits = at.size();
    s.accuracy = mean_sd(s.split_accuracies);
    s.n_queries = mean_sd(q);
    s.max_qpe = mean_sd(mq);
    if (!aq.empty()) s.avg_qpe = mean_sd(aq);
    out.push_back(std::move(s));
  }

  for (StrategySummary& s : out) {
    if (!uses_prediction_set(s.strategy)) continue;
    const StrategySummary* best = nullptr;
    const StrategySummary* model = nullptr;
    for (const StrategySummary& o : out) {
      if (o.score != s.score) continue;
      if (o.strategy == Strategy::BestExpert) best = &o;
      if (o.strategy == Strategy::ModelOnly) model = &o;
    }
    if (!best || !model || best->n_splits != s.n_splits || model->n_splits != s.n_splits || s.n_splits < 3) {
      continue;
    }
    s.significance = complementarity_test(s.split_accuracies, best->split_accuracies, model->split_accuracies);
  }
  return out;
}

std::vector<CurvePoint> metric_curve(std::span<const RunResult> rows, ScoreKind score, Strategy strategy,
                                     Metric metric) {
  std::map<double, std::vector<double>> by_alpha;
  for (const RunResult& r : rows) {
    if (r.score != score || r.strategy != strategy) continue;
    auto& values = by_alpha[r.alpha];
    switch (metric) {
      case Metric::Accuracy: values.push_back(r.accuracy); break;
      case Metric::Queries: values.push_back(static_cast<double>(r.n_queries)); break;
      case Metric::MaxQpe: values.push_back(static_cast<double>(r.max_qpe)); break;
      case Metric::AvgQpe:
        if (r.avg_qpe) values.push_back(*r.avg_qpe);
        break;
    }
  }
  std::vector<CurvePoint> out;
  for (const auto& [alpha, values] : by_alpha) {
    if (values.empty()) continue;
    const MeanSd ms = mean_sd(values);
    out.push_back({alpha, ms.mean, 1.96 * ms.sd / std::sqrt(static_cast<double>(values.size()))});
  }
  return out;
}

std::vector<double> expert_fraction_grid(double step) {
  if (!(step > 0.0 && step <= 1.0)) throw ValidationError(fmt::format("fraction step {} outside (0, 1]", step));
  std::vector<double> out;
  for (int i = 0;; ++i) {
    const double f = std::round((1.0 - i * step) * 1e6) / 1e6;
    if (f <= 0.0) break;
    out.push_back(f);
  }
  return out;
}

std::vector<std::size_t> bottom_experts(const AnnotationStore& store, const ProbabilityTable& table,
                                        double f_kept) {
  if (!(f_kept > 0.0 && f_kept <= 1.0)) throw ValidationError(fmt::format("f_kept {} outside (0, 1]", f_kept));
  const std::size_t k = store.num_experts();
  std::vector<Evidence> acc(k);
  for (std::size_t e = 0; e < k; ++e) {
    for (const auto& a : store.for_expert(e)) {
      acc[e].correct += a.label == table[a.row].truth;
      ++acc[e].total;
    }
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  // Expert indices follow id order, so a stable sort breaks ties by id.
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return compare(acc[a], acc[b]) < 0; });
  const auto keep = static_cast<std::size_t>(std::ceil(f_kept * static_cast<double>(k) - 1e-9));
  order.resize(std::min(keep, k));
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<FractionPoint> ablate_expert_fraction(const Dataset& data, const ExperimentConfig& cfg,
                                                  std::span<const double> fractions) {
  std::vector<FractionPoint> out;
  for (double f : fractions) {
    const auto kept = bottom_experts(data.store, data.table, f);
    AnnotationStore store = data.store.keep_experts(kept, data.table);
    bool covered = true;
    for (std::size_t r = 0; r < data.table.size() && covered; ++r) covered = !store.for_row(r).empty();
    if (!covered) break;
    FractionPoint point;
    point.f_kept = f;
    point.experts_kept = kept.size();
    point.run = run_experiment({data.table, store}, cfg);
    out.push_back(std::move(point));
  }
  return out;
}

std::vector<ShotsPoint> ablate_shots(const Dataset& data, const ExperimentConfig& cfg, std::span<const int> shots) {
  std::vector<ShotsPoint> out;
  for (int n : shots) {
    ExperimentConfig c = cfg;
    c.knowledge = Knowledge::n_shots(n);
    out.push_back({n, run_experiment(data, c)});
  }
  return out;
}

}  // namespace cpdefer
