#include <algorithm>
#include <exception>
#include <numeric>
#include <string>
#include <unordered_map>

#include <fmt/format.h>
#include <omp.h>

#include "cpdefer/error.hpp"
#include "cpdefer/evaluation.hpp"
#include "cpdefer/rng.hpp"
#include "seed_tags.hpp"

namespace cpdefer {

namespace {

using u32 = std::uint32_t;

// Everything both replay paths share: the split, the thresholds, and which
// records each expert's selection profile may use.
struct Prepared {
  Split split;
  std::optional<RapsParams> raps;
  std::vector<ConformalThreshold> thresholds;
  // Indices into store.for_expert(e); empty optional means every record.
  std::optional<std::vector<std::vector<std::size_t>>> shot_records;
  std::size_t short_cells = 0;
};

Prepared prepare(const Dataset& data, const ExperimentConfig& cfg, const SplitSpec& spec,
                 std::span<const double> alphas) {
  if (alphas.empty()) throw ValidationError("no alpha values to sweep");
  Prepared prep;
  prep.split = stratified_split(data.table, spec);

  std::vector<std::size_t> calib = prep.split.cal;
  if (cfg.score == ScoreKind::RAPS) {
    std::vector<std::size_t> shuffled = prep.split.cal;
    Rng rng(derive_seed(cfg.seed, seed_tag::kTune, spec.split_index));
    for (std::size_t i = 0; i + 1 < shuffled.size(); ++i) {
      std::swap(shuffled[i], shuffled[i + uniform_index(rng, shuffled.size() - i)]);
    }
    const auto n_tune = static_cast<std::size_t>(
        std::llround(cfg.raps_tune_fraction * static_cast<double>(shuffled.size())));
    if (n_tune < 4 || n_tune >= shuffled.size()) {
      throw ValidationError(fmt::format("RAPS tuning subset of {} rows out of {} is unusable", n_tune,
                                        shuffled.size()));
    }
    const std::vector<std::size_t> tuning(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_tune));
    calib.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(n_tune), shuffled.end());
    std::sort(calib.begin(), calib.end());
    const auto grid = cfg.raps_grid.empty() ? default_raps_grid(data.table.num_classes()) : cfg.raps_grid;
    prep.raps = tune_raps(data.table, tuning, cfg.raps_tune_alpha, grid);
  }

  const RapsParams* raps = prep.raps ? &*prep.raps : nullptr;
  CalibrationScores cal(calibration_scores(data.table, calib, cfg.score, raps), cfg.score,
                        data.table.num_classes());
  for (double a : alphas) prep.thresholds.push_back(cal.threshold(a));

  if (cfg.knowledge.shots) {
    prep.shot_records = sample_shots(data.store, data.table, *cfg.knowledge.shots,
                                     derive_seed(cfg.seed, seed_tag::kShots, spec.split_index), &prep.short_cells);
  }
  return prep;
}

struct Task {
  Strategy strategy;
  std::size_t alpha_index;  // seed_tag::kAlphaFree for alpha-free strategies
};

std::vector<Task> make_tasks(const ExperimentConfig& cfg, std::size_t n_alphas) {
  std::vector<Strategy> strategies = cfg.strategies;
  std::sort(strategies.begin(), strategies.end());
  strategies.erase(std::unique(strategies.begin(), strategies.end()), strategies.end());
  if (strategies.empty()) throw ValidationError("no strategies selected");
  std::vector<Task> tasks;
  for (Strategy s : strategies) {
    if (is_alpha_free(s)) {
      tasks.push_back({s, static_cast<std::size_t>(seed_tag::kAlphaFree)});
    } else {
      for (std::size_t a = 0; a < n_alphas; ++a) tasks.push_back({s, a});
    }
  }
  return tasks;
}

Rng task_rng(const ExperimentConfig& cfg, const SplitSpec& spec, const Task& t) {
  return Rng(derive_seed(cfg.seed, seed_tag::kTask, spec.split_index, t.alpha_index,
                         static_cast<std::uint64_t>(t.strategy)));
}

// Expands per-task tallies into result rows; alpha-free tasks repeat at every alpha.
void emit(SplitRun& out, const ExperimentConfig& cfg, const SplitSpec& spec, std::span<const double> alphas,
          const Task& t, std::int64_t correct, std::size_t n_test, std::span<const std::int64_t> queries) {
  const Workload w = workload_from_counts(queries);
  RunResult r;
  r.strategy = t.strategy;
  r.score = cfg.score;
  r.split_index = spec.split_index;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(n_test);
  r.n_queries = w.n_queries;
  r.max_qpe = w.max_qpe;
  r.avg_qpe = w.avg_qpe;
  if (is_alpha_free(t.strategy)) {
    for (double a : alphas) {
      r.alpha = a;
      out.rows.push_back(r);
    }
  } else {
    r.alpha = alphas[t.alpha_index];
    out.rows.push_back(r);
  }
}

int thread_count(const ExperimentConfig& cfg) { return cfg.jobs > 0 ? cfg.jobs : omp_get_max_threads(); }

// Tie groups for one test sample, as positions into store.for_row(row).
struct SampleGroups {
  std::vector<std::pair<u32, std::vector<u32>>> by_set_size;  // segregativity, per distinct size != 1
  std::vector<u32> overall;                                   // selection profiles, overall accuracy
  std::vector<u32> best;                                      // full profiles, overall accuracy

  const std::vector<u32>& for_size(u32 m) const {
    for (const auto& [size, group] : by_set_size) {
      if (size == m) return group;
    }
    return overall;
  }
};

std::vector<u32> to_group(std::span<const Evidence> scores, std::span<const double> costs, TieRule rule) {
  const auto idx = argmax_group(scores);
  if (rule == TieRule::LeastCost) {
    // Candidates are in ascending expert id, so the first minimum wins ties.
    std::size_t best = idx.front();
    for (std::size_t g : idx) {
      if (costs[g] < costs[best]) best = g;
    }
    return {static_cast<u32>(best)};
  }
  return std::vector<u32>(idx.begin(), idx.end());
}

}  // namespace

SplitRun run_split(const Dataset& data, const ExperimentConfig& cfg, const SplitSpec& spec,
                   std::span<const double> alphas) {
  const ProbabilityTable& table = data.table;
  const AnnotationStore& store = data.store;
  const Prepared prep = prepare(data, cfg, spec, alphas);
  const RapsParams* raps = prep.raps ? &*prep.raps : nullptr;
  const std::size_t n_alphas = alphas.size();
  const std::size_t c = table.num_classes();
  const std::size_t k = store.num_experts();
  const auto& test = prep.split.test;
  const int threads = thread_count(cfg);

  // Expert confusion matrices: every record, and the records selection may see.
  std::vector<ConfusionMatrix> full(k, ConfusionMatrix(c));
  std::vector<ConfusionMatrix> sel(k, ConfusionMatrix(c));
  // Per row, whether each annotation (by for_row position) is in the selection profile.
  std::vector<std::vector<char>> in_sel(table.size());
  for (std::size_t r = 0; r < table.size(); ++r) in_sel[r].assign(store.for_row(r).size(), prep.shot_records ? 0 : 1);
  for (std::size_t e = 0; e < k; ++e) {
    const auto recs = store.for_expert(e);
    for (const auto& a : recs) full[e].add(table[a.row].truth, a.label);
    if (!prep.shot_records) {
      sel[e] = full[e];
      continue;
    }
    for (std::size_t j : (*prep.shot_records)[e]) {
      const auto& a = recs[j];
      sel[e].add(table[a.row].truth, a.label);
      const auto anns = store.for_row(a.row);
      const auto it = std::lower_bound(anns.begin(), anns.end(), e,
                                       [](const AnnotationStore::SampleAnnotation& s, std::size_t x) {
                                         return s.expert < x;
                                       });
      in_sel[a.row][static_cast<std::size_t>(it - anns.begin())] = 1;
    }
  }

  const bool want_seg = std::find(cfg.strategies.begin(), cfg.strategies.end(), Strategy::Segregativity) !=
                        cfg.strategies.end();
  std::vector<u32> set_size(test.size() * n_alphas);
  std::vector<SampleGroups> groups(test.size());

#pragma omp parallel for schedule(dynamic, 32) num_threads(threads)
  for (std::size_t t = 0; t < test.size(); ++t) {
    const auto& row = table[test[t]];
    const ProbVector& p = row.probs;
    const auto ranked = ranked_scores(cfg.score, p, raps);
    u32* m = &set_size[t * n_alphas];
    for (std::size_t a = 0; a < n_alphas; ++a) m[a] = static_cast<u32>(set_size_from_ranked(ranked, prep.thresholds[a]));

    const auto anns = store.for_row(test[t]);
    if (anns.empty()) continue;
    const auto& flags = in_sel[test[t]];
    std::vector<double> costs(anns.size());
    std::vector<Evidence> overall(anns.size());
    std::vector<Evidence> best(anns.size());
    for (std::size_t j = 0; j < anns.size(); ++j) {
      const std::size_t e = anns[j].expert;
      const std::int64_t hit = anns[j].label == row.truth;
      costs[j] = store.cost(e);
      overall[j] = {sel[e].trace() - (flags[j] ? hit : 0), sel[e].total() - flags[j]};
      best[j] = {full[e].trace() - hit, full[e].total() - 1};
    }
    SampleGroups& g = groups[t];
    g.overall = to_group(overall, costs, cfg.tie_rule);
    g.best = to_group(best, costs, cfg.tie_rule);
    if (!want_seg) continue;

    std::vector<u32> sizes;
    for (std::size_t a = 0; a < n_alphas; ++a) {
      if (m[a] > 1) sizes.push_back(m[a]);
    }
    std::sort(sizes.begin(), sizes.end());
    sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
    if (sizes.empty()) continue;

    // Grow the prefix set one label at a time, tracking each expert's
    // evidence on the sub-matrix minus this sample's own record.
    const auto order = p.order();
    const std::size_t truth_pos = p.position(row.truth);
    std::vector<Evidence> seg(anns.size());
    std::vector<std::size_t> label_pos(anns.size());
    for (std::size_t j = 0; j < anns.size(); ++j) label_pos[j] = p.position(anns[j].label);
    std::size_t next = 0;
    for (u32 len = 1; len <= sizes.back(); ++len) {
      const int added = order[len - 1];
      for (std::size_t j = 0; j < anns.size(); ++j) {
        const ConfusionMatrix& cm = sel[anns[j].expert];
        std::int64_t mass = cm.count(added, added);
        for (u32 i = 0; i + 1 < len; ++i) mass += cm.count(added, order[i]) + cm.count(order[i], added);
        seg[j].correct += cm.count(added, added);
        seg[j].total += mass;
      }
      if (len != sizes[next]) continue;
      std::vector<Evidence> loo = seg;
      bool any = false;
      for (std::size_t j = 0; j < anns.size(); ++j) {
        if (flags[j] && truth_pos < len && label_pos[j] < len) {
          loo[j].correct -= anns[j].label == row.truth;
          loo[j].total -= 1;
        }
        any = any || loo[j].defined();
      }
      if (any) g.by_set_size.emplace_back(len, to_group(loo, costs, cfg.tie_rule));
      ++next;
    }
  }

  const std::vector<Task> tasks = make_tasks(cfg, n_alphas);
  std::vector<std::int64_t> correct(tasks.size(), 0);
  std::vector<std::vector<std::int64_t>> queries(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());

#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
    try {
      const Task& task = tasks[ti];
      Rng rng = task_rng(cfg, spec, task);
      std::vector<std::int64_t> q(k, 0);
      std::int64_t hits = 0;
      for (std::size_t t = 0; t < test.size(); ++t) {
        const auto& row = table[test[t]];
        int label = row.probs.argmax();
        const bool defer = task.strategy == Strategy::ModelOnly   ? false
                           : uses_prediction_set(task.strategy) ? set_size[t * n_alphas + task.alpha_index] != 1
                                                                : true;
        if (defer) {
          const auto anns = store.for_row(test[t]);
          if (anns.empty()) {
            throw ReplayError(fmt::format("strategy {} must defer on sample '{}' but no expert is eligible",
                                          to_string(task.strategy), row.sample_id));
          }
          std::size_t pick = 0;
          const SampleGroups& g = groups[t];
          switch (task.strategy) {
            case Strategy::Segregativity: {
              const auto& grp = g.for_size(set_size[t * n_alphas + task.alpha_index]);
              pick = grp[uniform_index(rng, grp.size())];
              break;
            }
            case Strategy::NaiveMostAccurate: pick = g.overall[uniform_index(rng, g.overall.size())]; break;
            case Strategy::BestExpert: pick = g.best[uniform_index(rng, g.best.size())]; break;
            default: pick = uniform_index(rng, anns.size()); break;
          }
          label = anns[pick].label;
          ++q[anns[pick].expert];
        }
        hits += label == row.truth;
      }
      correct[ti] = hits;
      queries[ti] = std::move(q);
    } catch (...) {
      errors[ti] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  SplitRun out;
  out.raps = prep.raps;
  out.short_shot_cells = prep.short_cells;
  for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
    emit(out, cfg, spec, alphas, tasks[ti], correct[ti], test.size(), queries[ti]);
  }
  return out;
}

SplitRun run_split_reference(const Dataset& data, const ExperimentConfig& cfg, const SplitSpec& spec,
                             std::span<const double> alphas) {
  const ProbabilityTable& table = data.table;
  const AnnotationStore& store = data.store;
  const Prepared prep = prepare(data, cfg, spec, alphas);
  const RapsParams* raps = prep.raps ? &*prep.raps : nullptr;
  const std::size_t c = table.num_classes();
  const std::size_t k = store.num_experts();
  const auto truths = table.truth_map();

  std::vector<std::vector<ExpertRecord>> full_records(k);
  std::vector<std::vector<ExpertRecord>> sel_records(k);
  for (std::size_t e = 0; e < k; ++e) {
    const auto recs = store.for_expert(e);
    for (const auto& a : recs) full_records[e].push_back({store.expert_id(e), table[a.row].sample_id, a.label});
    if (!prep.shot_records) {
      sel_records[e] = full_records[e];
    } else {
      for (std::size_t j : (*prep.shot_records)[e]) sel_records[e].push_back(full_records[e][j]);
    }
  }

  const std::vector<Task> tasks = make_tasks(cfg, alphas.size());
  std::vector<Rng> rngs;
  for (const Task& t : tasks) rngs.push_back(task_rng(cfg, spec, t));
  std::vector<std::int64_t> correct(tasks.size(), 0);
  std::vector<std::vector<std::int64_t>> queries(tasks.size(), std::vector<std::int64_t>(k, 0));

  for (std::size_t r : prep.split.test) {
    const auto& row = table[r];
    std::vector<ExpertProfile> sel_profiles;
    std::vector<ExpertProfile> full_profiles;
    std::vector<ExpertLabel> labels;
    for (const auto& a : store.for_row(r)) {
      const std::string& id = store.expert_id(a.expert);
      sel_profiles.push_back({id, build_confusion(sel_records[a.expert], truths, c, row.sample_id), store.cost(a.expert)});
      full_profiles.push_back({id, build_confusion(full_records[a.expert], truths, c, row.sample_id), store.cost(a.expert)});
      labels.push_back({id, a.label});
    }
    for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
      const Task& task = tasks[ti];
      const auto& thr = prep.thresholds[is_alpha_free(task.strategy) ? 0 : task.alpha_index];
      const auto& profiles = task.strategy == Strategy::BestExpert ? full_profiles : sel_profiles;
      const Decision d = decide(row.probs, thr, raps, profiles, task.strategy, cfg.tie_rule, rngs[ti]);
      const Outcome o = resolve(d, labels, row.truth);
      correct[ti] += o.correct;
      if (o.queried_expert) ++queries[ti][*store.find_expert(*o.queried_expert)];
    }
  }

  SplitRun out;
  out.raps = prep.raps;
  out.short_shot_cells = prep.short_cells;
  for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
    emit(out, cfg, spec, alphas, tasks[ti], correct[ti], prep.split.test.size(), queries[ti]);
  }
  return out;
}

}  // namespace cpdefer
