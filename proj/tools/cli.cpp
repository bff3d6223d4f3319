#include "cli.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "cpdefer/dataio.hpp"
#include "cpdefer/error.hpp"
#include "cpdefer/evaluation.hpp"
#include "cpdefer/report.hpp"
#include "cpdefer/synth.hpp"

namespace cpdefer::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kSchemas = R"(File schemas (comma-separated, header row required, blank lines ignored):
  probabilities  sample_id,true_label,p_0,...,p_{C-1}
                 one row per sample; C is read from the header; each vector
                 must sum to 1 within 1e-6 (rescaled with a warning within 1e-3)
  annotations    expert_id,sample_id,predicted_label
                 one row per (expert, sample); labels in [0, C); an empty
                 file is a valid empty pool
  mapping        fine_label,coarse_label
                 total over the probability columns, coarse labels 0..G-1;
                 probabilities are summed into G classes and annotations
                 must then use coarse labels
  costs          expert_id,cost   (unlisted experts cost 1)
  labels         labels.txt, one class name per line
  config         JSON object; keys mirror the long flags with '_' for '-':
                 probs, annotations, mapping, costs, labels, score, alpha,
                 strategies, splits, cal_size, seed, tie, knowledge, jobs, out,
                 step, shots. Command-line flags take precedence.
Outputs:
  results.csv    split,score,strategy,alpha,accuracy,n_queries,max_qpe,avg_qpe
                 (avg_qpe empty when no expert was queried)
  summary.json   per strategy: alpha_opt, accuracy/workload mean and sd,
                 significance against the stronger baseline
Environment:
  CONF_DEFERRAL_JOBS  worker threads when --jobs is not given)";

struct RunOptions {
  std::string probs, annotations, mapping, costs, labels, config, out;
  std::string score = "aps", tie = "random", knowledge = "loo", strategies;
  std::vector<double> alpha;
  std::size_t splits = 20, cal_size = 1000;
  std::uint64_t seed = 0;
  int jobs = 0;
  double step = 0.05;
  std::vector<int> shots{1, 2, 5, 10, 20};
};

struct Registered {
  CLI::App* app = nullptr;
  std::map<std::string, CLI::Option*> opts;
  bool given(const std::string& name) const {
    const auto it = opts.find(name);
    return it != opts.end() && it->second->count() > 0;
  }
};

Registered add_run_options(CLI::App& app, RunOptions& o, bool with_alpha) {
  Registered r{&app, {}};
  r.opts["probs"] = app.add_option("--probs", o.probs, "Probability table (CSV)");
  r.opts["annotations"] = app.add_option("--annotations", o.annotations, "Expert annotations (CSV)");
  r.opts["mapping"] = app.add_option("--mapping", o.mapping, "Fine-to-coarse class mapping (CSV)");
  r.opts["costs"] = app.add_option("--costs", o.costs, "Per-expert query costs (CSV)");
  r.opts["labels"] = app.add_option("--labels", o.labels, "Class names, one per line");
  r.opts["score"] = app.add_option("--score", o.score, "Conformal score: lac, aps or raps")->capture_default_str();
  if (with_alpha) {
    r.opts["alpha"] = app.add_option("--alpha", o.alpha, "Miscoverage level(s); default: the full alpha grid");
  }
  r.opts["strategies"] =
      app.add_option("--strategies", o.strategies,
                     "Comma list of segregativity, naive_most_accurate, naive_random, model_only, best_expert, "
                     "random_expert (default: all)");
  r.opts["splits"] = app.add_option("--splits", o.splits, "Calibration/test splits")->capture_default_str();
  r.opts["cal_size"] = app.add_option("--cal-size", o.cal_size, "Calibration samples per split")->capture_default_str();
  r.opts["seed"] = app.add_option("--seed", o.seed, "Master seed")->capture_default_str();
  r.opts["tie"] = app.add_option("--tie", o.tie, "Tie rule: random or cost")->capture_default_str();
  r.opts["knowledge"] =
      app.add_option("--knowledge", o.knowledge, "Expert knowledge: loo or shots:N")->capture_default_str();
  r.opts["jobs"] = app.add_option("--jobs", o.jobs, "Worker threads (default: CONF_DEFERRAL_JOBS or all cores)");
  r.opts["config"] = app.add_option("--config", o.config, "JSON config supplying any of the above");
  r.opts["out"] = app.add_option("--out", o.out, "Output directory");
  app.footer(kSchemas);
  return r;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
void from_config(const nlohmann::json& cfg, const Registered& r, const std::string& key, T& target) {
  if (r.given(key) || !cfg.contains(key)) return;
  try {
    target = cfg.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(fmt::format("config key '{}' has the wrong type", key));
  }
}

void apply_config(RunOptions& o, const Registered& r) {
  if (o.config.empty()) return;
  const nlohmann::json cfg = load_json(o.config);
  static const std::set<std::string> kKnown = {"probs", "annotations", "mapping", "costs", "labels", "score",
                                               "alpha", "strategies",  "splits",  "cal_size", "seed", "tie",
                                               "knowledge", "jobs", "out", "step", "shots"};
  for (const auto& [key, value] : cfg.items()) {
    if (!kKnown.count(key)) throw ValidationError(fmt::format("unknown config key '{}'", key));
  }
  const std::pair<const char*, std::string*> text_keys[] = {
      {"probs", &o.probs}, {"annotations", &o.annotations}, {"mapping", &o.mapping},
      {"costs", &o.costs}, {"labels", &o.labels},           {"score", &o.score},
      {"tie", &o.tie},     {"knowledge", &o.knowledge},     {"out", &o.out}};
  for (const auto& [key, field] : text_keys) from_config(cfg, r, key, *field);
  try {
    if (!r.given("alpha") && cfg.contains("alpha") && r.opts.count("alpha")) {
      o.alpha = cfg.at("alpha").is_array() ? cfg.at("alpha").get<std::vector<double>>()
                                           : std::vector<double>{cfg.at("alpha").get<double>()};
    }
    if (!r.given("strategies") && cfg.contains("strategies")) {
      const auto& s = cfg.at("strategies");
      if (s.is_array()) {
        o.strategies.clear();
        for (const auto& item : s) o.strategies += (o.strategies.empty() ? "" : ",") + item.get<std::string>();
      } else {
        o.strategies = s.get<std::string>();
      }
    }
  } catch (const nlohmann::json::exception&) {
    throw ValidationError("config keys alpha and strategies take a value or a list");
  }
  from_config(cfg, r, "splits", o.splits);
  from_config(cfg, r, "cal_size", o.cal_size);
  from_config(cfg, r, "seed", o.seed);
  from_config(cfg, r, "jobs", o.jobs);
  from_config(cfg, r, "step", o.step);
  from_config(cfg, r, "shots", o.shots);
}

int resolve_jobs(const RunOptions& o, const Registered& r) {
  if (r.given("jobs")) {
    if (o.jobs < 1) throw ValidationError("--jobs must be at least 1");
    return o.jobs;
  }
  if (const char* env = std::getenv("CONF_DEFERRAL_JOBS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) throw ValidationError(fmt::format("CONF_DEFERRAL_JOBS='{}' is not a positive integer", env));
    return static_cast<int>(v);
  }
  if (o.jobs < 0) throw ValidationError("jobs must be at least 1");
  return o.jobs;
}

struct Loaded {
  ProbabilityTable table;
  AnnotationStore store;
  std::vector<std::string> label_names;
  std::size_t renormalized = 0;
};

Loaded load_inputs(const RunOptions& o, std::ostream& err) {
  if (o.probs.empty()) throw ValidationError("--probs is required");
  if (o.annotations.empty()) throw ValidationError("--annotations is required");
  if (o.out.empty()) throw ValidationError("--out is required");
  Loaded in;
  LoadDiagnostics diag;
  in.table = load_probabilities(o.probs, &diag);
  in.renormalized = diag.renormalized_rows;
  if (diag.renormalized_rows > 0) {
    fmt::print(err, "warning: rescaled {} probability rows that were off by more than 1e-6\n", diag.renormalized_rows);
  }
  if (!o.mapping.empty()) in.table = aggregate_superclasses(in.table, load_class_mapping(o.mapping));
  in.store = load_annotations(o.annotations, in.table);
  if (!o.costs.empty()) in.store.set_costs(load_costs(o.costs));
  if (!o.labels.empty()) {
    in.label_names = load_label_names(o.labels);
    if (in.label_names.size() != in.table.num_classes()) {
      throw ValidationError(fmt::format("{} names {} classes but the table has {}", o.labels, in.label_names.size(),
                                        in.table.num_classes()));
    }
  }
  fmt::print(err, "loaded {} samples over {} classes, {} experts\n", in.table.size(), in.table.num_classes(),
             in.store.num_experts());
  return in;
}

ExperimentConfig experiment_config(const RunOptions& o, const Registered& r, bool grid) {
  ExperimentConfig cfg;
  cfg.score = parse_score_kind(o.score);
  if (!o.strategies.empty()) {
    cfg.strategies.clear();
    for (const auto& s : split_list(o.strategies)) cfg.strategies.push_back(parse_strategy(s));
    if (cfg.strategies.empty()) throw ValidationError("--strategies lists no strategy");
  }
  if (!grid) cfg.alphas = o.alpha;
  cfg.tie_rule = parse_tie_rule(o.tie);
  cfg.knowledge = Knowledge::parse(o.knowledge);
  cfg.seed = o.seed;
  cfg.cal_size = o.cal_size;
  cfg.splits = o.splits;
  if (cfg.splits == 0) throw ValidationError("--splits must be at least 1");
  cfg.jobs = resolve_jobs(o, r);
  return cfg;
}

nlohmann::json run_meta(const ExperimentConfig& cfg, const ExperimentRun& run, const Loaded& in) {
  nlohmann::json strategies = nlohmann::json::array();
  for (Strategy s : cfg.strategies) strategies.push_back(std::string(to_string(s)));
  nlohmann::json raps = nlohmann::json::array();
  for (const auto& p : run.raps_per_split) {
    raps.push_back(p ? nlohmann::json{{"k_reg", p->k_reg}, {"lambda", p->lambda}} : nlohmann::json(nullptr));
  }
  nlohmann::json meta = {{"score", std::string(to_string(cfg.score))},
                         {"strategies", strategies},
                         {"tie", std::string(to_string(cfg.tie_rule))},
                         {"knowledge", cfg.knowledge.to_string()},
                         {"seed", cfg.seed},
                         {"splits", cfg.splits},
                         {"cal_size", cfg.cal_size},
                         {"num_samples", in.table.size()},
                         {"num_classes", in.table.num_classes()},
                         {"num_experts", in.store.num_experts()},
                         {"num_alphas", run.alphas.size()},
                         {"renormalized_rows", in.renormalized}};
  if (cfg.score == ScoreKind::RAPS) meta["raps_per_split"] = raps;
  if (cfg.knowledge.shots) meta["short_shot_cells"] = run.short_shot_cells;
  if (!in.label_names.empty()) meta["label_names"] = in.label_names;
  return meta;
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void cmd_run(const RunOptions& o, const Registered& r, bool grid, std::ostream& err) {
  const auto start = Clock::now();
  const Loaded in = load_inputs(o, err);
  const ExperimentConfig cfg = experiment_config(o, r, grid);
  const ExperimentRun run = run_experiment({in.table, in.store}, cfg);
  const auto summaries = summarize(run.rows);
  const auto paths = write_results(run.rows, summaries, o.out, run_meta(cfg, run, in));
  fmt::print(err, "{} splits x {} alphas in {:.2f}s; wrote {} and {}\n", cfg.splits, run.alphas.size(),
             seconds_since(start), paths.results_csv.string(), paths.summary_json.string());
}

void write_ablation(const fs::path& out, const std::string& column, const std::vector<AblationRow>& rows,
                    const std::string& x_label) {
  write_text(out / fmt::format("ablation_{}.csv", column), format_ablation_csv(column, rows));
  std::map<std::string, PlotSeries> by_strategy;
  for (const AblationRow& row : rows) {
    auto& s = by_strategy[std::string(to_string(row.summary.strategy))];
    s.name = std::string(to_string(row.summary.strategy));
    const double n = static_cast<double>(std::max<std::size_t>(row.summary.n_splits, 1));
    s.points.push_back({row.x, row.summary.accuracy.mean * 100.0, 196.0 * row.summary.accuracy.sd / std::sqrt(n)});
  }
  std::vector<PlotSeries> series;
  for (auto& [name, s] : by_strategy) {
    std::sort(s.points.begin(), s.points.end(), [](const auto& a, const auto& b) { return a.alpha < b.alpha; });
    series.push_back(std::move(s));
  }
  write_text(out / fmt::format("ablation_{}.svg", column),
             svg_line_plot({fmt::format("Accuracy at alpha_opt vs {}", x_label), x_label, "accuracy (%)"}, series));
}

void cmd_ablate_experts(const RunOptions& o, const Registered& r, std::ostream& err) {
  const auto start = Clock::now();
  const Loaded in = load_inputs(o, err);
  const ExperimentConfig cfg = experiment_config(o, r, false);
  const auto points = ablate_expert_fraction({in.table, in.store}, cfg, expert_fraction_grid(o.step));
  std::vector<AblationRow> rows;
  for (const auto& p : points) {
    const auto summaries = summarize(p.run.rows);
    const std::string label = fmt::format("{}", p.f_kept);
    write_results(p.run.rows, summaries, fs::path(o.out) / fmt::format("f_kept_{}", label), run_meta(cfg, p.run, in));
    for (const auto& s : summaries) rows.push_back({label, p.f_kept, s});
    fmt::print(err, "f_kept={} ({} experts) done at {:.2f}s\n", label, p.experts_kept, seconds_since(start));
  }
  write_ablation(o.out, "f_kept", rows, "fraction of experts kept");
}

void cmd_ablate_shots(const RunOptions& o, const Registered& r, std::ostream& err) {
  const auto start = Clock::now();
  const Loaded in = load_inputs(o, err);
  const ExperimentConfig cfg = experiment_config(o, r, false);
  const auto points = ablate_shots({in.table, in.store}, cfg, o.shots);
  std::vector<AblationRow> rows;
  for (const auto& p : points) {
    const auto summaries = summarize(p.run.rows);
    ExperimentConfig c = cfg;
    c.knowledge = Knowledge::n_shots(p.n_shots);
    write_results(p.run.rows, summaries, fs::path(o.out) / fmt::format("shots_{}", p.n_shots), run_meta(c, p.run, in));
    for (const auto& s : summaries) rows.push_back({fmt::format("{}", p.n_shots), static_cast<double>(p.n_shots), s});
    if (p.run.short_shot_cells > 0) {
      fmt::print(err, "warning: n_shots={}: {} (expert, label) cells had fewer records than requested\n", p.n_shots,
                 p.run.short_shot_cells);
    }
    fmt::print(err, "n_shots={} done at {:.2f}s\n", p.n_shots, seconds_since(start));
  }
  write_ablation(o.out, "n_shots", rows, "shots per label");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Conformal-prediction deferral to segregative experts, with a replay-evaluation harness",
               "conf-deferral"};
  app.require_subcommand(1);
  app.footer(kSchemas);

  RunOptions run_o, grid_o, ae_o, as_o;
  auto* run_cmd = app.add_subcommand("run", "Sweep strategies over splits at the given alpha(s) or the alpha grid");
  const Registered run_r = add_run_options(*run_cmd, run_o, true);
  auto* grid_cmd = app.add_subcommand("grid", "Sweep strategies over splits on the full alpha grid");
  const Registered grid_r = add_run_options(*grid_cmd, grid_o, false);
  auto* ae_cmd = app.add_subcommand("ablate-experts", "Rerun with only the least accurate fraction of experts");
  Registered ae_r = add_run_options(*ae_cmd, ae_o, true);
  ae_r.opts["step"] = ae_cmd->add_option("--step", ae_o.step, "Fraction step from 1.0 downward")->capture_default_str();
  auto* as_cmd = app.add_subcommand("ablate-shots", "Rerun with expert profiles from N records per true label");
  Registered as_r = add_run_options(*as_cmd, as_o, true);
  as_r.opts["shots"] = as_cmd->add_option("--shots", as_o.shots, "Shot counts")->delimiter(',')->capture_default_str();

  std::string synth_config, synth_scenario, synth_out;
  std::uint64_t synth_seed = 0;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic probability table and expert pool");
  auto* synth_cfg_opt = synth_cmd->add_option("--config", synth_config, "Scenario JSON");
  auto* synth_scn_opt =
      synth_cmd->add_option("--scenario", synth_scenario, "Built-in scenario: canonical or ablation");
  auto* synth_seed_opt = synth_cmd->add_option("--seed", synth_seed, "Seed (overrides the scenario's)");
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();
  synth_cfg_opt->excludes(synth_scn_opt);
  synth_cmd->footer(R"(Scenario JSON keys: num_classes, num_samples, model_target_accuracy,
confusion_sharpness, confusion_blocks (list of label lists), seed, experts.
Each expert: kind ("generalist" with accuracy, or "specialist" with block,
inside_accuracy, outside_accuracy), optional coverage, cost, count.
Writes probs.csv, annotations.csv, costs.csv and scenario.json.)");

  std::string report_csv, report_out;
  auto* report_cmd = app.add_subcommand("report", "Summary table and plots from a results.csv");
  report_cmd->add_option("results", report_csv, "results.csv from run or grid")->required();
  report_cmd->add_option("--out", report_out, "Output directory (default: next to results.csv)");
  report_cmd->footer("Writes report.txt, accuracy_vs_alpha_<score>.svg and queries_vs_alpha_<score>.svg and\n"
                     "prints the table to stdout.");

  std::vector<std::string> rest(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(rest.begin(), rest.end());
  try {
    app.parse(rest);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      std::ostringstream help;
      app.exit(e, help, help);
      out << help.str();
      return kExitOk;
    }
    std::ostringstream msg;
    app.exit(e, msg, msg);
    err << "error: " << msg.str();
    if (msg.str().empty() || msg.str().back() != '\n') err << '\n';
    return kExitValidation;
  }

  try {
    if (*run_cmd) {
      apply_config(run_o, run_r);
      cmd_run(run_o, run_r, false, err);
    } else if (*grid_cmd) {
      apply_config(grid_o, grid_r);
      cmd_run(grid_o, grid_r, true, err);
    } else if (*ae_cmd) {
      apply_config(ae_o, ae_r);
      cmd_ablate_experts(ae_o, ae_r, err);
    } else if (*as_cmd) {
      apply_config(as_o, as_r);
      cmd_ablate_shots(as_o, as_r, err);
    } else if (*synth_cmd) {
      SynthConfig cfg;
      if (!synth_config.empty()) {
        cfg = synth_config_from_json(load_json(synth_config));
      } else if (synth_scenario == "canonical") {
        cfg = canonical_scenario(synth_seed);
      } else if (synth_scenario == "ablation") {
        cfg = ablation_scenario(synth_seed);
      } else {
        throw ValidationError("synth needs --config FILE or --scenario canonical|ablation");
      }
      if (synth_seed_opt->count()) cfg.seed = synth_seed;
      const SynthDataset data = gen_dataset(cfg);
      fs::create_directories(synth_out);
      write_probabilities(data.table, fs::path(synth_out) / "probs.csv");
      write_annotations(data.store, fs::path(synth_out) / "annotations.csv");
      std::string costs = "expert_id,cost\n";
      for (std::size_t e = 0; e < data.store.num_experts(); ++e) {
        costs += fmt::format("{},{}\n", data.store.expert_id(e), data.store.cost(e));
      }
      write_text(fs::path(synth_out) / "costs.csv", costs);
      write_text(fs::path(synth_out) / "scenario.json", to_json(cfg).dump(2) + "\n");
      fmt::print(err, "wrote {} samples and {} annotations to {}\n", data.table.size(), data.store.records().size(),
                 synth_out);
    } else if (*report_cmd) {
      const auto rows = load_results(report_csv);
      if (rows.empty()) throw ValidationError(fmt::format("{} has no result rows", report_csv));
      const fs::path dir = report_out.empty() ? fs::path(report_csv).parent_path() : fs::path(report_out);
      const auto written = write_report(rows, dir.empty() ? fs::path(".") : dir);
      out << format_summary_table(summarize(rows));
      for (const auto& p : written) fmt::print(err, "wrote {}\n", p.string());
    }
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace cpdefer::cli
