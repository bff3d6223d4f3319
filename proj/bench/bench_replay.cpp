// Serial reference replay against the OpenMP kernel on one split of the
// canonical scenario.

#include <benchmark/benchmark.h>

#include "cpdefer/evaluation.hpp"
#include "cpdefer/synth.hpp"

namespace {

using namespace cpdefer;

const SynthDataset& dataset() {
  static const SynthDataset data = [] {
    SynthConfig cfg = canonical_scenario(1);
    cfg.num_samples = 3000;
    return gen_dataset(cfg);
  }();
  return data;
}

ExperimentConfig config(std::size_t n_alphas, int jobs) {
  ExperimentConfig cfg;
  cfg.score = ScoreKind::APS;
  const auto grid = alpha_grid(0.9);
  for (std::size_t i = 0; i < n_alphas; ++i) cfg.alphas.push_back(grid[i * grid.size() / n_alphas]);
  cfg.jobs = jobs;
  return cfg;
}

void BM_Reference(benchmark::State& state) {
  const auto& d = dataset();
  const auto cfg = config(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(run_split_reference({d.table, d.store}, cfg, SplitSpec::derive(1, 1000, 0), cfg.alphas));
  }
}

void BM_Kernel(benchmark::State& state) {
  const auto& d = dataset();
  const auto cfg = config(static_cast<std::size_t>(state.range(0)), static_cast<int>(state.range(1)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(run_split({d.table, d.store}, cfg, SplitSpec::derive(1, 1000, 0), cfg.alphas));
  }
}

BENCHMARK(BM_Reference)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Kernel)->ArgsProduct({{4, 16, 162}, {1, 2, 4, 8}})->Unit(benchmark::kMillisecond)->UseRealTime();

}  // namespace

BENCHMARK_MAIN();
