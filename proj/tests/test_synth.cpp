#include <cmath>

#include <gtest/gtest.h>

#include "cpdefer/error.hpp"
#include "cpdefer/evaluation.hpp"
#include "cpdefer/synth.hpp"

namespace cpdefer {
namespace {

double argmax_accuracy(const ProbabilityTable& t) { return model_accuracy(t); }

double expert_accuracy(const SynthDataset& d, std::size_t e) {
  std::size_t correct = 0;
  const auto recs = d.store.for_expert(e);
  for (const auto& r : recs) correct += d.table[r.row].truth == r.label;
  return static_cast<double>(correct) / static_cast<double>(recs.size());
}

TEST(TheoreticalAccuracy, Formula) {
  EXPECT_DOUBLE_EQ(theoretical_expert_accuracy(ExpertSpec::generalist(0.9), 10), 0.9);
  EXPECT_DOUBLE_EQ(theoretical_expert_accuracy(ExpertSpec::specialist({3, 7}, 1.0, 0.5), 10), 0.6);
  EXPECT_DOUBLE_EQ(theoretical_expert_accuracy(ExpertSpec::specialist({0, 1, 2}, 0.7, 0.7), 10), 0.7);
}

TEST(GenDataset, PerfectGeneralistCopiesTruth) {
  SynthConfig cfg;
  cfg.num_classes = 4;
  cfg.num_samples = 500;
  cfg.model_target_accuracy = 0.7;
  cfg.experts = {ExpertSpec::generalist(1.0)};
  cfg.seed = 2;
  const auto d = gen_dataset(cfg);
  ASSERT_EQ(d.store.for_expert(0).size(), 500u);
  for (const auto& r : d.store.for_expert(0)) EXPECT_EQ(r.label, d.table[r.row].truth);
}

TEST(GenDataset, ModelAccuracyNearTarget) {
  for (double target : {0.6, 0.8, 0.9, 0.95}) {
    SynthConfig cfg;
    cfg.num_classes = 10;
    cfg.num_samples = 10000;
    cfg.model_target_accuracy = target;
    cfg.experts = {ExpertSpec::generalist(0.9)};
    cfg.seed = 3;
    EXPECT_NEAR(argmax_accuracy(gen_dataset(cfg).table), target, 0.02) << target;
  }
}

TEST(GenDataset, PerfectModelLimit) {
  SynthConfig cfg;
  cfg.num_classes = 5;
  cfg.num_samples = 2000;
  cfg.model_target_accuracy = 1.0;
  cfg.experts = {ExpertSpec::generalist(0.9)};
  EXPECT_GT(argmax_accuracy(gen_dataset(cfg).table), 0.999);
}

TEST(GenDataset, ExpertAccuracyConverges) {
  SynthConfig cfg = canonical_scenario(4);
  cfg.num_samples = 20000;
  cfg.experts.push_back(ExpertSpec::generalist(0.7, 0.5));
  const auto d = gen_dataset(cfg);
  for (std::size_t e = 0; e < cfg.experts.size(); ++e) {
    const double want = theoretical_expert_accuracy(cfg.experts[e], cfg.num_classes);
    const double n = static_cast<double>(d.store.for_expert(e).size());
    const double se = std::sqrt(want * (1 - want) / n);
    EXPECT_NEAR(expert_accuracy(d, e), want, 3 * se) << e;
  }
}

TEST(GenDataset, CoverageKeepsEveryRowAnnotated) {
  SynthConfig cfg;
  cfg.num_classes = 3;
  cfg.num_samples = 3000;
  cfg.model_target_accuracy = 0.8;
  cfg.experts = {ExpertSpec::generalist(0.9, 0.2), ExpertSpec::generalist(0.8, 0.2)};
  const auto d = gen_dataset(cfg);
  for (std::size_t r = 0; r < d.table.size(); ++r) EXPECT_FALSE(d.store.for_row(r).empty());
  const double share = static_cast<double>(d.store.for_expert(0).size()) / 3000.0;
  EXPECT_GT(share, 0.2);
  EXPECT_LT(share, 0.7);
}

TEST(GenDataset, Deterministic) {
  const auto a = gen_dataset(canonical_scenario(9));
  const auto b = gen_dataset(canonical_scenario(9));
  const auto c = gen_dataset(canonical_scenario(10));
  ASSERT_EQ(a.table.size(), b.table.size());
  for (std::size_t i = 0; i < a.table.size(); ++i) {
    EXPECT_TRUE(std::ranges::equal(a.table[i].probs.values(), b.table[i].probs.values()));
  }
  EXPECT_TRUE(std::ranges::equal(a.store.records(), b.store.records()));
  EXPECT_FALSE(std::ranges::equal(a.store.records(), c.store.records()));
  EXPECT_EQ(a.table[0].sample_id, "s000000");
  EXPECT_EQ(a.store.expert_id(0), "e00");
}

TEST(GenDataset, ModelConfusionsStayInBlock) {
  const auto d = gen_dataset(canonical_scenario(12));
  std::size_t wrong = 0, in_block = 0;
  for (const auto& row : d.table.rows()) {
    const int top = row.probs.argmax();
    if (top == row.truth || row.truth == 9) continue;
    ++wrong;
    in_block += top / 3 == row.truth / 3;
  }
  ASSERT_GT(wrong, 100u);
  EXPECT_EQ(in_block, wrong);
}

TEST(SynthConfig, Validation) {
  SynthConfig cfg;
  cfg.experts = {ExpertSpec::generalist(0.9)};
  cfg.model_target_accuracy = 0.05;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg.model_target_accuracy = 0.9;
  cfg.num_samples = 5;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg.num_samples = 100;
  cfg.experts = {ExpertSpec::specialist({}, 0.9, 0.5)};
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg.experts = {ExpertSpec::generalist(1.2)};
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg.experts = {ExpertSpec::generalist(0.9, 0.0)};
  EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(SynthConfig, JsonRoundTrip) {
  const SynthConfig cfg = canonical_scenario(21);
  const SynthConfig back = synth_config_from_json(to_json(cfg));
  EXPECT_EQ(to_json(back), to_json(cfg));
  nlohmann::json j = to_json(cfg);
  j["colour"] = "blue";
  EXPECT_THROW(synth_config_from_json(j), ValidationError);
  nlohmann::json replicated = {{"num_classes", 4},
                               {"num_samples", 100},
                               {"model_target_accuracy", 0.8},
                               {"experts", {{{"kind", "generalist"}, {"accuracy", 0.8}, {"count", 3}}}}};
  EXPECT_EQ(synth_config_from_json(replicated).experts.size(), 3u);
}

// With a near-perfect model the best alpha defers little; with a weak model
// and an excellent expert it defers a lot, i.e. alpha_opt sits lower.
TEST(Scenarios, AlphaOptTracksWhoIsStronger) {
  const auto alpha_opt = [](double model_acc, double expert_acc) {
    SynthConfig cfg;
    cfg.num_classes = 10;
    cfg.num_samples = 2000;
    cfg.model_target_accuracy = model_acc;
    cfg.experts = {ExpertSpec::generalist(expert_acc)};
    cfg.seed = 5;
    const auto d = gen_dataset(cfg);
    ExperimentConfig ec;
    ec.strategies = {Strategy::Segregativity};
    ec.alphas = {0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7};
    ec.cal_size = 500;
    ec.splits = 3;
    ec.seed = 1;
    const auto run = run_experiment({d.table, d.store}, ec);
    return select_alpha_opt(run.rows);
  };
  EXPECT_GT(alpha_opt(0.97, 0.7), alpha_opt(0.7, 0.99));
}

}  // namespace
}  // namespace cpdefer
