#include <gtest/gtest.h>

#include "cpdefer/error.hpp"
#include "cpdefer/policy.hpp"

namespace cpdefer {
namespace {

ConformalThreshold aps(double tau) {
  ConformalThreshold t;
  t.tau = tau;
  t.kind = ScoreKind::APS;
  t.num_classes = 3;
  return t;
}

ConfusionMatrix accuracy_matrix(std::int64_t correct, std::int64_t wrong) {
  ConfusionMatrix cm(3);
  cm.add(0, 0, correct);
  if (wrong > 0) cm.add(0, 1, wrong);
  return cm;
}

TEST(Decide, SingletonAcceptsModel) {
  Rng rng(1);
  const ProbVector p({0.05, 0.05, 0.9});
  for (Strategy s : {Strategy::Segregativity, Strategy::NaiveMostAccurate, Strategy::NaiveRandom}) {
    const Decision d = decide(p, aps(0.5), nullptr, {}, s, TieRule::Random, rng);
    EXPECT_FALSE(d.deferred());
    EXPECT_EQ(d.label, 2);
    EXPECT_EQ(d.set_size, 1u);
  }
}

TEST(Decide, NaiveMostAccuratePicksHighestOverall) {
  Rng rng(1);
  const std::vector<ExpertProfile> experts{{"low", accuracy_matrix(80, 20), 1.0}, {"high", accuracy_matrix(99, 1), 1.0}};
  const Decision d = decide(ProbVector({0.4, 0.3, 0.3}), aps(0.95), nullptr, experts, Strategy::NaiveMostAccurate,
                            TieRule::Random, rng);
  EXPECT_EQ(d.set_size, 3u);
  ASSERT_TRUE(d.deferred());
  EXPECT_EQ(*d.expert_id, "high");
}

TEST(Decide, SegregativityPicksBestOnTheSet) {
  Rng rng(1);
  ConfusionMatrix e1(3), e2(3);
  for (auto [t, p] : std::vector<std::pair<int, int>>{{0, 0}, {0, 1}, {1, 1}, {2, 2}, {2, 0}}) e1.add(t, p);
  for (auto [t, p] : std::vector<std::pair<int, int>>{{0, 0}, {1, 1}, {2, 0}, {2, 1}}) e2.add(t, p);
  const std::vector<ExpertProfile> experts{{"e1", e1, 1.0}, {"e2", e2, 1.0}};
  const Decision d = decide(ProbVector({0.5, 0.3, 0.2}), aps(0.6), nullptr, experts, Strategy::Segregativity,
                            TieRule::Random, rng);
  EXPECT_EQ(d.set_size, 2u);
  ASSERT_TRUE(d.deferred());
  EXPECT_EQ(*d.expert_id, "e2");
}

TEST(Decide, ModelOnlyNeverDefers) {
  Rng rng(1);
  const Decision d = decide(ProbVector({0.3, 0.3, 0.4}), aps(0.99), nullptr, {}, Strategy::ModelOnly, TieRule::Random, rng);
  EXPECT_FALSE(d.deferred());
  EXPECT_EQ(d.label, 2);
}

TEST(Decide, ExpertBaselinesAlwaysDefer) {
  Rng rng(1);
  const std::vector<ExpertProfile> experts{{"a", accuracy_matrix(5, 5), 1.0}, {"b", accuracy_matrix(9, 1), 1.0}};
  const ProbVector confident({0.98, 0.01, 0.01});
  const Decision best = decide(confident, aps(0.5), nullptr, experts, Strategy::BestExpert, TieRule::Random, rng);
  ASSERT_TRUE(best.deferred());
  EXPECT_EQ(*best.expert_id, "b");
  EXPECT_TRUE(decide(confident, aps(0.5), nullptr, experts, Strategy::RandomExpert, TieRule::Random, rng).deferred());
}

TEST(Decide, NoCandidateWhenDeferralNeeded) {
  Rng rng(1);
  EXPECT_THROW(decide(ProbVector({0.4, 0.3, 0.3}), aps(0.95), nullptr, {}, Strategy::Segregativity, TieRule::Random, rng),
               ReplayError);
  EXPECT_THROW(decide(ProbVector({0.9, 0.05, 0.05}), aps(0.5), nullptr, {}, Strategy::BestExpert, TieRule::Random, rng),
               ReplayError);
}

TEST(Decide, LacEmptySetDefers) {
  Rng rng(1);
  ConformalThreshold lac;
  lac.tau = 0.1;
  lac.kind = ScoreKind::LAC;
  const std::vector<ExpertProfile> experts{{"a", accuracy_matrix(5, 5), 1.0}, {"b", accuracy_matrix(9, 1), 1.0}};
  const Decision d = decide(ProbVector({0.4, 0.35, 0.25}), lac, nullptr, experts, Strategy::Segregativity, TieRule::Random, rng);
  EXPECT_EQ(d.set_size, 0u);
  ASSERT_TRUE(d.deferred());
  EXPECT_EQ(*d.expert_id, "b");
}

TEST(Decide, SingleExpertMakesDeferringStrategiesAgree) {
  const std::vector<ExpertProfile> one{{"solo", accuracy_matrix(3, 2), 1.0}};
  for (double tau : {0.3, 0.6, 0.8, 0.95}) {
    std::vector<Decision> ds;
    for (Strategy s : {Strategy::Segregativity, Strategy::NaiveMostAccurate, Strategy::NaiveRandom}) {
      Rng rng(9);
      ds.push_back(decide(ProbVector({0.45, 0.35, 0.2}), aps(tau), nullptr, one, s, TieRule::Random, rng));
    }
    for (const Decision& d : ds) {
      EXPECT_EQ(d.expert_id, ds.front().expert_id);
      EXPECT_EQ(d.label, ds.front().label);
    }
  }
}

TEST(Resolve, ModelDecision) {
  Decision d;
  d.label = 1;
  d.set_size = 1;
  const Outcome o = resolve(d, {}, 1);
  EXPECT_TRUE(o.correct);
  EXPECT_FALSE(o.queried_expert);
}

TEST(Resolve, ExpertDecisionChargesOneQuery) {
  Decision d;
  d.expert_id = "k";
  const std::vector<ExpertLabel> anns{{"j", 2}, {"k", 0}};
  const Outcome o = resolve(d, anns, 2);
  EXPECT_EQ(o.final_label, 0);
  EXPECT_FALSE(o.correct);
  EXPECT_EQ(o.queried_expert, std::optional<std::string>("k"));
}

TEST(Resolve, MissingAnnotation) {
  Decision d;
  d.expert_id = "ghost";
  const std::vector<ExpertLabel> anns{{"k", 0}};
  EXPECT_THROW(resolve(d, anns, 0), ReplayError);
}

TEST(Strategy, ParseRoundTrip) {
  for (Strategy s : kAllStrategies) EXPECT_EQ(parse_strategy(to_string(s)), s);
  EXPECT_THROW(parse_strategy("oracle"), ValidationError);
}

}  // namespace
}  // namespace cpdefer
