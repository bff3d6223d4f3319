#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "cpdefer/conformal.hpp"
#include "cpdefer/error.hpp"
#include "cpdefer/synth.hpp"
#include "support.hpp"

namespace cpdefer {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

ConformalThreshold threshold(double tau, ScoreKind kind) {
  ConformalThreshold t;
  t.tau = tau;
  t.kind = kind;
  return t;
}

std::vector<double> random_probs(std::mt19937_64& rng, std::size_t c) {
  std::gamma_distribution<double> g(0.5, 1.0);
  std::vector<double> p(c);
  double sum = 0.0;
  for (double& v : p) sum += (v = g(rng) + 1e-12);
  for (double& v : p) v /= sum;
  return p;
}

TEST(Scores, Lac) {
  EXPECT_DOUBLE_EQ(score_lac(ProbVector({0.7, 0.2, 0.1}), 0), 0.3);
  EXPECT_DOUBLE_EQ(score_lac(ProbVector({0.0, 1.0, 0.0}), 1), 0.0);
  EXPECT_DOUBLE_EQ(score_lac(ProbVector({0.25, 0.25, 0.25, 0.25}), 2), 0.75);
}

TEST(Scores, Aps) {
  const ProbVector p({0.5, 0.3, 0.2});
  EXPECT_DOUBLE_EQ(score_aps(p, 1), 0.8);
  EXPECT_DOUBLE_EQ(score_aps(p, 0), 0.5);
  EXPECT_DOUBLE_EQ(score_aps(ProbVector({0.4, 0.4, 0.2}), 1), 0.8);
  EXPECT_DOUBLE_EQ(score_aps(ProbVector({0.4, 0.4, 0.2}), 0), 0.4);
}

TEST(Scores, Raps) {
  const ProbVector p({0.5, 0.3, 0.2});
  EXPECT_DOUBLE_EQ(score_raps(p, 2, {1, 0.1}), 1.2);
  EXPECT_DOUBLE_EQ(score_raps(p, 0, {1, 0.5}), 0.5);
}

TEST(Scores, OutOfRangeLabel) {
  const ProbVector p({0.5, 0.5});
  EXPECT_THROW(score_lac(p, 2), ValidationError);
  EXPECT_THROW(score_aps(p, -1), ValidationError);
  EXPECT_THROW(score(ScoreKind::RAPS, p, 0, nullptr), ValidationError);
}

TEST(Scores, RapsWithZeroLambdaEqualsAps) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    const ProbVector p(random_probs(rng, 2 + trial % 9));
    for (int y = 0; y < static_cast<int>(p.size()); ++y) {
      EXPECT_EQ(score_raps(p, y, {static_cast<int>(trial % 3), 0.0}), score_aps(p, y));
    }
  }
}

TEST(Scores, RankedScoresMatchPointScores) {
  std::mt19937_64 rng(6);
  const RapsParams raps{2, 0.03};
  for (int trial = 0; trial < 300; ++trial) {
    const ProbVector p(random_probs(rng, 2 + trial % 7));
    for (ScoreKind kind : {ScoreKind::LAC, ScoreKind::APS, ScoreKind::RAPS}) {
      const auto ranked = ranked_scores(kind, p, &raps);
      EXPECT_TRUE(std::is_sorted(ranked.begin(), ranked.end()));
      for (std::size_t i = 0; i < ranked.size(); ++i) EXPECT_EQ(ranked[i], score(kind, p, p.order()[i], &raps));
    }
  }
}

TEST(Calibrate, RankRule) {
  const std::vector<double> s{0.3, 0.1, 0.4, 0.2};
  EXPECT_DOUBLE_EQ(calibrate(s, 0.25).tau, 0.4);
  const std::vector<double> one{0.5};
  EXPECT_EQ(calibrate(one, 0.4).tau, kInf);
  EXPECT_TRUE(calibrate(one, 0.4).admits_all());
  const std::vector<double> two{0.9, 0.1};
  EXPECT_DOUBLE_EQ(calibrate(two, 0.5).tau, 0.9);
}

TEST(Calibrate, RankIsExactOnIntegerProducts) {
  // (9 + 1) * 0.9 is 9.000000000000002 in floating point.
  EXPECT_EQ(conformal_rank(9, 0.1), 9u);
  EXPECT_EQ(conformal_rank(999, 0.1), 900u);
  EXPECT_EQ(conformal_rank(1000, 0.1), 901u);
}

TEST(Calibrate, Errors) {
  const std::vector<double> empty;
  EXPECT_THROW(calibrate(empty, 0.1), ValidationError);
  const std::vector<double> s{0.1};
  EXPECT_THROW(calibrate(s, 0.0), ValidationError);
  EXPECT_THROW(calibrate(s, 1.0), ValidationError);
}

TEST(PredictSet, Examples) {
  EXPECT_EQ(predict_set(ProbVector({0.7, 0.2, 0.1}), threshold(0.5, ScoreKind::LAC)).labels, std::vector<int>{0});
  EXPECT_TRUE(predict_set(ProbVector({0.4, 0.35, 0.25}), threshold(0.1, ScoreKind::LAC)).empty());
  EXPECT_EQ(predict_set(ProbVector({0.5, 0.3, 0.2}), threshold(0.6, ScoreKind::APS)).labels,
            (std::vector<int>{0, 1}));
}

TEST(PredictSet, ApsNeverEmptyEvenBelowEveryScore) {
  EXPECT_EQ(predict_set(ProbVector({0.2, 0.5, 0.3}), threshold(0.0, ScoreKind::APS)).labels, std::vector<int>{1});
}

TEST(PredictSet, InfiniteThresholdAdmitsAll) {
  const RapsParams raps{1, 0.5};
  for (ScoreKind kind : {ScoreKind::LAC, ScoreKind::APS, ScoreKind::RAPS}) {
    const auto set = predict_set(ProbVector({0.2, 0.5, 0.3}), threshold(kInf, kind), kind == ScoreKind::RAPS ? &raps : nullptr);
    EXPECT_EQ(set.size(), 3u);
  }
}

TEST(PredictSet, DimensionAndParameterChecks) {
  auto thr = threshold(0.5, ScoreKind::APS);
  thr.num_classes = 4;
  EXPECT_THROW(predict_set(ProbVector({0.5, 0.5}), thr), ValidationError);
  const RapsParams raps;
  EXPECT_THROW(predict_set(ProbVector({0.5, 0.5}), threshold(0.5, ScoreKind::RAPS)), ValidationError);
  EXPECT_THROW(predict_set(ProbVector({0.5, 0.5}), threshold(0.5, ScoreKind::APS), &raps), ValidationError);
}

// Sets straight from the definitions, as an independent check of
// set_size_from_ranked.
std::vector<int> definition_set(const ProbVector& p, ScoreKind kind, double tau, const RapsParams* raps) {
  std::vector<int> out;
  if (kind == ScoreKind::LAC) {
    for (int y = 0; y < static_cast<int>(p.size()); ++y) {
      if (score_lac(p, y) <= tau) out.push_back(y);
    }
    return out;
  }
  for (int y : p.order()) {
    out.push_back(y);
    if (score(kind, p, y, raps) > tau) break;
  }
  std::sort(out.begin(), out.end());
  return out;
}

TEST(PredictSet, MatchesDefinition) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.3);
  const RapsParams raps{2, 0.05};
  for (int trial = 0; trial < 2000; ++trial) {
    const ProbVector p(random_probs(rng, 2 + trial % 8));
    const double tau = u(rng);
    for (ScoreKind kind : {ScoreKind::LAC, ScoreKind::APS, ScoreKind::RAPS}) {
      const RapsParams* rp = kind == ScoreKind::RAPS ? &raps : nullptr;
      EXPECT_EQ(predict_set(p, threshold(tau, kind), rp).labels, definition_set(p, kind, tau, rp));
    }
  }
}

TEST(PredictSet, NestedInAlphaAndContainsArgmax) {
  std::mt19937_64 rng(8);
  std::vector<double> cal(200);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& s : cal) s = u(rng);
  const CalibrationScores scores(cal, ScoreKind::APS);
  for (int trial = 0; trial < 200; ++trial) {
    const ProbVector p(random_probs(rng, 6));
    std::vector<int> previous;
    for (double alpha = 0.01; alpha < 0.99; alpha += 0.02) {
      const auto set = predict_set(p, scores.threshold(alpha));
      EXPECT_TRUE(set.contains(p.argmax()));
      if (!previous.empty()) EXPECT_TRUE(std::includes(previous.begin(), previous.end(), set.labels.begin(), set.labels.end()));
      previous = set.labels;
    }
  }
}

TEST(PredictSet, LacSingletonIsArgmax) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int singletons = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const ProbVector p(random_probs(rng, 5));
    const auto set = predict_set(p, threshold(u(rng), ScoreKind::LAC));
    if (set.size() == 1) {
      ++singletons;
      EXPECT_EQ(set.labels.front(), p.argmax());
    }
  }
  EXPECT_GT(singletons, 100);
}

TEST(PredictSet, PermutationEquivariance) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 1.2);
  const RapsParams raps{1, 0.1};
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t c = 6;
    auto values = random_probs(rng, c);
    std::vector<int> perm(c);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> permuted(c);
    for (std::size_t i = 0; i < c; ++i) permuted[static_cast<std::size_t>(perm[i])] = values[i];
    const double tau = u(rng);
    for (ScoreKind kind : {ScoreKind::LAC, ScoreKind::APS, ScoreKind::RAPS}) {
      const RapsParams* rp = kind == ScoreKind::RAPS ? &raps : nullptr;
      auto a = predict_set(ProbVector(values), threshold(tau, kind), rp).labels;
      for (int& y : a) y = perm[static_cast<std::size_t>(y)];
      std::sort(a.begin(), a.end());
      EXPECT_EQ(a, predict_set(ProbVector(permuted), threshold(tau, kind), rp).labels);
    }
  }
}

TEST(TuneRaps, SingletonGrid) {
  const auto table = testing::make_table(
      {{0.6, 0.3, 0.1}, {0.5, 0.4, 0.1}, {0.2, 0.7, 0.1}, {0.3, 0.3, 0.4}, {0.8, 0.1, 0.1}, {0.1, 0.1, 0.8}},
      {0, 1, 1, 2, 0, 2});
  const std::vector<std::size_t> rows{0, 1, 2, 3, 4, 5};
  const std::vector<RapsParams> grid{{1, 0.0}};
  EXPECT_EQ(tune_raps(table, rows, 0.2, grid), (RapsParams{1, 0.0}));
}

TEST(TuneRaps, TiesGoToSmallerLambda) {
  const auto table = testing::make_table(
      {{0.6, 0.3, 0.1}, {0.5, 0.4, 0.1}, {0.2, 0.7, 0.1}, {0.3, 0.3, 0.4}, {0.8, 0.1, 0.1}, {0.1, 0.1, 0.8}},
      {0, 1, 1, 2, 0, 2});
  const std::vector<std::size_t> rows{0, 1, 2, 3, 4, 5};
  // Both candidates admit everything (tau is infinite for n = 3 at alpha 0.2),
  // so sizes tie.
  const std::vector<RapsParams> grid{{1, 0.5}, {1, 0.01}};
  EXPECT_EQ(tune_raps(table, rows, 0.2, grid), (RapsParams{1, 0.01}));
}

TEST(TuneRaps, Errors) {
  const auto table = testing::make_table({{0.6, 0.4}, {0.5, 0.5}, {0.2, 0.8}}, {0, 1, 1});
  const std::vector<std::size_t> rows{0, 1, 2};
  const std::vector<RapsParams> grid{{1, 0.0}};
  EXPECT_THROW(tune_raps(table, rows, 0.1, grid), ValidationError);
  const std::vector<std::size_t> four{0, 1, 2, 0};
  EXPECT_THROW(tune_raps(table, four, 0.1, std::span<const RapsParams>{}), ValidationError);
}

// Peaked synthetic outputs: exhaustive grid evaluation recomputed here, the
// large-lambda candidate gives the smallest covering sets and must win.
TEST(TuneRaps, PeakedOutputsPreferLargeLambda) {
  SynthConfig cfg;
  cfg.num_classes = 10;
  cfg.num_samples = 2000;
  cfg.model_target_accuracy = 0.95;
  cfg.confusion_sharpness = 0.3;
  cfg.seed = 21;
  const auto data = gen_dataset(cfg);
  std::vector<std::size_t> rows(data.table.size());
  std::iota(rows.begin(), rows.end(), 0);
  const std::vector<RapsParams> grid{{1, 0.001}, {1, 0.5}};
  const double alpha = 0.1;

  const auto half = rows.size() / 2;
  std::vector<double> sizes;
  std::vector<double> coverage;
  for (const auto& params : grid) {
    const auto thr = calibrate(calibration_scores(data.table, std::span(rows).first(half), ScoreKind::RAPS, &params),
                               alpha, ScoreKind::RAPS, 10);
    double size = 0.0;
    double covered = 0.0;
    for (std::size_t i = half; i < rows.size(); ++i) {
      const auto set = predict_set(data.table[i].probs, thr, &params);
      size += static_cast<double>(set.size());
      covered += set.contains(data.table[i].truth);
    }
    sizes.push_back(size);
    coverage.push_back(covered / static_cast<double>(rows.size() - half));
  }
  ASSERT_GE(coverage[1], 1.0 - alpha);
  ASSERT_LT(sizes[1], sizes[0]);
  EXPECT_EQ(tune_raps(data.table, rows, alpha, grid), grid[1]);
}

TEST(RapsParams, Validation) {
  EXPECT_NO_THROW((RapsParams{0, 0.0}).validate(3));
  EXPECT_THROW((RapsParams{4, 0.1}).validate(3), ValidationError);
  EXPECT_THROW((RapsParams{1, -0.1}).validate(3), ValidationError);
  EXPECT_THROW((RapsParams{1, kInf}).validate(3), ValidationError);
}

TEST(RapsParams, DefaultGrid) {
  EXPECT_EQ(default_raps_grid(10).size(), 16u);
  EXPECT_EQ(default_raps_grid(3).size(), 12u);
}

TEST(ScoreKind, ParseRoundTrip) {
  for (ScoreKind k : {ScoreKind::LAC, ScoreKind::APS, ScoreKind::RAPS}) EXPECT_EQ(parse_score_kind(to_string(k)), k);
  EXPECT_THROW(parse_score_kind("thr"), ValidationError);
}

}  // namespace
}  // namespace cpdefer
