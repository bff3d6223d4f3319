// Reference values below were computed offline with scipy 1.15
// (scipy.stats.shapiro, ttest_1samp, wilcoxon, t.cdf; scipy.special.betainc)
// and by direct enumeration of sign patterns.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include <gtest/gtest.h>

#include "cpdefer/error.hpp"
#include "cpdefer/stats.hpp"

namespace cpdefer::stats {
namespace {

std::vector<double> zeros(std::size_t n) { return std::vector<double>(n, 0.0); }

TEST(Special, IncompleteBeta) {
  EXPECT_NEAR(incomplete_beta(2.5, 0.5, 0.3), 0.018927124071945658, 1e-12);
  EXPECT_NEAR(incomplete_beta(10, 3, 0.9), 0.889130022255, 1e-11);
  EXPECT_NEAR(incomplete_beta(0.5, 0.5, 0.5), 0.5, 1e-12);
  EXPECT_EQ(incomplete_beta(2, 3, 0.0), 0.0);
  EXPECT_EQ(incomplete_beta(2, 3, 1.0), 1.0);
}

TEST(Special, StudentT) {
  EXPECT_NEAR(student_t_cdf(1.5, 3), 0.8847080673775886, 1e-12);
  EXPECT_NEAR(student_t_cdf(-2.2, 19), 0.020190550823087065, 1e-12);
  EXPECT_NEAR(student_t_cdf(0.3, 100), 0.6176000598498482, 1e-12);
  EXPECT_DOUBLE_EQ(student_t_cdf(0.0, 7), 0.5);
}

TEST(Special, Normal) {
  EXPECT_NEAR(normal_cdf(1.2345), 0.8914916766373298, 1e-14);
  EXPECT_NEAR(normal_quantile(0.975), 1.959963984540054, 1e-12);
  EXPECT_NEAR(normal_quantile(1e-6), -4.753424308822899, 1e-10);
}

TEST(ShapiroWilk, ReferenceValues) {
  struct Case {
    std::vector<double> x;
    double w, p;
  };
  const std::vector<Case> cases{
      {{1, 2, 3, 4, 5}, 0.986762155211559, 0.9671739349728582},
      {{1, 2, 4}, 0.9642857142857142, 0.6368868450289689},
      {{2.1, 3.4, 1.9, 5.6, 4.4, 3.3, 2.8, 4.9}, 0.9516729236947936, 0.7280829599031465},
      {{0.5, 1.2, -0.3, 2.2, 0.9, 1.1, 1.8, -0.7, 0.4, 1.5, 2.9, 0.1, -1.2, 0.8, 1.3, 0.6, 2.4, -0.2, 1.0, 0.7},
       0.9910979321741034, 0.9991505080408571},
      {{1, 1, 1, 1, 2, 2, 3, 9, 15, 40, 41, 80}, 0.691351323363154, 0.0006964688996419615},
  };
  for (const auto& c : cases) {
    const TestResult r = shapiro_wilk(c.x);
    EXPECT_NEAR(r.statistic, c.w, 1e-4) << c.x.size();
    EXPECT_NEAR(r.p_value, c.p, 1e-3) << c.x.size();
    EXPECT_EQ(r.n_effective, c.x.size());
  }
}

TEST(ShapiroWilk, Errors) {
  EXPECT_THROW(shapiro_wilk(std::vector<double>{1, 2}), ValidationError);
  EXPECT_THROW(shapiro_wilk(std::vector<double>{3, 3, 3, 3}), ValidationError);
  EXPECT_THROW(shapiro_wilk(std::vector<double>(5001, 1.0)), ValidationError);
}

TEST(ShapiroWilk, OrderDoesNotMatter) {
  std::vector<double> x{2.1, 3.4, 1.9, 5.6, 4.4, 3.3, 2.8, 4.9, 0.2, 7.7};
  const double w = shapiro_wilk(x).statistic;
  std::mt19937_64 rng(1);
  std::shuffle(x.begin(), x.end(), rng);
  EXPECT_DOUBLE_EQ(shapiro_wilk(x).statistic, w);
}

TEST(PairedT, ReferenceValues) {
  const std::vector<double> d{1, 2, 3, 4, 5};
  const TestResult r = paired_t_one_tailed(d, zeros(5));
  EXPECT_NEAR(r.statistic, 4.242640687119285, 1e-12);
  EXPECT_NEAR(r.p_value, 0.0066177997818413475, 1e-12);

  const std::vector<double> d2{0.3, -0.1, 0.25, 0.4, 0.05, -0.2, 0.15, 0.33};
  EXPECT_NEAR(paired_t_one_tailed(d2, zeros(8)).p_value, 0.04648487849387537, 1e-12);
  const std::vector<double> d3{-1, -2, -3.5};
  EXPECT_NEAR(paired_t_one_tailed(d3, zeros(3)).p_value, 0.9517812304569953, 1e-12);
}

TEST(PairedT, IdenticalInputs) {
  const std::vector<double> a{0.9, 0.8, 0.95};
  const TestResult r = paired_t_one_tailed(a, a);
  EXPECT_EQ(r.statistic, 0.0);
  EXPECT_EQ(r.p_value, 0.5);
}

TEST(PairedT, Errors) {
  const std::vector<double> ones{1, 1, 1};
  EXPECT_THROW(paired_t_one_tailed(ones, zeros(3)), ValidationError);
  EXPECT_THROW(paired_t_one_tailed(ones, zeros(2)), ValidationError);
  EXPECT_THROW(paired_t_one_tailed(std::vector<double>{1}, zeros(1)), ValidationError);
}

TEST(PairedT, ShiftingTheMethodUpLowersP) {
  std::vector<double> a{0.3, -0.1, 0.25, 0.4, 0.05, -0.2, 0.15, 0.33};
  const auto b = zeros(a.size());
  double last = paired_t_one_tailed(a, b).p_value;
  for (int step = 0; step < 10; ++step) {
    for (double& v : a) v += 0.01;
    const double p = paired_t_one_tailed(a, b).p_value;
    EXPECT_LT(p, last);
    last = p;
  }
}

TEST(Wilcoxon, ExactReferenceValues) {
  const TestResult r = wilcoxon_one_tailed(std::vector<double>{1, 2, 3}, zeros(3));
  EXPECT_EQ(r.statistic, 0.0);
  EXPECT_DOUBLE_EQ(r.p_value, 0.125);
  EXPECT_DOUBLE_EQ(wilcoxon_one_tailed(std::vector<double>{-1, -2, -3}, zeros(3)).p_value, 1.0);
  EXPECT_DOUBLE_EQ(wilcoxon_one_tailed(std::vector<double>{1, -2, 3, 4, -5, 6, 7, 8}, zeros(8)).p_value, 0.07421875);
}

TEST(Wilcoxon, ExactWithTiedMagnitudes) {
  // Mid-ranks 1, 2.5, 2.5, 4.5, 4.5, 6.5, 6.5, 8; W- = 5.5; 11 of 256 sign
  // patterns reach W- <= 5.5.
  const std::vector<double> d{1, 1, 2, -2, 3, 3, -0.5, 4};
  const TestResult r = wilcoxon_one_tailed(d, zeros(d.size()));
  EXPECT_DOUBLE_EQ(r.statistic, 5.5);
  EXPECT_DOUBLE_EQ(r.p_value, 11.0 / 256.0);
}

TEST(Wilcoxon, ZerosAreDropped) {
  const TestResult r = wilcoxon_one_tailed(std::vector<double>{0, 1, 2, 0, 3}, zeros(5));
  EXPECT_EQ(r.n_effective, 3u);
  EXPECT_DOUBLE_EQ(r.p_value, 0.125);
}

TEST(Wilcoxon, NormalApproximation) {
  const std::vector<double> d{2.34, -2.26, 0.72, -0.27, -0.15, 0.08, -1.72, 0.07, -0.57, 3.62,
                              0.53, -0.05, 0.02,  -0.37, -0.76, -0.09, 0.78, 0.06, 1.26,  0.1,
                              0.32, 1.85,  0.85,  -0.21, 0.12,  0.84,  2.24, 0.03, 0.06,  1.3};
  EXPECT_NEAR(wilcoxon_one_tailed(d, zeros(d.size())).p_value, 0.04784878641659812, 1e-12);
  const std::vector<double> ties{1,  1,  2,  2,  2,  -3, 4,  5,  5,  -6, 7,  8,  9,  -10, 11,
                                 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, -23, 24, 25, 26};
  EXPECT_NEAR(wilcoxon_one_tailed(ties, zeros(ties.size())).p_value, 0.00015908988922718397, 1e-12);
}

TEST(Wilcoxon, AllZero) {
  EXPECT_THROW(wilcoxon_one_tailed(zeros(4), zeros(4)), ValidationError);
}

// Every achievable W- of a fixed magnitude vector, weighted by its exact
// null probability, must account for all 2^n sign patterns.
TEST(Wilcoxon, ExactNullSumsToOne) {
  const std::vector<double> mags{0.5, 1, 1, 2, 3, 3, 3, 7, 9};
  const std::size_t n = mags.size();
  std::map<double, int> counts;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    std::vector<double> d(mags);
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (1u << i)) d[i] = -d[i];
    }
    counts[wilcoxon_one_tailed(d, zeros(n)).statistic] += 1;
  }
  double previous_p = 0.0;
  int cumulative = 0;
  for (const auto& [w, count] : counts) {
    cumulative += count;
    // Any pattern reaching exactly w reports P(W- <= w).
    std::vector<double> d(mags);
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
      std::vector<double> probe(mags);
      for (std::size_t i = 0; i < n; ++i) {
        if (mask & (1u << i)) probe[i] = -probe[i];
      }
      if (wilcoxon_one_tailed(probe, zeros(n)).statistic == w) {
        d = probe;
        break;
      }
    }
    const double p = wilcoxon_one_tailed(d, zeros(n)).p_value;
    EXPECT_NEAR(p, static_cast<double>(cumulative) / (1 << n), 1e-12);
    EXPECT_GT(p, previous_p);
    previous_p = p;
  }
  EXPECT_NEAR(previous_p, 1.0, 1e-12);
}

TEST(PairedTests, JointPermutationInvariance) {
  std::vector<double> a{0.91, 0.93, 0.95, 0.9, 0.97, 0.92, 0.94};
  std::vector<double> b{0.9, 0.9, 0.96, 0.88, 0.93, 0.93, 0.9};
  const double t = paired_t_one_tailed(a, b).p_value;
  const double w = wilcoxon_one_tailed(a, b).p_value;
  std::vector<std::size_t> idx{6, 2, 0, 5, 1, 4, 3};
  std::vector<double> pa, pb;
  for (std::size_t i : idx) pa.push_back(a[i]), pb.push_back(b[i]);
  EXPECT_DOUBLE_EQ(paired_t_one_tailed(pa, pb).p_value, t);
  EXPECT_DOUBLE_EQ(wilcoxon_one_tailed(pa, pb).p_value, w);
}

}  // namespace
}  // namespace cpdefer::stats
