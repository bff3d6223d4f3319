#pragma once

#include <cstddef>
#include <span>
#include <string>

namespace cpdefer::stats {

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t n_effective = 0;
  std::string method_note;
};

double normal_cdf(double z);
/// Inverse standard normal CDF (Wichura's AS 241, PPND16).
double normal_quantile(double p);
/// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);
double student_t_cdf(double t, double df);

/// Shapiro-Wilk W and its p-value, Royston's AS R94 algorithm. 3 <= n <= 5000.
TestResult shapiro_wilk(std::span<const double> x);

/// One-tailed paired t-test, H1: mean(a - b) > 0.
TestResult paired_t_one_tailed(std::span<const double> a, std::span<const double> b);

/// One-tailed Wilcoxon signed-rank test, H1: a > b. Zero differences are
/// dropped, tied magnitudes get mid-ranks, and the statistic is the rank sum
/// of negative differences. Exact null distribution up to 25 non-zero
/// differences, normal approximation (tie and continuity corrected) beyond.
TestResult wilcoxon_one_tailed(std::span<const double> a, std::span<const double> b);

}  // namespace cpdefer::stats
