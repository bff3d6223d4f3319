#include "cpdefer/prob_vector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "cpdefer/error.hpp"

namespace cpdefer {

ProbVector::ProbVector(std::vector<double> p) {
  bool renormalized = false;
  *this = normalized(std::move(p), renormalized);
}

ProbVector ProbVector::normalized(std::vector<double> p, bool& renormalized) {
  if (p.size() < 2) {
    throw ValidationError(fmt::format("probability vector needs at least 2 classes, got {}", p.size()));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!std::isfinite(p[i]) || p[i] < 0.0) {
      throw ValidationError(fmt::format("probability p_{} = {} is not a finite non-negative value", i, p[i]));
    }
    sum += p[i];
  }
  const double err = std::abs(sum - 1.0);
  renormalized = false;
  if (err > kRenormTolerance) {
    throw ValidationError(fmt::format("probabilities sum to {} (tolerance {})", sum, kRenormTolerance));
  }
  if (err > kNormTolerance) {
    for (double& v : p) v /= sum;
    renormalized = true;
  }
  ProbVector out;
  out.p_ = std::move(p);
  out.build_order();
  return out;
}

void ProbVector::build_order() {
  order_.resize(p_.size());
  std::iota(order_.begin(), order_.end(), 0);
  std::stable_sort(order_.begin(), order_.end(),
                   [this](int a, int b) { return p_[static_cast<std::size_t>(a)] > p_[static_cast<std::size_t>(b)]; });
  position_.resize(p_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) position_[static_cast<std::size_t>(order_[i])] = i;
}

}  // namespace cpdefer
