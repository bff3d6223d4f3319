#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace cpdefer {

inline constexpr double kNormTolerance = 1e-6;
inline constexpr double kRenormTolerance = 1e-3;

/// A model output over C >= 2 classes.
///
/// Entries are non-negative and sum to one within kNormTolerance. Vectors whose
/// sum is off by more than that but within kRenormTolerance are rescaled on
/// construction; anything further off is rejected.
///
/// The descending-probability ranking (ties broken toward the lower class
/// index) is computed once and shared by every score function.
class ProbVector {
 public:
  ProbVector() = default;
  explicit ProbVector(std::vector<double> p);

  /// Same as the constructor, reporting whether a rescale happened.
  static ProbVector normalized(std::vector<double> p, bool& renormalized);

  std::size_t size() const { return p_.size(); }
  double operator[](std::size_t i) const { return p_[i]; }
  std::span<const double> values() const { return p_; }

  /// Class indices by descending probability.
  std::span<const int> order() const { return order_; }
  /// Zero-based position of class y in order().
  std::size_t position(int y) const { return position_[static_cast<std::size_t>(y)]; }
  int argmax() const { return order_.front(); }

 private:
  void build_order();

  std::vector<double> p_;
  std::vector<int> order_;
  std::vector<std::size_t> position_;
};

}  // namespace cpdefer
