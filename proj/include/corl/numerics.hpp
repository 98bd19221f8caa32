#pragma once

#include <algorithm>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "corl/ops.hpp"

namespace corl {

/// Guard used by every norm in the library.
inline constexpr double kNormEpsilon = 1e-12;

/// v / max(||v||, eps). The zero vector maps to itself.
template <typename Derived>
Vector<typename Derived::Scalar> l2_normalize(const Eigen::MatrixBase<Derived>& v,
                                              typename Derived::Scalar eps = kNormEpsilon) {
  using Scalar = typename Derived::Scalar;
  return v / std::max<Scalar>(v.norm(), eps);
}

/// Cosine similarity with eps-guarded norms, clamped to [-1, 1].
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine_sim(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b,
                                     typename DerivedA::Scalar eps = kNormEpsilon) {
  using Scalar = typename DerivedA::Scalar;
  if (a.size() != b.size()) {
    throw DimensionError("cosine_sim: length " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  const Scalar denom = std::max<Scalar>(a.norm(), eps) * std::max<Scalar>(b.norm(), eps);
  return std::clamp<Scalar>(a.cwiseProduct(b).sum() / denom, Scalar(-1), Scalar(1));
}

struct GradReport {
  std::vector<double> max_relative_error;  // one entry per parameter tensor
  double tolerance = 0.0;
  bool pass = false;

  double worst() const {
    return max_relative_error.empty() ? 0.0
                                      : *std::max_element(max_relative_error.begin(), max_relative_error.end());
  }
};

/// A scalar-valued function of parameter tensors, recorded on the given tape.
using ScalarFunction = std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;

/// |a - n| / max(|a|, |n|, 1e-8).
double relative_error(double analytic, double numeric);

/// Compares reverse-mode gradients of `f` against central differences
/// (f(x+h) - f(x-h)) / 2h, element by element. Throws NumericalError if
/// `f` evaluates to a non-finite value anywhere.
GradReport grad_check(const ScalarFunction& f, std::vector<Tensor<double>> params, double step, double tol);

}  // namespace corl
