#pragma once

#include <cmath>
#include <cstdint>

#include "corl/numerics.hpp"
#include "corl/rng.hpp"

namespace corl::testing {

inline Tensor<double> randn(Shape shape, std::uint64_t seed, double stddev = 1.0) {
  Rng rng(seed);
  return random_normal<double>(std::move(shape), rng, stddev);
}

/// Projects a tensor onto a fixed random direction so every output element
/// contributes a distinct weight to the scalar under test.
inline Var<double> project(const Var<double>& v, std::uint64_t seed) {
  auto w = v.tape().constant(randn(v.shape(), seed ^ 0xabcdefULL));
  return sum_all(mul(v, w));
}

}  // namespace corl::testing
