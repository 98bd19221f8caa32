#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>

#include "corl/tensor.hpp"

namespace corl {

/// Counter-based generator: the i-th draw is a SplitMix64 finalizer applied to
/// key + i * golden. The whole state is (key, counter), so streams can be
/// split by hashing a stream id into the key, and saved as two integers.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : key_(mix(seed ^ 0x6a09e667f3bcc908ULL)) {}

  /// Restores a generator saved through key() and counter().
  static Rng from_state(std::uint64_t key, std::uint64_t counter) {
    Rng r;
    r.key_ = key;
    r.counter_ = counter;
    return r;
  }

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Independent child stream; does not advance this generator.
  Rng split(std::uint64_t stream) const {
    return from_state(mix(key_ ^ mix(stream + 0x9e3779b97f4a7c15ULL)), 0);
  }

  std::uint64_t next_u64() { return mix(key_ + (++counter_) * 0x9e3779b97f4a7c15ULL); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), unbiased (rejection on the top of the range).
  Index below(Index n) {
    const auto bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return static_cast<Index>(r % bound);
  }

  /// Standard normal via Box-Muller; consumes two draws per call.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(static_cast<Index>(i)));
      std::swap(items[i - 1], items[j]);
    }
  }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

template <typename Scalar>
Tensor<Scalar> random_normal(Shape shape, Rng& rng, double stddev = 1.0) {
  Tensor<Scalar> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(stddev * rng.normal());
  return t;
}

template <typename Scalar>
Tensor<Scalar> random_uniform(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor<Scalar> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(rng.uniform(lo, hi));
  return t;
}

}  // namespace corl
