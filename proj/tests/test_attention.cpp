#include <gtest/gtest.h>

#include <cmath>

#include "corl/attention.hpp"
#include "corl/numerics.hpp"
#include "test_util.hpp"

using namespace corl;
using corl::testing::project;
using corl::testing::randn;

namespace {

template <typename F>
Tensor<double> eval(F f, std::vector<Tensor<double>> inputs) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (auto& t : inputs) vars.push_back(tape.constant(std::move(t)));
  return f(vars).value();
}

}  // namespace

TEST(Squeeze, OnesFilterIsPlainSum) {
  const Tensor<double> o({1, 2, 2, 1}, {1, 2, 3, 4});
  const Tensor<double> r = Tensor<double>::constant({2, 2, 1}, 1.0);
  const Tensor<double> z = eval([](auto& v) { return attention::squeeze(v[0], v[1]); }, {o, r});
  EXPECT_DOUBLE_EQ(z[0], 10.0);
}

TEST(Squeeze, ZeroInputGivesZero) {
  const Tensor<double> z =
      eval([](auto& v) { return attention::squeeze(v[0], v[1]); }, {Tensor<double>({2, 3, 3, 4}), randn({3, 3, 4}, 1)});
  EXPECT_EQ(z.array().abs().maxCoeff(), 0.0);
}

TEST(Squeeze, MatchesTripleLoop) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor<double> o = randn({1, 3, 3, 4}, seed);
    const Tensor<double> r = randn({3, 3, 4}, seed + 1);
    const Tensor<double> z = eval([](auto& v) { return attention::squeeze(v[0], v[1]); }, {o, r});
    for (Index b = 0; b < 4; ++b) {
      double expect = 0;
      for (Index h = 0; h < 3; ++h) {
        for (Index w = 0; w < 3; ++w) expect += r.at({h, w, b}) * o.at({0, h, w, b});
      }
      EXPECT_NEAR(z[b], expect, 1e-12);
    }
  }
}

TEST(Squeeze, ShapeMismatchThrows) {
  EXPECT_THROW(eval([](auto& v) { return attention::squeeze(v[0], v[1]); }, {randn({1, 3, 3, 4}, 0), randn({3, 2, 4}, 1)}),
               DimensionError);
}

TEST(Excite, ZeroFirstLayerGivesHalf) {
  const Tensor<double> g = eval([](auto& v) { return attention::excite(v[0], v[1], v[2]); },
                                {randn({2, 8}, 0), Tensor<double>({2, 8}), randn({8, 2}, 1)});
  for (Index i = 0; i < g.size(); ++i) EXPECT_DOUBLE_EQ(g[i], 0.5);
}

TEST(Excite, SaturatesForLargePreactivation) {
  // relu(W1 z) = (1, 0); W2 row 0 = (20, 0) -> pre-activation +20
  const Tensor<double> z({1, 2}, {1, 0});
  const Tensor<double> w1({2, 2}, {1, 0, 0, 1});
  const Tensor<double> w2({2, 2}, {20, 0, 0, 0});
  const Tensor<double> g = eval([](auto& v) { return attention::excite(v[0], v[1], v[2]); }, {z, w1, w2});
  EXPECT_GT(g[0], 0.9999);
  EXPECT_DOUBLE_EQ(g[1], 0.5);
}

TEST(Excite, MatchesMatrixOracle) {
  const Index b = 8, r = 4;
  const Tensor<double> z = randn({3, b}, 0);
  const Tensor<double> w1 = randn({b / r, b}, 1);
  const Tensor<double> w2 = randn({b, b / r}, 2);
  const Tensor<double> g = eval([](auto& v) { return attention::excite(v[0], v[1], v[2]); }, {z, w1, w2});
  for (Index n = 0; n < 3; ++n) {
    std::vector<double> hidden(static_cast<std::size_t>(b / r));
    for (Index j = 0; j < b / r; ++j) {
      double acc = 0;
      for (Index k = 0; k < b; ++k) acc += w1.at({j, k}) * z.at({n, k});
      hidden[static_cast<std::size_t>(j)] = std::max(acc, 0.0);
    }
    for (Index i = 0; i < b; ++i) {
      double acc = 0;
      for (Index j = 0; j < b / r; ++j) acc += w2.at({i, j}) * hidden[static_cast<std::size_t>(j)];
      EXPECT_NEAR(g.at({n, i}), 1.0 / (1.0 + std::exp(-acc)), 1e-12);
    }
  }
}

TEST(Excite, GateStrictlyInsideUnitInterval) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor<double> g = eval([](auto& v) { return attention::excite(v[0], v[1], v[2]); },
                                  {randn({2, 8}, seed, 3.0), randn({2, 8}, seed + 1), randn({8, 2}, seed + 2)});
    EXPECT_GT(g.array().minCoeff(), 0.0);
    EXPECT_LT(g.array().maxCoeff(), 1.0);
  }
}

TEST(Reweight, Examples) {
  const Tensor<double> o = randn({1, 2, 2, 3}, 4);
  const Tensor<double> ones = eval([](auto& v) { return attention::reweight(v[0], v[1]); },
                                   {o, Tensor<double>::constant({1, 3}, 1.0)});
  EXPECT_TRUE(ones == o);
  const Tensor<double> half = eval([](auto& v) { return attention::reweight(v[0], v[1]); },
                                   {Tensor<double>({1, 1, 1, 1}, {2.0}), Tensor<double>({1, 1}, {0.5})});
  EXPECT_DOUBLE_EQ(half[0], 1.0);
}

TEST(Reweight, MatchesElementwiseOracleAndKeepsSigns) {
  const Tensor<double> o = randn({2, 3, 3, 4}, 5);
  Tensor<double> g = randn({2, 4}, 6);
  g.array() = g.array().abs() * 0.3 + 0.05;
  const Tensor<double> phi = eval([](auto& v) { return attention::reweight(v[0], v[1]); }, {o, g});
  for (Index n = 0; n < 2; ++n) {
    for (Index p = 0; p < 9; ++p) {
      for (Index b = 0; b < 4; ++b) {
        const Index i = (n * 9 + p) * 4 + b;
        EXPECT_NEAR(phi[i], g.at({n, b}) * o[i], 1e-15);
        EXPECT_EQ(std::signbit(phi[i]), std::signbit(o[i]));
      }
    }
  }
}

TEST(Attention, GradCheckComposite) {
  auto f = [](Tape<double>&, std::span<const Var<double>> p) {
    auto z = attention::squeeze(p[0], p[1]);
    auto g = attention::excite(z, p[2], p[3]);
    return project(attention::reweight(p[0], g), 2);
  };
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const GradReport r = grad_check(
        f, {randn({2, 3, 3, 8}, seed), randn({3, 3, 8}, seed + 1), randn({2, 8}, seed + 2, 0.2), randn({8, 2}, seed + 3, 0.5)},
        1e-5, 1e-5);
    EXPECT_TRUE(r.pass) << r.worst();
  }
}
