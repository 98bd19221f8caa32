#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "corl/compdict.hpp"
#include "test_util.hpp"

using namespace corl;
using corl::testing::project;
using corl::testing::randn;

namespace {

// Plain-loop cosine, independent of the library's Eigen path.
double loop_cos(const double* a, const double* b, Index n) {
  double dot = 0, na = 0, nb = 0;
  for (Index i = 0; i < n; ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::max(std::sqrt(na), 1e-12) * std::max(std::sqrt(nb), 1e-12));
}

double loop_cluster_loss(const Tensor<double>& dict, const Tensor<double>& f) {
  const Index n = f.dim(0), p = f.dim(1) * f.dim(2), c = f.dim(3), b = dict.dim(0);
  double total = 0;
  for (Index s = 0; s < n; ++s) {
    for (Index q = 0; q < p; ++q) {
      double best = 1e300;
      for (Index k = 0; k < b; ++k) best = std::min(best, 1.0 - loop_cos(f.data() + (s * p + q) * c, dict.data() + k * c, c));
      total += best;
    }
  }
  return total / static_cast<double>(n);
}

RowMatrix<double> unit_rows(Index n, Index c, std::uint64_t seed) {
  RowMatrix<double> m = randn({n, c}, seed).matrix();
  for (Index i = 0; i < n; ++i) m.row(i).normalize();
  return m;
}

}  // namespace

TEST(Detect, SelfSimilarityIsOne) {
  Tensor<double> dict = randn({5, 4}, 1);
  Tensor<double> f = randn({1, 2, 2, 4}, 2);
  for (Index c = 0; c < 4; ++c) f.at({0, 1, 0, c}) = 3.0 * dict.at({3, c});
  const Tensor<double> a = compdict::detect(f, dict);
  EXPECT_NEAR(a.at({0, 1, 0, 3}), 1.0, 1e-12);
}

TEST(Detect, OrthogonalFeatureGivesZeros) {
  Tensor<double> dict({3, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 1, 1, 0, 0});
  Tensor<double> f({1, 1, 1, 4}, {0, 0, 2, -1});
  const Tensor<double> a = compdict::detect(f, dict);
  for (Index b = 0; b < 3; ++b) EXPECT_EQ(a[b], 0.0);
}

TEST(Detect, MatchesLoopOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor<double> f = randn({1, 2, 2, 4}, seed);
    const Tensor<double> d = randn({3, 4}, seed + 100);
    const Tensor<double> a = compdict::detect(f, d);
    for (Index p = 0; p < 4; ++p) {
      for (Index b = 0; b < 3; ++b) EXPECT_NEAR(a[p * 3 + b], loop_cos(f.data() + p * 4, d.data() + b * 4, 4), 1e-9);
    }
  }
}

TEST(Detect, ChannelMismatchThrows) {
  EXPECT_THROW(compdict::detect(randn({1, 2, 2, 4}, 0), randn({3, 5}, 1)), DimensionError);
}

TEST(Detect, OutputInCosineRange) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor<double> a = compdict::detect(randn({2, 3, 3, 6}, seed, 10.0), randn({7, 6}, seed + 50));
    EXPECT_LE(a.array().maxCoeff(), 1.0);
    EXPECT_GE(a.array().minCoeff(), -1.0);
  }
}

TEST(ClusterLoss, PerfectClusteringIsZero) {
  const Tensor<double> dict({2, 3}, {1, 0, 0, 0, 0.6, 0.8});
  const Tensor<double> f({1, 1, 3, 3}, {2, 0, 0, 0, 3, 4, 0, 0.3, 0.4});
  EXPECT_NEAR(compdict::cluster_loss(dict, f), 0.0, 1e-12);
}

TEST(ClusterLoss, TwoPositionExample) {
  const Tensor<double> dict({1, 2}, {1, 0});
  const Tensor<double> f({1, 1, 2, 2}, {1, 0, 0, 1});
  EXPECT_NEAR(compdict::cluster_loss(dict, f), 1.0, 1e-12);
}

TEST(ClusterLoss, MatchesBruteForce) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor<double> f = randn({1, 3, 3, 8}, seed);
    const Tensor<double> d = randn({4, 8}, seed + 7);
    EXPECT_NEAR(compdict::cluster_loss(d, f), loop_cluster_loss(d, f), 1e-9);
  }
}

TEST(ClusterLoss, BatchIsAveraged) {
  const Tensor<double> f = randn({3, 2, 2, 5}, 4);
  const Tensor<double> d = randn({3, 5}, 5);
  EXPECT_NEAR(compdict::cluster_loss(d, f), loop_cluster_loss(d, f), 1e-9);
}

TEST(ClusterLoss, ZeroOnlyForPositiveMultiples) {
  const Tensor<double> d({2, 2}, {1, 0, 0, 1});
  // negative multiple of an item is not clustered
  EXPECT_GT(compdict::cluster_loss(d, Tensor<double>({1, 1, 1, 2}, {-2, 0})), 0.0);
  EXPECT_NEAR(compdict::cluster_loss(d, Tensor<double>({1, 1, 1, 2}, {0, 5})), 0.0, 1e-15);
}

TEST(ClusterLoss, PermutationInvariance) {
  const Tensor<double> f = randn({1, 3, 3, 4}, 8);
  const Tensor<double> d = randn({5, 4}, 9);
  Tensor<double> perm = d;
  const std::vector<Index> order{3, 0, 4, 1, 2};
  for (Index k = 0; k < 5; ++k) perm.matrix().row(k) = d.matrix().row(order[static_cast<std::size_t>(k)]);
  EXPECT_NEAR(compdict::cluster_loss(d, f), compdict::cluster_loss(perm, f), 1e-12);
  const Tensor<double> a = compdict::detect(f, d);
  const Tensor<double> ap = compdict::detect(f, perm);
  for (Index p = 0; p < 9; ++p) {
    for (Index k = 0; k < 5; ++k) EXPECT_EQ(ap[p * 5 + k], a[p * 5 + order[static_cast<std::size_t>(k)]]);
  }
}

TEST(ClusterLoss, NonNegative) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    EXPECT_GE(compdict::cluster_loss(randn({4, 6}, seed), randn({2, 2, 2, 6}, seed + 1)), 0.0);
  }
}

TEST(ClusterLoss, GradCheckDictionaryAndFeatures) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto f = [](Tape<double>&, std::span<const Var<double>> p) { return compdict::cluster_loss(p[0], p[1]); };
    const GradReport r = grad_check(f, {randn({4, 8}, seed), randn({2, 3, 3, 8}, seed + 20)}, 1e-5, 1e-5);
    EXPECT_TRUE(r.pass) << "seed " << seed << " worst " << r.worst();
  }
}

TEST(Detect, GradCheck) {
  auto f = [](Tape<double>&, std::span<const Var<double>> p) { return project(compdict::detect(p[0], p[1]), 3); };
  const GradReport r = grad_check(f, {randn({1, 2, 3, 5}, 1), randn({4, 5}, 2)}, 1e-5, 1e-6);
  EXPECT_TRUE(r.pass) << r.worst();
}

TEST(KMeans, DistinctPointsArePermutation) {
  const RowMatrix<double> pts = unit_rows(6, 4, 3);
  const RowMatrix<double> centers = compdict::kmeans_init(pts, 6, 20, 0);
  std::vector<bool> used(6, false);
  for (Index k = 0; k < 6; ++k) {
    bool found = false;
    for (Index i = 0; i < 6 && !found; ++i) {
      if (!used[static_cast<std::size_t>(i)] && (centers.row(k) - pts.row(i)).norm() < 1e-12) {
        used[static_cast<std::size_t>(i)] = true;
        found = true;
      }
    }
    EXPECT_TRUE(found) << "center " << k;
  }
}

TEST(KMeans, IdenticalPointsCollapse) {
  RowMatrix<double> pts(10, 3);
  pts.rowwise() = Eigen::RowVector3d(1, 2, 2);
  const RowMatrix<double> centers = compdict::kmeans_init(pts, 4, 10, 1);
  for (Index k = 0; k < 4; ++k) EXPECT_LT((centers.row(k) - pts.row(0).normalized()).norm(), 1e-12);
  Tensor<double> f({1, 1, 10, 3}, Eigen::Map<const Array<double>>(pts.data(), 30));
  Tensor<double> d({4, 3}, Eigen::Map<const Array<double>>(centers.data(), 12));
  EXPECT_NEAR(compdict::cluster_loss(d, f), 0.0, 1e-12);
}

TEST(KMeans, TooFewVectorsThrows) {
  EXPECT_THROW(compdict::kmeans_init(unit_rows(3, 4, 0), 4, 5, 0), InputError);
}

TEST(KMeans, OutputsUnitCenters) {
  const RowMatrix<double> centers = compdict::kmeans_init(randn({50, 6}, 2).matrix(), 7, 15, 3);
  for (Index k = 0; k < 7; ++k) EXPECT_NEAR(centers.row(k).norm(), 1.0, 1e-12);
}

TEST(KMeans, SeparatedBlobsBeatRandomCenters) {
  Rng rng(0);
  RowMatrix<double> pts(100, 8);
  for (Index i = 0; i < 100; ++i) {
    for (Index c = 0; c < 8; ++c) pts(i, c) = 0.05 * rng.normal() + ((i < 50) == (c < 4) ? 1.0 : 0.0);
    pts.row(i).normalize();
  }
  auto mean_distance = [&](const RowMatrix<double>& centers) {
    double total = 0;
    for (Index i = 0; i < pts.rows(); ++i) {
      double best = 2;
      for (Index k = 0; k < centers.rows(); ++k) best = std::min(best, 1.0 - pts.row(i).dot(centers.row(k)));
      total += best;
    }
    return total / static_cast<double>(pts.rows());
  };
  const double kmeans = mean_distance(compdict::kmeans_init(pts, 2, 20, 0));
  double random = 0;
  for (std::uint64_t s = 0; s < 10; ++s) random += mean_distance(unit_rows(2, 8, 1000 + s));
  EXPECT_LE(kmeans, random / 10.0);
  EXPECT_LT(kmeans, 0.05);
}

TEST(KMeans, LowerInitialClusterLossThanRandomUnitInit) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor<double> f = randn({4, 3, 3, 8}, seed);
    const RowMatrix<double> c = compdict::kmeans_init(f.matrix(), 6, 20, seed);
    const Tensor<double> d({6, 8}, Eigen::Map<const Array<double>>(c.data(), 48));
    const Tensor<double> r({6, 8}, Eigen::Map<const Array<double>>(unit_rows(6, 8, seed + 77).data(), 48));
    EXPECT_LT(compdict::cluster_loss(d, f), compdict::cluster_loss(r, f)) << "seed " << seed;
  }
}
