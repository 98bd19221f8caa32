#include "corl/compdict.hpp"

#include <algorithm>
#include <vector>

namespace corl::compdict {

namespace {

RowMatrix<double> normalize_rows(const RowMatrix<double>& m) {
  RowMatrix<double> out = m;
  for (Index r = 0; r < out.rows(); ++r) out.row(r) /= std::max(out.row(r).norm(), kNormEpsilon);
  return out;
}

// Cosine distance from each point to its nearest chosen center.
void update_nearest(const RowMatrix<double>& points, const RowMatrix<double>& centers, Index center,
                    std::vector<double>& nearest) {
  const Vector<double> sims = points * centers.row(center).transpose();
  for (Index i = 0; i < points.rows(); ++i) {
    nearest[static_cast<std::size_t>(i)] = std::min(nearest[static_cast<std::size_t>(i)], std::max(0.0, 1.0 - sims[i]));
  }
}

Index argmax(const std::vector<double>& v) {
  return static_cast<Index>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

RowMatrix<double> kmeans_init(const RowMatrix<double>& features, Index count, Index iters, std::uint64_t seed) {
  if (count <= 0) throw InputError("kmeans_init: center count must be positive");
  if (features.rows() < count) {
    throw InputError("kmeans_init: need at least " + std::to_string(count) + " feature vectors, got " +
                     std::to_string(features.rows()));
  }
  const RowMatrix<double> points = normalize_rows(features);
  const Index n = points.rows();
  Rng rng(seed);

  RowMatrix<double> centers(count, points.cols());
  std::vector<double> nearest(static_cast<std::size_t>(n), 2.0);
  centers.row(0) = points.row(rng.below(n));
  update_nearest(points, centers, 0, nearest);
  for (Index k = 1; k < count; ++k) {
    double total = 0.0;
    for (double d : nearest) total += d;
    Index pick = 0;
    if (total <= 0.0) {
      // every point coincides with a chosen center: duplicate the farthest (any) one
      pick = argmax(nearest);
    } else {
      double target = rng.uniform() * total;
      pick = n - 1;
      for (Index i = 0; i < n; ++i) {
        target -= nearest[static_cast<std::size_t>(i)];
        if (target < 0.0 && nearest[static_cast<std::size_t>(i)] > 0.0) {
          pick = i;
          break;
        }
      }
    }
    centers.row(k) = points.row(pick);
    update_nearest(points, centers, k, nearest);
  }

  std::vector<Index> assign(static_cast<std::size_t>(n), -1);
  for (Index it = 0; it < iters; ++it) {
    const RowMatrix<double> sims = points * centers.transpose();
    bool changed = false;
    std::vector<double> dist(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      Index best = 0;
      for (Index k = 1; k < count; ++k) {
        if (sims(i, k) > sims(i, best)) best = k;
      }
      changed = changed || assign[static_cast<std::size_t>(i)] != best;
      assign[static_cast<std::size_t>(i)] = best;
      dist[static_cast<std::size_t>(i)] = 1.0 - sims(i, best);
    }
    if (!changed && it > 0) break;

    RowMatrix<double> sums = RowMatrix<double>::Zero(count, points.cols());
    std::vector<Index> members(static_cast<std::size_t>(count), 0);
    for (Index i = 0; i < n; ++i) {
      const Index k = assign[static_cast<std::size_t>(i)];
      sums.row(k) += points.row(i);
      ++members[static_cast<std::size_t>(k)];
    }
    for (Index k = 0; k < count; ++k) {
      const double norm = sums.row(k).norm();
      if (members[static_cast<std::size_t>(k)] > 0 && norm > kNormEpsilon) {
        centers.row(k) = sums.row(k) / norm;
        continue;
      }
      const Index far = argmax(dist);
      centers.row(k) = points.row(far);
      dist[static_cast<std::size_t>(far)] = -1.0;  // not reused for another empty cluster
    }
  }
  return centers;
}

}  // namespace corl::compdict
