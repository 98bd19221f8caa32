#pragma once

#include <cstdint>

#include "corl/numerics.hpp"
#include "corl/rng.hpp"

namespace corl::compdict {

/// Component detection layer: A[n,h,w,b] = cos(f_{n,h,w}, d_b).
///
/// A 1x1 convolution of the channel-normalized feature map with the
/// row-normalized dictionary (B, C). Output (N, H, W, B), entries in [-1, 1].
template <typename Scalar>
Var<Scalar> detect(const Var<Scalar>& features, const Var<Scalar>& dictionary) {
  if (features.shape().size() != 4) {
    throw DimensionError("detect expects a feature map (N, H, W, C), got " + shape_string(features.shape()));
  }
  if (dictionary.shape().size() != 2 || dictionary.dim(1) != features.dim(3)) {
    throw DimensionError("dictionary items have length " +
                         std::to_string(dictionary.shape().size() == 2 ? dictionary.dim(1) : 0) +
                         " but the feature map has " + std::to_string(features.dim(3)) + " channels");
  }
  const auto eps = static_cast<Scalar>(kNormEpsilon);
  auto fn = l2_normalize_last(features, eps);
  auto dn = l2_normalize_last(dictionary, eps);
  return clamp(conv1x1(fn, dn), Scalar(-1), Scalar(1));
}

/// Sum over positions of min_b (1 - A[p, b]), averaged over the batch.
template <typename Scalar>
Var<Scalar> cluster_loss_from_activations(const Var<Scalar>& activations) {
  const Shape& s = activations.shape();
  const Index n = s[0];
  const Index positions = s[1] * s[2];
  auto best = reduce_max(reshape(activations, {n * positions, s[3]}), 1);
  auto loss = add_scalar(scale(sum_all(best), Scalar(-1) / static_cast<Scalar>(n)), static_cast<Scalar>(positions));
  return clamp(loss, Scalar(0), std::numeric_limits<Scalar>::max());
}

/// Cluster loss of a feature batch (N, H, W, C) against dictionary (B, C).
template <typename Scalar>
Var<Scalar> cluster_loss(const Var<Scalar>& dictionary, const Var<Scalar>& features) {
  return cluster_loss_from_activations(detect(features, dictionary));
}

template <typename Scalar>
Tensor<Scalar> detect(const Tensor<Scalar>& features, const Tensor<Scalar>& dictionary) {
  Tape<Scalar> tape;
  return detect(tape.constant(features), tape.constant(dictionary)).value();
}

template <typename Scalar>
Scalar cluster_loss(const Tensor<Scalar>& dictionary, const Tensor<Scalar>& features) {
  Tape<Scalar> tape;
  return cluster_loss(tape.constant(dictionary), tape.constant(features)).value()[0];
}

/// Spherical k-means with k-means++ seeding.
///
/// Inputs are L2-normalized rows; distance is 1 - cos. Empty clusters are
/// re-seeded from the point farthest from its current center. Returns
/// `count` unit-norm centers as a (count, C) matrix. Throws InputError when
/// there are fewer rows than centers.
RowMatrix<double> kmeans_init(const RowMatrix<double>& features, Index count, Index iters, std::uint64_t seed);

}  // namespace corl::compdict
