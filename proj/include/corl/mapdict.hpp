#pragma once

#include <vector>

#include "corl/numerics.hpp"

namespace corl::mapdict {

template <typename Scalar>
struct Gated {
  Var<Scalar> output;             // O, (N, H, W, B)
  std::vector<Index> selected;    // chosen map item per (sample, channel), row-major (N, B)
};

/// Index of the map item most similar to each activation channel.
///
/// activations: (N, H, W, B); maps: (V, H, W). Returns N*B indices, ties to
/// the lowest index. Pure selection; not differentiated.
template <typename Scalar>
std::vector<Index> select_maps(const Tensor<Scalar>& activations, const Tensor<Scalar>& maps) {
  const Shape& a = activations.shape();
  const Shape& m = maps.shape();
  if (a.size() != 4 || m.size() != 3 || m[1] != a[1] || m[2] != a[2]) {
    throw DimensionError("map dictionary " + shape_string(m) + " does not match activation maps " + shape_string(a));
  }
  const Index n = a[0], positions = a[1] * a[2], channels = a[3], items = m[0];
  const auto eps = static_cast<Scalar>(kNormEpsilon);
  RowMatrix<Scalar> unit_maps = maps.matrix(items, positions);
  for (Index v = 0; v < items; ++v) unit_maps.row(v) /= std::max(unit_maps.row(v).norm(), eps);

  std::vector<Index> selected(static_cast<std::size_t>(n * channels));
  for (Index s = 0; s < n; ++s) {
    Eigen::Map<const RowMatrix<Scalar>> sample(activations.data() + s * positions * channels, positions, channels);
    // (V, B): numerators of cos(S_v, A_b); the per-channel norm does not change the argmax
    const RowMatrix<Scalar> scores = unit_maps * sample;
    for (Index b = 0; b < channels; ++b) {
      Index best = 0;
      for (Index v = 1; v < items; ++v) {
        if (scores(v, b) > scores(best, b)) best = v;
      }
      selected[static_cast<std::size_t>(s * channels + b)] = best;
    }
  }
  return selected;
}

/// O_b = A_b * S_{v(b)} element-wise. Gradients reach A and the selected map items.
template <typename Scalar>
Gated<Scalar> match_and_gate(const Var<Scalar>& activations, const Var<Scalar>& maps) {
  Gated<Scalar> out;
  out.selected = select_maps(activations.value(), maps.value());
  const Shape& a = activations.shape();
  const Index n = a[0], positions = a[1] * a[2], channels = a[3];
  auto channel_major = transpose_last2(reshape(activations, {n, positions, channels}));  // (N, B, P)
  auto flat_maps = reshape(maps, {maps.dim(0), positions});
  auto gathered = reshape(gather_rows(flat_maps, out.selected), {n, channels, positions});
  out.output = reshape(transpose_last2(mul(channel_major, gathered)), a);
  return out;
}

/// Sum over items of the largest squared cosine to any other item. Zero when V < 2.
template <typename Scalar>
Var<Scalar> sparse_loss(const Var<Scalar>& maps) {
  Tape<Scalar>& tape = maps.tape();
  const Index items = maps.dim(0);
  if (items < 2) return tape.constant(Tensor<Scalar>(Shape{}));
  const Index positions = maps.size() / items;
  auto unit = l2_normalize_last(reshape(maps, {items, positions}), static_cast<Scalar>(kNormEpsilon));
  auto cos2 = square(matmul_nt(unit, unit));
  // push the diagonal below every off-diagonal value (cos^2 >= 0) so it is never the max
  Tensor<Scalar> mask({items, items});
  mask.matrix().diagonal().setConstant(Scalar(-2));
  auto best = reduce_max(add(cos2, tape.constant(std::move(mask))), 1);
  return sum_all(best);
}

template <typename Scalar>
Scalar sparse_loss(const Tensor<Scalar>& maps) {
  Tape<Scalar> tape;
  return sparse_loss(tape.constant(maps)).value()[0];
}

template <typename Scalar>
Tensor<Scalar> match_and_gate(const Tensor<Scalar>& activations, const Tensor<Scalar>& maps,
                              std::vector<Index>* selected = nullptr) {
  Tape<Scalar> tape;
  auto g = match_and_gate(tape.constant(activations), tape.constant(maps));
  if (selected != nullptr) *selected = g.selected;
  return g.output.value();
}

}  // namespace corl::mapdict
