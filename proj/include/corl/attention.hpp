#pragma once

#include "corl/ops.hpp"

namespace corl::attention {

/// z[n, b] = sum_{h,w} R[h, w, b] * O[n, h, w, b].  O: (N, H, W, B), R: (H, W, B).
template <typename Scalar>
Var<Scalar> squeeze(const Var<Scalar>& gated, const Var<Scalar>& filter) {
  const Shape& o = gated.shape();
  const Shape& r = filter.shape();
  if (o.size() != 4 || r.size() != 3 || r[0] != o[1] || r[1] != o[2] || r[2] != o[3]) {
    throw DimensionError("squeeze filter " + shape_string(r) + " does not match " + shape_string(o));
  }
  return reduce_sum(reshape(mul(gated, filter), {o[0], o[1] * o[2], o[3]}), 1);
}

/// g = sigmoid(W2 relu(W1 z)). z: (N, B), W1: (B/r, B), W2: (B, B/r).
template <typename Scalar>
Var<Scalar> excite(const Var<Scalar>& summary, const Var<Scalar>& w1, const Var<Scalar>& w2) {
  if (w1.shape().size() != 2 || w2.shape().size() != 2 || w1.dim(1) != summary.dim(1) || w2.dim(1) != w1.dim(0) ||
      w2.dim(0) != summary.dim(1)) {
    throw DimensionError("excite weights " + shape_string(w1.shape()) + ", " + shape_string(w2.shape()) +
                         " do not fit summary " + shape_string(summary.shape()));
  }
  return sigmoid(matmul_nt(relu(matmul_nt(summary, w1)), w2));
}

/// Phi[n, :, :, b] = g[n, b] * O[n, :, :, b].
template <typename Scalar>
Var<Scalar> reweight(const Var<Scalar>& gated, const Var<Scalar>& gate) {
  const Shape& o = gated.shape();
  if (gate.shape().size() != 2 || gate.dim(0) != o[0] || gate.dim(1) != o[3]) {
    throw DimensionError("gate " + shape_string(gate.shape()) + " does not match " + shape_string(o));
  }
  return mul(gated, reshape(gate, {o[0], 1, 1, o[3]}));
}

}  // namespace corl::attention
