#pragma once

#include <span>
#include <vector>

#include "corl/numerics.hpp"

namespace corl::heads {

/// Embedding = [avgpool(channel-normalized Phi), avgpool(F)], shape (N, B + C).
template <typename Scalar>
Var<Scalar> assemble_embedding(const Var<Scalar>& attended, const Var<Scalar>& features) {
  if (attended.shape().size() != 4 || features.shape().size() != 4 || attended.dim(0) != features.dim(0)) {
    throw DimensionError("assemble_embedding: Phi " + shape_string(attended.shape()) + " and F " +
                         shape_string(features.shape()) + " disagree");
  }
  auto unit = l2_normalize_last(attended, static_cast<Scalar>(kNormEpsilon));
  return concat_last(avg_pool_spatial(unit), avg_pool_spatial(features));
}

/// Two-layer meta-training classifier: Wb relu(Wa e + ba) + bb.
template <typename Scalar>
Var<Scalar> train_head_forward(const Var<Scalar>& embedding, const Var<Scalar>& wa, const Var<Scalar>& ba,
                               const Var<Scalar>& wb, const Var<Scalar>& bb) {
  auto hidden = relu(add(matmul_nt(embedding, wa), ba));
  return add(matmul_nt(hidden, wb), bb);
}

struct LogisticOptions {
  double l2_penalty = 1.0;
  Index max_iters = 500;
  double tol = 1e-6;
};

/// Multinomial logistic regression fitted on a support set.
struct LogisticHead {
  RowMatrix<double> weights;  // (classes, dim)
  Vector<double> bias;        // (classes)
  double l2_penalty = 0.0;
  Index iterations = 0;
  bool converged = false;
  std::vector<double> objective_trace;  // objective after each accepted iterate, starting at the initial point

  Index num_classes() const { return weights.rows(); }
  Index dim() const { return weights.cols(); }
};

/// Sum of per-example cross-entropy plus l2_penalty * ||W||^2 / 2 (bias unpenalized).
double logistic_objective(const RowMatrix<double>& weights, const Vector<double>& bias, const RowMatrix<double>& x,
                          std::span<const int> labels, double l2_penalty);

/// Minimizes logistic_objective with L-BFGS and a backtracking (Armijo) line
/// search, so the objective never increases. Stops when the gradient's
/// infinity norm drops below tol or after max_iters iterations.
LogisticHead fit_logistic(const RowMatrix<double>& x, std::span<const int> labels, Index num_classes,
                          const LogisticOptions& options = {});

/// argmax_k (W e + b)_k, ties to the lowest class index.
Index predict(const LogisticHead& head, const Eigen::Ref<const Vector<double>>& embedding);

std::vector<Index> predict_all(const LogisticHead& head, const RowMatrix<double>& embeddings);

}  // namespace corl::heads
