#include "corl/heads.hpp"

#include <cmath>
#include <deque>

namespace corl::heads {

namespace {

struct Problem {
  const RowMatrix<double>& x;
  std::span<const int> labels;
  Index classes;
  double l2;

  Index dim() const { return x.cols(); }
  Index size() const { return classes * (x.cols() + 1); }

  // Packed parameter layout: W row-major, then b.
  void unpack(const Vector<double>& theta, RowMatrix<double>& w, Vector<double>& b) const {
    w = Eigen::Map<const RowMatrix<double>>(theta.data(), classes, dim());
    b = theta.tail(classes);
  }

  double value_and_gradient(const Vector<double>& theta, Vector<double>& grad) const {
    RowMatrix<double> w;
    Vector<double> b;
    unpack(theta, w, b);
    RowMatrix<double> logits = x * w.transpose();
    logits.rowwise() += b.transpose();
    RowMatrix<double> residual(x.rows(), classes);
    double loss = 0.0;
    for (Index i = 0; i < x.rows(); ++i) {
      const double mx = logits.row(i).maxCoeff();
      const auto e = (logits.row(i).array() - mx).exp().eval();
      const double z = e.sum();
      const int y = labels[static_cast<std::size_t>(i)];
      loss += std::log(z) + mx - logits(i, y);
      residual.row(i) = e / z;
      residual(i, y) -= 1.0;
    }
    loss += 0.5 * l2 * w.squaredNorm();
    grad.resize(size());
    Eigen::Map<RowMatrix<double>>(grad.data(), classes, dim()) = residual.transpose() * x + l2 * w;
    grad.tail(classes) = residual.colwise().sum().transpose();
    return loss;
  }
};

}  // namespace

double logistic_objective(const RowMatrix<double>& weights, const Vector<double>& bias, const RowMatrix<double>& x,
                          std::span<const int> labels, double l2_penalty) {
  Problem p{x, labels, weights.rows(), l2_penalty};
  Vector<double> theta(p.size());
  Eigen::Map<RowMatrix<double>>(theta.data(), weights.rows(), weights.cols()) = weights;
  theta.tail(weights.rows()) = bias;
  Vector<double> grad;
  return p.value_and_gradient(theta, grad);
}

LogisticHead fit_logistic(const RowMatrix<double>& x, std::span<const int> labels, Index num_classes,
                          const LogisticOptions& options) {
  if (num_classes <= 0) throw InputError("fit_logistic: need at least one class");
  if (x.rows() != static_cast<Index>(labels.size())) {
    throw DimensionError("fit_logistic: " + std::to_string(x.rows()) + " embeddings vs " +
                         std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw InputError("fit_logistic: label out of range");
  }
  if (options.l2_penalty < 0.0) throw InputError("fit_logistic: l2_penalty must be >= 0");

  const Problem problem{x, labels, num_classes, options.l2_penalty};
  Vector<double> theta = Vector<double>::Zero(problem.size());
  Vector<double> grad;
  double f = problem.value_and_gradient(theta, grad);

  LogisticHead head;
  head.l2_penalty = options.l2_penalty;
  head.objective_trace.push_back(f);

  constexpr std::size_t kMemory = 10;
  std::deque<std::pair<Vector<double>, Vector<double>>> history;  // (s, y)
  Index iter = 0;
  for (; iter < options.max_iters; ++iter) {
    if (grad.lpNorm<Eigen::Infinity>() < options.tol) {
      head.converged = true;
      break;
    }
    // two-loop recursion
    Vector<double> q = grad;
    std::vector<double> alpha(history.size());
    for (std::size_t i = history.size(); i-- > 0;) {
      const auto& [s, y] = history[i];
      alpha[i] = s.dot(q) / y.dot(s);
      q -= alpha[i] * y;
    }
    if (!history.empty()) {
      const auto& [s, y] = history.back();
      q *= s.dot(y) / y.squaredNorm();
    }
    for (std::size_t i = 0; i < history.size(); ++i) {
      const auto& [s, y] = history[i];
      const double beta = y.dot(q) / y.dot(s);
      q += (alpha[i] - beta) * s;
    }
    Vector<double> direction = -q;
    double slope = grad.dot(direction);
    if (!(slope < 0.0)) {
      history.clear();
      direction = -grad;
      slope = -grad.squaredNorm();
    }

    double step = 1.0;
    Vector<double> next_grad;
    Vector<double> next;
    double next_f = f;
    bool accepted = false;
    for (int k = 0; k < 60; ++k) {
      next = theta + step * direction;
      next_f = problem.value_and_gradient(next, next_grad);
      if (std::isfinite(next_f) && next_f <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // no decrease representable at this precision

    Vector<double> s = next - theta;
    Vector<double> y = next_grad - grad;
    if (s.dot(y) > 1e-12 * y.squaredNorm()) {
      history.emplace_back(std::move(s), std::move(y));
      if (history.size() > kMemory) history.pop_front();
    }
    theta = std::move(next);
    grad = std::move(next_grad);
    f = next_f;
    head.objective_trace.push_back(f);
  }
  if (!head.converged && grad.lpNorm<Eigen::Infinity>() < options.tol) head.converged = true;
  head.iterations = iter;
  problem.unpack(theta, head.weights, head.bias);
  return head;
}

Index predict(const LogisticHead& head, const Eigen::Ref<const Vector<double>>& embedding) {
  if (embedding.size() != head.dim()) {
    throw DimensionError("predict: embedding length " + std::to_string(embedding.size()) + " vs head dim " +
                         std::to_string(head.dim()));
  }
  const Vector<double> scores = head.weights * embedding + head.bias;
  Index best = 0;
  for (Index k = 1; k < scores.size(); ++k) {
    if (scores[k] > scores[best]) best = k;
  }
  return best;
}

std::vector<Index> predict_all(const LogisticHead& head, const RowMatrix<double>& embeddings) {
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(embeddings.rows()));
  for (Index i = 0; i < embeddings.rows(); ++i) out.push_back(predict(head, embeddings.row(i).transpose()));
  return out;
}

}  // namespace corl::heads
