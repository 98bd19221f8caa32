#include <gtest/gtest.h>

#include <cmath>

#include "corl/heads.hpp"
#include "test_util.hpp"

using namespace corl;
using corl::testing::project;
using corl::testing::randn;

namespace {

struct Blobs {
  RowMatrix<double> support, query;
  std::vector<int> support_labels, query_labels;
};

// 5 classes, means at the first five basis vectors of R^dim, isotropic noise.
Blobs make_blobs(Index dim, Index shots, Index queries, double sigma, std::uint64_t seed) {
  Rng rng(seed);
  Blobs b;
  b.support.resize(5 * shots, dim);
  b.query.resize(5 * queries, dim);
  auto draw = [&](RowMatrix<double>& m, Index row, int cls) {
    for (Index c = 0; c < dim; ++c) m(row, c) = sigma * rng.normal() + (c == cls ? 1.0 : 0.0);
  };
  for (int k = 0; k < 5; ++k) {
    for (Index s = 0; s < shots; ++s) {
      draw(b.support, k * shots + s, k);
      b.support_labels.push_back(k);
    }
    for (Index q = 0; q < queries; ++q) {
      draw(b.query, k * queries + q, k);
      b.query_labels.push_back(k);
    }
  }
  return b;
}

// Damped Newton's method on the same objective, used as an independent solver.
struct NewtonSolution {
  RowMatrix<double> w;
  Vector<double> b;
};

NewtonSolution newton_logistic(const RowMatrix<double>& x, const std::vector<int>& y, Index k, double l2) {
  const Index n = x.rows(), d = x.cols(), m = k * (d + 1);
  RowMatrix<double> xa(n, d + 1);
  xa << x, Vector<double>::Ones(n);
  Vector<double> theta = Vector<double>::Zero(m);  // class-major blocks of (w_k, b_k)
  auto objective = [&](const Vector<double>& t, Vector<double>* grad, RowMatrix<double>* hess) {
    double f = 0;
    if (grad) grad->setZero(m);
    if (hess) hess->setZero(m, m);
    for (Index i = 0; i < n; ++i) {
      Vector<double> logits(k);
      for (Index c = 0; c < k; ++c) logits[c] = xa.row(i).dot(t.segment(c * (d + 1), d + 1));
      const double mx = logits.maxCoeff();
      Vector<double> p = (logits.array() - mx).exp().matrix();
      const double z = p.sum();
      p /= z;
      f += std::log(z) + mx - logits[y[static_cast<std::size_t>(i)]];
      for (Index c = 0; c < k; ++c) {
        const double r = p[c] - (c == y[static_cast<std::size_t>(i)] ? 1.0 : 0.0);
        if (grad) grad->segment(c * (d + 1), d + 1) += r * xa.row(i).transpose();
        if (hess) {
          for (Index e = 0; e < k; ++e) {
            const double h = (c == e ? p[c] : 0.0) - p[c] * p[e];
            hess->block(c * (d + 1), e * (d + 1), d + 1, d + 1) += h * xa.row(i).transpose() * xa.row(i);
          }
        }
      }
    }
    for (Index c = 0; c < k; ++c) {
      const auto w = t.segment(c * (d + 1), d);
      f += 0.5 * l2 * w.squaredNorm();
      if (grad) grad->segment(c * (d + 1), d) += l2 * w;
      if (hess) hess->block(c * (d + 1), c * (d + 1), d, d).diagonal().array() += l2;
    }
    return f;
  };
  for (int it = 0; it < 100; ++it) {
    Vector<double> g;
    RowMatrix<double> h;
    const double f = objective(theta, &g, &h);
    if (g.lpNorm<Eigen::Infinity>() < 1e-12) break;
    const Vector<double> step = h.completeOrthogonalDecomposition().solve(g);
    double a = 1.0;
    while (a > 1e-10 && objective(theta - a * step, nullptr, nullptr) > f) a *= 0.5;
    theta -= a * step;
  }
  NewtonSolution s{RowMatrix<double>(k, d), Vector<double>(k)};
  for (Index c = 0; c < k; ++c) {
    s.w.row(c) = theta.segment(c * (d + 1), d).transpose();
    s.b[c] = theta[c * (d + 1) + d];
  }
  return s;
}

Tensor<double> eval_embedding(const Tensor<double>& phi, const Tensor<double>& f) {
  Tape<double> tape;
  return heads::assemble_embedding(tape.constant(phi), tape.constant(f)).value();
}

}  // namespace

TEST(AssembleEmbedding, ThreeFourFive) {
  Tensor<double> phi({1, 1, 1, 4}, {3, 4, 0, 0});
  Tensor<double> f({1, 1, 1, 2}, {0.25, -2.0});
  const Tensor<double> e = eval_embedding(phi, f);
  ASSERT_EQ(e.shape(), (Shape{1, 6}));
  const std::vector<double> expect{0.6, 0.8, 0, 0, 0.25, -2.0};
  for (Index i = 0; i < 6; ++i) EXPECT_NEAR(e[i], expect[static_cast<std::size_t>(i)], 1e-15);
}

TEST(AssembleEmbedding, ZeroPhi) {
  const Tensor<double> f = randn({1, 2, 2, 3}, 1);
  const Tensor<double> e = eval_embedding(Tensor<double>({1, 2, 2, 5}), f);
  for (Index b = 0; b < 5; ++b) EXPECT_EQ(e[b], 0.0);
  for (Index c = 0; c < 3; ++c) {
    double mean = 0;
    for (Index p = 0; p < 4; ++p) mean += f[p * 3 + c] / 4.0;
    EXPECT_NEAR(e[5 + c], mean, 1e-15);
  }
}

TEST(AssembleEmbedding, MatchesStepwiseOracle) {
  const Tensor<double> phi = randn({2, 3, 3, 4}, 2);
  const Tensor<double> f = randn({2, 3, 3, 5}, 3);
  const Tensor<double> e = eval_embedding(phi, f);
  for (Index n = 0; n < 2; ++n) {
    std::vector<double> pooled(4, 0.0), fpool(5, 0.0);
    for (Index p = 0; p < 9; ++p) {
      double norm = 0;
      for (Index b = 0; b < 4; ++b) norm += phi[(n * 9 + p) * 4 + b] * phi[(n * 9 + p) * 4 + b];
      norm = std::sqrt(norm);
      for (Index b = 0; b < 4; ++b) pooled[static_cast<std::size_t>(b)] += phi[(n * 9 + p) * 4 + b] / norm / 9.0;
      for (Index c = 0; c < 5; ++c) fpool[static_cast<std::size_t>(c)] += f[(n * 9 + p) * 5 + c] / 9.0;
    }
    for (Index b = 0; b < 4; ++b) EXPECT_NEAR(e.at({n, b}), pooled[static_cast<std::size_t>(b)], 1e-12);
    for (Index c = 0; c < 5; ++c) EXPECT_NEAR(e.at({n, 4 + c}), fpool[static_cast<std::size_t>(c)], 1e-12);
    for (Index b = 0; b < 4; ++b) EXPECT_LE(std::abs(e.at({n, b})), 1.0);
  }
}

TEST(AssembleEmbedding, GradCheck) {
  auto f = [](Tape<double>&, std::span<const Var<double>> p) {
    return project(heads::assemble_embedding(p[0], p[1]), 4);
  };
  EXPECT_TRUE(grad_check(f, {randn({2, 2, 2, 3}, 5), randn({2, 2, 2, 4}, 6)}, 1e-5, 1e-6).pass);
}

TEST(TrainHead, ZeroWeightsGiveUniformLoss) {
  Tape<double> tape;
  auto e = tape.constant(randn({4, 6}, 1));
  auto logits = heads::train_head_forward(e, tape.constant(Tensor<double>({3, 6})), tape.constant(Tensor<double>({3})),
                                          tape.constant(Tensor<double>({5, 3})), tape.constant(Tensor<double>({5})));
  EXPECT_EQ(logits.value().array().abs().maxCoeff(), 0.0);
  const std::vector<int> labels{0, 1, 2, 4};
  EXPECT_NEAR(softmax_cross_entropy(logits, labels).value()[0], std::log(5.0), 1e-12);
}

TEST(TrainHead, OneHotSelectionPicksClass) {
  Tape<double> tape;
  // embedding (1, 0, 0): hidden unit 0 copies coordinate 0; class 2 reads hidden unit 0
  auto e = tape.constant(Tensor<double>({1, 3}, {1, 0, 0}));
  auto wa = tape.constant(Tensor<double>({2, 3}, {1, 0, 0, 0, 1, 0}));
  Tensor<double> wbv({4, 2});
  wbv.at({2, 0}) = 5.0;
  auto logits = heads::train_head_forward(e, wa, tape.constant(Tensor<double>({2})), tape.constant(wbv),
                                          tape.constant(Tensor<double>({4})));
  Index best = 0;
  for (Index k = 1; k < 4; ++k) {
    if (logits.value()[k] > logits.value()[best]) best = k;
  }
  EXPECT_EQ(best, 2);
}

TEST(TrainHead, MatchesMatrixOracle) {
  const Tensor<double> e = randn({3, 5}, 1), wa = randn({4, 5}, 2), ba = randn({4}, 3), wb = randn({2, 4}, 4),
                       bb = randn({2}, 5);
  Tape<double> tape;
  auto logits = heads::train_head_forward(tape.constant(e), tape.constant(wa), tape.constant(ba), tape.constant(wb),
                                          tape.constant(bb));
  for (Index n = 0; n < 3; ++n) {
    for (Index k = 0; k < 2; ++k) {
      double acc = bb[k];
      for (Index j = 0; j < 4; ++j) {
        double h = ba[j];
        for (Index i = 0; i < 5; ++i) h += wa.at({j, i}) * e.at({n, i});
        acc += wb.at({k, j}) * std::max(h, 0.0);
      }
      EXPECT_NEAR(logits.value().at({n, k}), acc, 1e-12);
    }
  }
}

TEST(FitLogistic, SeparableOneDimensional) {
  RowMatrix<double> x(2, 1);
  x << -1, 1;
  const std::vector<int> y{0, 1};
  const heads::LogisticHead head = heads::fit_logistic(x, y, 2);
  EXPECT_EQ(heads::predict(head, x.row(0).transpose()), 0);
  EXPECT_EQ(heads::predict(head, x.row(1).transpose()), 1);
}

TEST(FitLogistic, QueryEqualToLoneSupportExample) {
  const Blobs b = make_blobs(8, 1, 1, 0.1, 3);
  const heads::LogisticHead head = heads::fit_logistic(b.support, b.support_labels, 5);
  for (Index k = 0; k < 5; ++k) EXPECT_EQ(heads::predict(head, b.support.row(k).transpose()), k);
}

TEST(FitLogistic, GaussianBlobsAgreeWithNewtonOracle) {
  const Blobs b = make_blobs(8, 5, 15, 0.1, 0);
  const heads::LogisticOptions options;
  const heads::LogisticHead head = heads::fit_logistic(b.support, b.support_labels, 5, options);
  const auto predictions = heads::predict_all(head, b.query);
  int correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) correct += predictions[i] == b.query_labels[i];
  EXPECT_GE(correct / static_cast<double>(predictions.size()), 0.99);

  const NewtonSolution oracle = newton_logistic(b.support, b.support_labels, 5, options.l2_penalty);
  const double ours = heads::logistic_objective(head.weights, head.bias, b.support, b.support_labels, options.l2_penalty);
  const double best = heads::logistic_objective(oracle.w, oracle.b, b.support, b.support_labels, options.l2_penalty);
  EXPECT_NEAR(ours, best, 1e-8);
  heads::LogisticHead ref;
  ref.weights = oracle.w;
  ref.bias = oracle.b;
  EXPECT_EQ(heads::predict_all(ref, b.query), predictions);
  EXPECT_TRUE(head.converged);
}

TEST(FitLogistic, ObjectiveNeverIncreases) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Blobs b = make_blobs(6, 3, 1, 0.5, seed);
    const heads::LogisticHead head = heads::fit_logistic(b.support, b.support_labels, 5, {0.1, 200, 1e-10});
    for (std::size_t i = 1; i < head.objective_trace.size(); ++i) {
      EXPECT_LE(head.objective_trace[i], head.objective_trace[i - 1]);
    }
  }
}

TEST(FitLogistic, DegenerateEmbeddingsDoNotCrash) {
  RowMatrix<double> x = RowMatrix<double>::Constant(10, 4, 0.3);
  std::vector<int> y{0, 1, 2, 3, 4, 0, 1, 2, 3, 4};
  const heads::LogisticHead head = heads::fit_logistic(x, y, 5);
  EXPECT_EQ(head.weights.rows(), 5);
  EXPECT_TRUE(head.weights.allFinite());
  EXPECT_EQ(heads::predict(head, x.row(0).transpose()), 0);
}

TEST(FitLogistic, RejectsBadInput) {
  RowMatrix<double> x(2, 3);
  x.setZero();
  EXPECT_THROW(heads::fit_logistic(x, std::vector<int>{0}, 2), DimensionError);
  EXPECT_THROW(heads::fit_logistic(x, std::vector<int>{0, 2}, 2), InputError);
}

TEST(Predict, ZeroHeadTiesToClassZero) {
  heads::LogisticHead head;
  head.weights = RowMatrix<double>::Zero(4, 3);
  head.bias = Vector<double>::Zero(4);
  EXPECT_EQ(heads::predict(head, Vector<double>::Ones(3)), 0);
}

TEST(Predict, DominantRowWinsAndBiasShiftIsInvariant) {
  heads::LogisticHead head;
  head.weights = randn({4, 3}, 1).matrix();
  head.weights.row(2) *= 0.0;
  head.weights(2, 0) = 100.0;
  head.bias = randn({4}, 2).array();
  Vector<double> e(3);
  e << 1, 0.1, -0.2;
  EXPECT_EQ(heads::predict(head, e), 2);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    heads::LogisticHead h;
    h.weights = randn({5, 4}, seed).matrix();
    h.bias = randn({5}, seed + 1).array();
    const Vector<double> v = randn({4}, seed + 2).array();
    heads::LogisticHead shifted = h;
    shifted.bias.array() += 3.7;
    EXPECT_EQ(heads::predict(h, v), heads::predict(shifted, v));
  }
}
