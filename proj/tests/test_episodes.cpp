#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "corl/episodes.hpp"

using namespace corl;

namespace {

// `classes` test classes with `per_class` single-pixel images; pixel value = class id.
LabeledDataset grid_dataset(int classes, int per_class) {
  LabeledDataset d;
  d.height = d.width = d.channels = 1;
  for (int c = 0; c < classes; ++c) d.classes.push_back({"c" + std::to_string(c), Split::kTest});
  d.classes.push_back({"base", Split::kTrain});
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < per_class; ++i) d.add_image(c, std::vector<std::uint8_t>{static_cast<std::uint8_t>(c)});
  }
  for (int i = 0; i < 3; ++i) d.add_image(classes, std::vector<std::uint8_t>{0});
  return d;
}

}  // namespace

TEST(Episodes, InvariantsOverManySeeds) {
  const LabeledDataset d = grid_dataset(12, 25);
  Index violations = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(seed);
    const Episode e = sample_episode(d, Split::kTest, 5, 3, 7, rng);
    std::set<Index> s(e.support.begin(), e.support.end()), q(e.query.begin(), e.query.end());
    violations += s.size() != e.support.size() || q.size() != e.query.size();
    for (Index i : q) violations += s.contains(i);
    violations += !std::ranges::is_sorted(e.classes) || std::set<int>(e.classes.begin(), e.classes.end()).size() != 5;
    auto check = [&](const std::vector<Index>& idx, const std::vector<int>& labels) {
      for (std::size_t k = 0; k < idx.size(); ++k) {
        violations += e.classes[static_cast<std::size_t>(labels[k])] != d.labels[static_cast<std::size_t>(idx[k])];
        violations += d.classes[static_cast<std::size_t>(d.labels[static_cast<std::size_t>(idx[k])])].split != Split::kTest;
      }
    };
    check(e.support, e.support_labels);
    check(e.query, e.query_labels);
    violations += e.support.size() != 15u || e.query.size() != 35u;
  }
  EXPECT_EQ(violations, 0);
}

TEST(Episodes, ExhaustiveDrawUsesEveryImageOnce) {
  const LabeledDataset d = grid_dataset(4, 5);
  Rng rng(3);
  const Episode e = sample_episode(d, Split::kTest, 4, 2, 3, rng);
  std::vector<Index> all = e.support;
  all.insert(all.end(), e.query.begin(), e.query.end());
  std::ranges::sort(all);
  EXPECT_EQ(all, d.images_in(Split::kTest));
}

TEST(Episodes, DeterministicUnderSeed) {
  const LabeledDataset d = grid_dataset(10, 8);
  Rng a(9), b(9);
  const Episode x = sample_episode(d, Split::kTest, 5, 1, 2, a);
  const Episode y = sample_episode(d, Split::kTest, 5, 1, 2, b);
  EXPECT_EQ(x.support, y.support);
  EXPECT_EQ(x.query, y.query);
}

TEST(Episodes, ClassFrequenciesAreBinomial) {
  const LabeledDataset d = grid_dataset(20, 2);
  std::vector<int> count(20, 0);
  Rng rng(0);
  for (int t = 0; t < 10000; ++t) {
    for (int c : sample_episode(d, Split::kTest, 5, 1, 1, rng).classes) ++count[static_cast<std::size_t>(c)];
  }
  const double sigma = std::sqrt(10000 * 0.25 * 0.75);
  for (int c : count) EXPECT_LT(std::abs(c - 2500.0), 3 * sigma);
}

TEST(Episodes, ShortfallsNameWhatIsMissing) {
  const LabeledDataset d = grid_dataset(4, 5);
  Rng rng(0);
  try {
    sample_episode(d, Split::kTest, 5, 1, 1, rng);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("4"), std::string::npos) << e.what();
  }
  EXPECT_THROW(sample_episode(d, Split::kTest, 2, 3, 3, rng), InputError);
  EXPECT_THROW(sample_episode(d, Split::kVal, 2, 1, 1, rng), InputError);
}

TEST(Summarize, MatchesFormula) {
  const std::vector<double> acc{0.2, 0.4, 0.4, 1.0};
  const EvalResult r = summarize(acc);
  // mean 0.5, population variance (0.09 + 0.01 + 0.01 + 0.25) / 4 = 0.09
  EXPECT_NEAR(r.mean_accuracy, 0.5, 1e-15);
  EXPECT_NEAR(r.ci95, 1.96 * 0.3 / 2.0, 1e-15);
  EXPECT_EQ(r.task_count, 4);
  EXPECT_EQ(summarize({0.7}).ci95, 0.0);
}

TEST(Evaluate, PerfectEmbeddingsScoreHundred) {
  const LabeledDataset d = grid_dataset(8, 20);
  RowMatrix<double> emb = RowMatrix<double>::Zero(d.size(), 8);
  for (Index i = 0; i < d.size(); ++i) {
    const int c = d.labels[static_cast<std::size_t>(i)];
    if (c < 8) emb(i, c) = 1.0;
  }
  EvalOptions o;
  o.tasks = 50;
  const EvalResult r = evaluate_embeddings(d, Split::kTest, emb, o);
  EXPECT_EQ(r.mean_accuracy, 1.0);
  EXPECT_EQ(r.ci95, 0.0);
}

TEST(Evaluate, LabelIgnoringEmbeddingIsChance) {
  const LabeledDataset d = grid_dataset(10, 20);
  Rng rng(17);
  const RowMatrix<double> emb = random_normal<double>({d.size(), 6}, rng, 1.0).matrix();
  EvalOptions o;
  o.tasks = 600;
  const EvalResult r = evaluate_embeddings(d, Split::kTest, emb, o);
  EXPECT_GE(r.mean_accuracy, 0.17);
  EXPECT_LE(r.mean_accuracy, 0.23);
}

TEST(Evaluate, ThreadCountDoesNotChangeResults) {
  const LabeledDataset d = grid_dataset(10, 20);
  Rng rng(4);
  const RowMatrix<double> emb = random_normal<double>({d.size(), 4}, rng, 1.0).matrix();
  EvalOptions o;
  o.tasks = 40;
  const EvalResult one = evaluate_embeddings(d, Split::kTest, emb, o);
  o.threads = 4;
  const EvalResult four = evaluate_embeddings(d, Split::kTest, emb, o);
  EXPECT_EQ(one.task_accuracies, four.task_accuracies);
  const EvalResult again = summarize(one.task_accuracies);
  EXPECT_NEAR(again.ci95, one.ci95, 1e-12);
}
