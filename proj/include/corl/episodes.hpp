#pragma once

#include <functional>
#include <vector>

#include "corl/dataset.hpp"
#include "corl/heads.hpp"
#include "corl/rng.hpp"

namespace corl {

/// One N-way-K-shot task. Indices refer to dataset images; labels are 0..N-1,
/// assigned by ascending original class id.
struct Episode {
  Index way = 0, shot = 0, queries = 0;
  std::vector<int> classes;  // original class ids, ascending; label k <-> classes[k]
  std::vector<Index> support, query;
  std::vector<int> support_labels, query_labels;
};

/// Uniform class draw without replacement, then uniform instance draw without replacement per class.
Episode sample_episode(const LabeledDataset& data, Split split, Index way, Index shot, Index queries, Rng& rng);

struct EvalOptions {
  Index way = 5, shot = 1, queries = 15, tasks = 200;
  std::uint64_t seed = 0;
  Index threads = 1;
  heads::LogisticOptions logistic;
};

struct EvalResult {
  double mean_accuracy = 0;
  double ci95 = 0;
  Index task_count = 0;
  std::vector<double> task_accuracies;
};

/// mean and 1.96 * population stddev / sqrt(T) over per-task accuracies.
EvalResult summarize(std::vector<double> task_accuracies);

/// Episodic evaluation over precomputed per-image embeddings (rows indexed like the dataset).
/// Task t draws its episode from Rng(seed).split(t), so results do not depend on thread count.
EvalResult evaluate_embeddings(const LabeledDataset& data, Split split, const RowMatrix<double>& embeddings,
                               const EvalOptions& options);

}  // namespace corl
