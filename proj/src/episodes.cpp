#include "corl/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace corl {

Episode sample_episode(const LabeledDataset& data, Split split, Index way, Index shot, Index queries, Rng& rng) {
  if (way <= 0 || shot <= 0 || queries < 0) throw InputError("way and shot must be positive, queries non-negative");
  std::vector<int> pool = data.classes_in(split);
  if (static_cast<Index>(pool.size()) < way) {
    throw InputError(std::string("split ") + split_name(split) + " has " + std::to_string(pool.size()) +
                     " classes, episode needs " + std::to_string(way));
  }
  const auto by_class = data.images_by_class();
  rng.shuffle(std::span<int>(pool));
  Episode e;
  e.way = way;
  e.shot = shot;
  e.queries = queries;
  e.classes.assign(pool.begin(), pool.begin() + way);
  std::sort(e.classes.begin(), e.classes.end());
  for (int label = 0; label < static_cast<int>(way); ++label) {
    const int cls = e.classes[static_cast<std::size_t>(label)];
    std::vector<Index> items = by_class[static_cast<std::size_t>(cls)];
    if (static_cast<Index>(items.size()) < shot + queries) {
      throw InputError("class '" + data.classes[static_cast<std::size_t>(cls)].name + "' has " +
                       std::to_string(items.size()) + " images, episode needs " + std::to_string(shot + queries));
    }
    rng.shuffle(std::span<Index>(items));
    for (Index k = 0; k < shot; ++k) {
      e.support.push_back(items[static_cast<std::size_t>(k)]);
      e.support_labels.push_back(label);
    }
    for (Index k = 0; k < queries; ++k) {
      e.query.push_back(items[static_cast<std::size_t>(shot + k)]);
      e.query_labels.push_back(label);
    }
  }
  return e;
}

EvalResult summarize(std::vector<double> task_accuracies) {
  EvalResult r;
  r.task_count = static_cast<Index>(task_accuracies.size());
  if (r.task_count == 0) throw InputError("no tasks to summarize");
  const Eigen::Map<const Vector<double>> acc(task_accuracies.data(), r.task_count);
  r.mean_accuracy = acc.mean();
  const double sd = std::sqrt((acc.array() - r.mean_accuracy).square().mean());
  r.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(r.task_count));
  r.task_accuracies = std::move(task_accuracies);
  return r;
}

EvalResult evaluate_embeddings(const LabeledDataset& data, Split split, const RowMatrix<double>& embeddings,
                               const EvalOptions& options) {
  if (embeddings.rows() != data.size()) throw DimensionError("one embedding row per dataset image required");
  if (options.tasks <= 0) throw InputError("tasks must be positive");
  const Rng root(options.seed);
  std::vector<double> acc(static_cast<std::size_t>(options.tasks));
  auto run_task = [&](Index t) {
    Rng rng = root.split(static_cast<std::uint64_t>(t));
    const Episode e = sample_episode(data, split, options.way, options.shot, options.queries, rng);
    RowMatrix<double> xs(static_cast<Index>(e.support.size()), embeddings.cols());
    for (std::size_t i = 0; i < e.support.size(); ++i) xs.row(static_cast<Index>(i)) = embeddings.row(e.support[i]);
    const heads::LogisticHead head = heads::fit_logistic(xs, e.support_labels, options.way, options.logistic);
    Index correct = 0;
    for (std::size_t i = 0; i < e.query.size(); ++i) {
      correct += heads::predict(head, embeddings.row(e.query[i]).transpose()) == e.query_labels[i];
    }
    acc[static_cast<std::size_t>(t)] = e.query.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(e.query.size());
  };

  const Index threads = std::clamp<Index>(options.threads, 1, options.tasks);
  if (threads == 1) {
    for (Index t = 0; t < options.tasks; ++t) run_task(t);
  } else {
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
    std::vector<std::thread> pool;
    for (Index w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (Index t = w; t < options.tasks; t += threads) run_task(t);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& err : errors) {
      if (err) std::rethrow_exception(err);
    }
  }
  return summarize(std::move(acc));
}

}  // namespace corl
