#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "corl/dataset.hpp"
#include "corl/episodes.hpp"
#include "corl/model.hpp"

namespace corl {

struct TrainConfig {
  double gamma1 = 1.0;  // cluster loss weight
  double gamma2 = 0.5;  // sparse loss weight
  double base_lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  Index batch_size = 16;
  Index epochs = 30;
  std::uint64_t seed = 0;
  bool flip_augment = true;
  Index kmeans_sample = 10000;  // feature vectors fed to the dictionary initialization
  Index kmeans_iters = 20;
  // meta-validation episodes, used only when the dataset has a val split
  Index val_tasks = 50;
  Index val_way = 5;
  Index val_shot = 1;
  Index val_queries = 15;

  /// Throws ConfigError naming the offending field.
  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

template <typename Scalar>
struct LossTerms {
  Var<Scalar> total;
  Var<Scalar> classification;  // mean cross-entropy over the batch
  Var<Scalar> cluster;         // cluster loss averaged over the batch (unweighted)
  Var<Scalar> sparse;          // map-dictionary sparse loss (unweighted)
};

/// L_class + gamma1 * L_cluster + gamma2 * L_sparse, with disabled terms left out of the total.
template <typename Scalar>
LossTerms<Scalar> total_loss(const Var<Scalar>& logits, std::span<const int> labels, const Var<Scalar>& dictionary,
                             const Var<Scalar>& features, const Var<Scalar>& maps, double gamma1, double gamma2,
                             const AblationSwitches& ablation = {}) {
  LossTerms<Scalar> t;
  t.classification = softmax_cross_entropy(logits, labels);
  t.cluster = compdict::cluster_loss(dictionary, features);
  t.sparse = ablation.use_map_dictionary ? mapdict::sparse_loss(maps) : logits.tape().constant(Tensor<Scalar>(Shape{}));
  t.total = t.classification;
  if (ablation.use_cluster_loss && gamma1 != 0) t.total = add(t.total, scale(t.cluster, static_cast<Scalar>(gamma1)));
  if (ablation.use_map_dictionary && ablation.use_sparse_loss && gamma2 != 0) {
    t.total = add(t.total, scale(t.sparse, static_cast<Scalar>(gamma2)));
  }
  return t;
}

/// Cosine annealing: base_lr * (1 + cos(pi t / T)) / 2.
inline double lr_at(Index t, Index total, double base_lr) {
  if (total <= 0) throw InputError("lr_at: total steps must be positive");
  if (t < 0 || t > total) throw InputError("lr_at: step outside [0, total]");
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(total)));
}

struct SgdOptions {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

template <typename Scalar>
struct SgdState {
  ParameterSet<Scalar> velocity;
};

/// Dictionaries are kept on the unit sphere instead of being decayed.
inline bool is_unit_constrained(const std::string& name) { return name == names::kDictionary || name == names::kMaps; }

/// v = momentum * v + g + wd * p; p -= lr * v. Missing gradients count as zero.
/// Dictionary items skip weight decay and are renormalized after the update;
/// batch-norm running statistics are left alone.
template <typename Scalar>
void sgd_step(ParameterSet<Scalar>& params, const ParameterSet<Scalar>& grads, SgdState<Scalar>& state,
              const SgdOptions& opt) {
  const auto m = static_cast<Scalar>(opt.momentum);
  const auto lr = static_cast<Scalar>(opt.lr);
  for (auto& [name, p] : params) {
    if (backbone::is_buffer(name)) continue;
    if (!state.velocity.contains(name)) state.velocity.add(name, Tensor<Scalar>(p.shape()));
    Tensor<Scalar>& v = state.velocity.at(name);
    const bool unit = is_unit_constrained(name);
    const auto wd = static_cast<Scalar>(unit ? 0.0 : opt.weight_decay);
    v.array() = m * v.array() + wd * p.array();
    if (grads.contains(name)) {
      const Tensor<Scalar>& g = grads.at(name);
      if (g.shape() != p.shape()) throw DimensionError("gradient shape mismatch for " + name);
      v.array() += g.array();
    }
    p.array() -= lr * v.array();
    if (unit) normalize_items(p);
  }
}

/// Trained parameters plus everything needed to rebuild the model.
struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  ParameterSet<float> params;
  Index epoch = 0;
  Rng rng;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Parses a CORLCKPT buffer; any defect raises FormatError with the byte offset.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct EpochMetrics {
  Index epoch = 0;  // 1-based
  double class_loss = 0, cluster_loss = 0, sparse_loss = 0, total_loss = 0;
  double train_acc = 0;
  double lr = 0;  // rate used by the epoch's last step
  Index steps = 0;
  std::optional<double> val_acc;
};

struct TrainResult {
  Checkpoint final_checkpoint;
  Checkpoint best_checkpoint;
  std::vector<EpochMetrics> history;
  Index steps = 0;
  double initial_cluster_loss = 0;  // on the k-means feature sample, right after initialization
};

/// Backbone feature vectors (rows) of up to `max_count` positions, reservoir-sampled over `images`.
RowMatrix<double> sample_feature_vectors(const ModelConfig& cfg, const ParameterSet<float>& params,
                                         const LabeledDataset& data, std::span<const Index> images, Index max_count,
                                         Rng& rng);

/// Meta-trains on the dataset's train split. model.num_classes is set to the number of
/// training classes; labels are remapped by ascending class id.
TrainResult train(const LabeledDataset& data, ModelConfig model, const TrainConfig& cfg,
                  const std::function<void(const EpochMetrics&)>& on_epoch = {});

/// Frozen-model embeddings for every image of the dataset (rows follow dataset order).
RowMatrix<double> embed_dataset(const ModelConfig& cfg, const ParameterSet<float>& params, const LabeledDataset& data);

/// Episodic evaluation of a checkpoint on one split.
EvalResult evaluate(const Checkpoint& ckpt, const LabeledDataset& data, Split split, const EvalOptions& options);

}  // namespace corl
