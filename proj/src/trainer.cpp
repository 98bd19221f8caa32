#include "corl/trainer.hpp"

namespace corl {

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* field, const char* what) {
    if (!ok) throw ConfigError(field, what);
  };
  require(std::isfinite(gamma1) && gamma1 >= 0, "gamma1", "must be >= 0");
  require(std::isfinite(gamma2) && gamma2 >= 0, "gamma2", "must be >= 0");
  require(std::isfinite(base_lr) && base_lr > 0, "base_lr", "must be > 0");
  require(momentum >= 0 && momentum < 1, "momentum", "must lie in [0, 1)");
  require(std::isfinite(weight_decay) && weight_decay >= 0, "weight_decay", "must be >= 0");
  require(batch_size > 0, "batch_size", "must be positive");
  require(epochs > 0, "epochs", "must be positive");
  require(kmeans_sample > 0, "kmeans_sample", "must be positive");
  require(kmeans_iters > 0, "kmeans_iters", "must be positive");
  require(val_tasks > 0, "val_tasks", "must be positive");
  require(val_way > 1, "val_way", "must be at least 2");
  require(val_shot > 0, "val_shot", "must be positive");
  require(val_queries > 0, "val_queries", "must be positive");
}

namespace {

void check_image_shape(const ModelConfig& cfg, const LabeledDataset& data) {
  const BackboneConfig& b = cfg.backbone;
  if (data.height != b.input_height || data.width != b.input_width || data.channels != b.input_channels) {
    throw DimensionError("dataset images are " + std::to_string(data.height) + "x" + std::to_string(data.width) + "x" +
                         std::to_string(data.channels) + " but the model expects " + std::to_string(b.input_height) +
                         "x" + std::to_string(b.input_width) + "x" + std::to_string(b.input_channels));
  }
}

void require_finite(const Var<float>& v, const char* term) {
  if (!std::isfinite(v.value()[0])) {
    throw TrainingAbort(std::string("non-finite ") + term + " (" + std::to_string(v.value()[0]) + ")", term);
  }
}

}  // namespace

RowMatrix<double> sample_feature_vectors(const ModelConfig& cfg, const ParameterSet<float>& params,
                                         const LabeledDataset& data, std::span<const Index> images, Index max_count,
                                         Rng& rng) {
  check_image_shape(cfg, data);
  const Index c = cfg.feature_spec().channels;
  RowMatrix<double> out(0, c);
  Index seen = 0;
  constexpr Index kChunk = 64;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const auto part = images.subspan(start, std::min<std::size_t>(kChunk, images.size() - start));
    Tape<float> tape;
    BoundParameters<float> bound(tape, params);
    const ForwardMode<float> mode{.training = true};
    const Tensor<float> f =
        backbone::forward(cfg.backbone, bound, tape.constant(images_to_tensor<float>(data, part)), mode).value();
    const auto rows = f.matrix();
    for (Index r = 0; r < rows.rows(); ++r, ++seen) {
      // reservoir sampling keeps a uniform subset of size max_count
      if (out.rows() < max_count) {
        out.conservativeResize(out.rows() + 1, c);
        out.row(out.rows() - 1) = rows.row(r).cast<double>();
      } else {
        const Index j = rng.below(seen + 1);
        if (j < max_count) out.row(j) = rows.row(r).cast<double>();
      }
    }
  }
  return out;
}

TrainResult train(const LabeledDataset& data, ModelConfig model, const TrainConfig& cfg,
                  const std::function<void(const EpochMetrics&)>& on_epoch) {
  cfg.validate();
  data.validate();
  const std::vector<int> train_classes = data.classes_in(Split::kTrain);
  if (train_classes.empty()) throw InputError("dataset has no training classes");
  model.num_classes = static_cast<Index>(train_classes.size());
  model.validate();
  check_image_shape(model, data);

  std::vector<int> label_of(data.classes.size(), -1);
  for (std::size_t k = 0; k < train_classes.size(); ++k) label_of[static_cast<std::size_t>(train_classes[k])] = static_cast<int>(k);
  const std::vector<Index> images = data.images_in(Split::kTrain);
  if (images.empty()) throw InputError("training split has no images");

  Rng rng(cfg.seed);
  Rng init_rng = rng.split(1);
  Rng sample_rng = rng.split(2);
  ParameterSet<float> params = init_model<float>(model, init_rng);

  TrainResult result;
  {
    const RowMatrix<double> sample = sample_feature_vectors(model, params, data, images, cfg.kmeans_sample, sample_rng);
    const RowMatrix<double> centers = compdict::kmeans_init(sample, model.dict_size, cfg.kmeans_iters, cfg.seed);
    Tensor<float>& dict = params.at(names::kDictionary);
    dict.matrix() = centers.cast<float>();
    const Tensor<double> f({1, 1, sample.rows(), sample.cols()}, Eigen::Map<const Array<double>>(sample.data(), sample.size()));
    const Tensor<double> d({centers.rows(), centers.cols()}, Eigen::Map<const Array<double>>(centers.data(), centers.size()));
    result.initial_cluster_loss = compdict::cluster_loss(d, f) / static_cast<double>(sample.rows());
  }

  const bool has_val = static_cast<Index>(data.classes_in(Split::kVal).size()) >= cfg.val_way;
  const Index n = static_cast<Index>(images.size());
  const Index batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  const Index total_steps = cfg.epochs * batches;
  SgdState<float> state;
  std::vector<Index> order = images;
  std::optional<double> best_val;

  for (Index epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(std::span<Index>(order));
    EpochMetrics m;
    m.epoch = epoch;
    Index correct = 0;
    for (Index b = 0; b < batches; ++b) {
      const Index start = b * cfg.batch_size;
      const Index count = std::min(cfg.batch_size, n - start);
      const std::span<const Index> idx(order.data() + start, static_cast<std::size_t>(count));
      std::vector<bool> flips(static_cast<std::size_t>(count), false);
      if (cfg.flip_augment) {
        for (auto&& f : flips) f = rng.uniform() < 0.5;
      }
      std::vector<int> labels;
      for (Index i : idx) labels.push_back(label_of[static_cast<std::size_t>(data.labels[static_cast<std::size_t>(i)])]);

      Tape<float> tape;
      BoundParameters<float> bound(tape, params, [](const std::string& name) { return !backbone::is_buffer(name); });
      std::vector<BatchStats<float>> stats;
      const ForwardMode<float> mode{true, &rng, &stats};
      const auto pass = forward(model, bound, tape.constant(images_to_tensor<float>(data, idx, flips)), true, mode);
      const auto terms = total_loss(pass.logits, labels, bound.at(names::kDictionary), pass.features,
                                    bound.at(names::kMaps), cfg.gamma1, cfg.gamma2, model.ablation);
      require_finite(terms.classification, "L_class");
      require_finite(terms.cluster, "L_cluster");
      require_finite(terms.sparse, "L_sparse");
      tape.backward(terms.total);

      ParameterSet<float> grads;
      for (const auto& [name, var] : bound) {
        if (backbone::is_buffer(name)) continue;
        Tensor<float> g = tape.grad(var);
        if (!g.all_finite()) throw TrainingAbort("non-finite gradient for " + name, name);
        grads.add(name, std::move(g));
      }
      m.lr = lr_at(result.steps, total_steps, cfg.base_lr);
      sgd_step(params, grads, state, {m.lr, cfg.momentum, cfg.weight_decay});
      backbone::update_running_stats(params, stats);
      ++result.steps;
      ++m.steps;

      const auto w = static_cast<double>(count);
      m.class_loss += w * terms.classification.value()[0];
      m.cluster_loss += w * terms.cluster.value()[0];
      m.sparse_loss += w * terms.sparse.value()[0];
      m.total_loss += w * terms.total.value()[0];
      const auto logits = pass.logits.value().matrix();
      for (Index r = 0; r < count; ++r) {
        Index arg;
        logits.row(r).maxCoeff(&arg);
        correct += arg == labels[static_cast<std::size_t>(r)];
      }
    }
    const auto total = static_cast<double>(n);
    m.class_loss /= total;
    m.cluster_loss /= total;
    m.sparse_loss /= total;
    m.total_loss /= total;
    m.train_acc = static_cast<double>(correct) / total;

    Checkpoint current{model, cfg, params, epoch, rng};
    if (has_val) {
      EvalOptions opt;
      opt.way = cfg.val_way;
      opt.shot = cfg.val_shot;
      opt.queries = cfg.val_queries;
      opt.tasks = cfg.val_tasks;
      opt.seed = cfg.seed;
      m.val_acc = evaluate(current, data, Split::kVal, opt).mean_accuracy;
      if (!best_val || *m.val_acc > *best_val) {
        best_val = m.val_acc;
        result.best_checkpoint = current;
      }
    }
    result.history.push_back(m);
    if (on_epoch) on_epoch(m);
    if (epoch == cfg.epochs) result.final_checkpoint = std::move(current);
  }
  if (!has_val) result.best_checkpoint = result.final_checkpoint;
  return result;
}

RowMatrix<double> embed_dataset(const ModelConfig& cfg, const ParameterSet<float>& params, const LabeledDataset& data) {
  check_image_shape(cfg, data);
  std::vector<Index> all(static_cast<std::size_t>(data.size()));
  std::iota(all.begin(), all.end(), Index{0});
  return forward_embedding(cfg, params, images_to_tensor<float>(data, all));
}

EvalResult evaluate(const Checkpoint& ckpt, const LabeledDataset& data, Split split, const EvalOptions& options) {
  return evaluate_embeddings(data, split, embed_dataset(ckpt.model, ckpt.params, data), options);
}

}  // namespace corl
