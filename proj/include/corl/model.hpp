#pragma once

#include <string>
#include <vector>

#include "corl/attention.hpp"
#include "corl/backbone.hpp"
#include "corl/compdict.hpp"
#include "corl/heads.hpp"
#include "corl/mapdict.hpp"

namespace corl {

struct AblationSwitches {
  bool use_map_dictionary = true;  // off: O = A and no sparse loss
  bool use_attention = true;       // off: Phi = O
  bool use_cluster_loss = true;
  bool use_sparse_loss = true;

  friend bool operator==(const AblationSwitches&, const AblationSwitches&) = default;
};

/// Architecture of the full pipeline: backbone, both dictionaries, attention and the training head.
struct ModelConfig {
  BackboneConfig backbone;
  Index dict_size = 64;   // B
  Index map_size = 32;    // V
  Index reduction = 4;    // r, must divide B
  Index hidden = 64;      // width of the training head's hidden layer
  Index num_classes = 8;  // meta-training classes seen by the training head
  AblationSwitches ablation;

  void validate() const;
  FeatureMapSpec feature_spec() const { return backbone.output_spec(); }
  Index embedding_dim() const { return dict_size + feature_spec().channels; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

namespace names {
inline const std::string kDictionary = "dict.D";
inline const std::string kMaps = "map.S";
inline const std::string kSqueeze = "attn.R";
inline const std::string kExcite1 = "attn.W1";
inline const std::string kExcite2 = "attn.W2";
inline const std::string kHeadWa = "head.wa";
inline const std::string kHeadBa = "head.ba";
inline const std::string kHeadWb = "head.wb";
inline const std::string kHeadBb = "head.bb";
}  // namespace names

/// Unit-normalizes every row (item) of a dictionary parameter in place.
template <typename Scalar>
void normalize_items(Tensor<Scalar>& items) {
  auto m = items.matrix(items.dim(0), items.size() / items.dim(0));
  for (Index r = 0; r < m.rows(); ++r) m.row(r) /= std::max<Scalar>(m.row(r).norm(), static_cast<Scalar>(kNormEpsilon));
}

template <typename Scalar>
ParameterSet<Scalar> init_model(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ParameterSet<Scalar> params;
  backbone::init(cfg.backbone, rng, params);
  const FeatureMapSpec f = cfg.feature_spec();
  const Index b = cfg.dict_size;

  Tensor<Scalar> dict = random_normal<Scalar>({b, f.channels}, rng);
  normalize_items(dict);
  params.add(names::kDictionary, std::move(dict));

  Tensor<Scalar> maps = random_uniform<Scalar>({cfg.map_size, f.height, f.width}, rng);
  normalize_items(maps);
  params.add(names::kMaps, std::move(maps));

  params.add(names::kSqueeze, Tensor<Scalar>::constant({f.height, f.width, b}, Scalar(1) / static_cast<Scalar>(f.positions())));
  params.add(names::kExcite1, random_normal<Scalar>({b / cfg.reduction, b}, rng, 0.1));
  params.add(names::kExcite2, random_normal<Scalar>({b, b / cfg.reduction}, rng, 0.1));

  const Index e = cfg.embedding_dim();
  params.add(names::kHeadWa, random_normal<Scalar>({cfg.hidden, e}, rng, std::sqrt(2.0 / static_cast<double>(e))));
  params.add(names::kHeadBa, Tensor<Scalar>({cfg.hidden}));
  params.add(names::kHeadWb, random_normal<Scalar>({cfg.num_classes, cfg.hidden}, rng, std::sqrt(1.0 / static_cast<double>(cfg.hidden))));
  params.add(names::kHeadBb, Tensor<Scalar>({cfg.num_classes}));
  return params;
}

template <typename Scalar>
struct ForwardPass {
  Var<Scalar> features;     // F     (N, H, W, C)
  Var<Scalar> activations;  // A     (N, H, W, B)
  Var<Scalar> gated;        // O     (N, H, W, B)
  Var<Scalar> attended;     // Phi   (N, H, W, B)
  Var<Scalar> embedding;    //       (N, B + C)
  Var<Scalar> logits;       //       (N, classes); unset unless requested
  std::vector<Index> selected;
};

/// backbone -> detect -> match_and_gate -> squeeze/excite/reweight -> embedding [-> training head].
template <typename Scalar>
ForwardPass<Scalar> forward(const ModelConfig& cfg, const BoundParameters<Scalar>& params, const Var<Scalar>& images,
                            bool with_head, const ForwardMode<Scalar>& mode = {}) {
  ForwardPass<Scalar> out;
  out.features = backbone::forward(cfg.backbone, params, images, mode);
  out.activations = compdict::detect(out.features, params.at(names::kDictionary));
  if (cfg.ablation.use_map_dictionary) {
    auto gated = mapdict::match_and_gate(out.activations, params.at(names::kMaps));
    out.gated = gated.output;
    out.selected = std::move(gated.selected);
  } else {
    out.gated = out.activations;
  }
  if (cfg.ablation.use_attention) {
    auto z = attention::squeeze(out.gated, params.at(names::kSqueeze));
    auto g = attention::excite(z, params.at(names::kExcite1), params.at(names::kExcite2));
    out.attended = attention::reweight(out.gated, g);
  } else {
    out.attended = out.gated;
  }
  out.embedding = heads::assemble_embedding(out.attended, out.features);
  if (with_head) {
    out.logits = heads::train_head_forward(out.embedding, params.at(names::kHeadWa), params.at(names::kHeadBa),
                                           params.at(names::kHeadWb), params.at(names::kHeadBb));
  }
  return out;
}

/// Embeddings of a batch of images (N, H, W, C) in inference mode, as doubles.
template <typename Scalar>
RowMatrix<double> forward_embedding(const ModelConfig& cfg, const ParameterSet<Scalar>& params,
                                    const Tensor<Scalar>& images, Index chunk = 64) {
  const Index n = images.dim(0);
  const Index per_image = images.size() / n;
  RowMatrix<double> out(n, cfg.embedding_dim());
  for (Index start = 0; start < n; start += chunk) {
    const Index count = std::min(chunk, n - start);
    Shape s = images.shape();
    s[0] = count;
    Tensor<Scalar> batch(s, images.array().segment(start * per_image, count * per_image));
    Tape<Scalar> tape;
    BoundParameters<Scalar> bound(tape, params);
    auto pass = forward(cfg, bound, tape.constant(std::move(batch)), false);
    out.middleRows(start, count) = pass.embedding.value().matrix().template cast<double>();
  }
  return out;
}

}  // namespace corl
