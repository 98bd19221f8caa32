#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "corl/ops.hpp"
#include "corl/parameters.hpp"
#include "corl/rng.hpp"

namespace corl {

/// Spatial size and depth of the backbone's output map F.
struct FeatureMapSpec {
  Index height = 0;
  Index width = 0;
  Index channels = 0;

  Index positions() const { return height * width; }
  friend bool operator==(const FeatureMapSpec&, const FeatureMapSpec&) = default;
};

/// Residual conv stack. Every stage halves the spatial size (ceiling division)
/// with a stride-2 3x3 conv on the main path and a stride-2 1x1 projection on
/// the skip path. Every conv is followed by batch normalization.
struct BackboneConfig {
  Index input_height = 32;
  Index input_width = 32;
  Index input_channels = 3;
  std::vector<Index> stage_channels{16, 32, 64};
  Index convs_per_stage = 2;
  bool use_dropout = false;
  double dropout_rate = 0.1;

  /// Throws InputError on an invalid configuration.
  void validate() const;

  FeatureMapSpec output_spec() const;

  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

/// ceil(n / 2)
inline Index halve(Index n) { return (n + 1) / 2; }

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Batch statistics of one normalization layer, as seen during a training forward pass.
template <typename Scalar>
struct BatchStats {
  std::string layer;  // name prefix, e.g. "backbone.s0.conv1"
  Array<Scalar> mean, var;
  Index count = 0;  // positions the statistics were taken over
};

/// Training mode normalizes with batch statistics (and reports them through `stats`);
/// inference mode uses the stored running statistics.
template <typename Scalar>
struct ForwardMode {
  bool training = false;
  Rng* dropout_rng = nullptr;
  std::vector<BatchStats<Scalar>>* stats = nullptr;
};

namespace backbone {

inline std::string conv_layer(std::size_t stage, Index conv) {
  return "backbone.s" + std::to_string(stage) + ".conv" + std::to_string(conv);
}
inline std::string skip_layer(std::size_t stage) { return "backbone.s" + std::to_string(stage) + ".skip"; }
inline std::string weight(const std::string& layer) { return layer + ".w"; }
inline std::string bn_scale(const std::string& layer) { return layer + ".bn.g"; }
inline std::string bn_shift(const std::string& layer) { return layer + ".bn.b"; }
inline std::string bn_mean(const std::string& layer) { return layer + ".bn.mean"; }
inline std::string bn_var(const std::string& layer) { return layer + ".bn.var"; }

/// Running statistics are state, not trainable parameters.
inline bool is_buffer(const std::string& name) { return name.ends_with(".bn.mean") || name.ends_with(".bn.var"); }

template <typename Scalar>
void add_batch_norm(const std::string& layer, Index channels, ParameterSet<Scalar>& params) {
  params.add(bn_scale(layer), Tensor<Scalar>::constant({channels}, Scalar(1)));
  params.add(bn_shift(layer), Tensor<Scalar>({channels}));
  params.add(bn_mean(layer), Tensor<Scalar>({channels}));
  params.add(bn_var(layer), Tensor<Scalar>::constant({channels}, Scalar(1)));
}

/// Kaiming fan-in initialization for conv kernels; unit scale and zero shift for batch norm.
template <typename Scalar>
void init(const BackboneConfig& cfg, Rng& rng, ParameterSet<Scalar>& params) {
  cfg.validate();
  Index in_c = cfg.input_channels;
  for (std::size_t s = 0; s < cfg.stage_channels.size(); ++s) {
    const Index out_c = cfg.stage_channels[s];
    for (Index c = 0; c < cfg.convs_per_stage; ++c) {
      const Index cin = c == 0 ? in_c : out_c;
      const double stddev = std::sqrt(2.0 / static_cast<double>(9 * cin));
      params.add(weight(conv_layer(s, c)), random_normal<Scalar>({out_c, 3, 3, cin}, rng, stddev));
      add_batch_norm(conv_layer(s, c), out_c, params);
    }
    params.add(weight(skip_layer(s)), random_normal<Scalar>({out_c, 1, 1, in_c}, rng, std::sqrt(2.0 / static_cast<double>(in_c))));
    add_batch_norm(skip_layer(s), out_c, params);
    in_c = out_c;
  }
}

template <typename Scalar>
Var<Scalar> batch_norm(const Var<Scalar>& x, const BoundParameters<Scalar>& params, const std::string& layer,
                       const ForwardMode<Scalar>& mode) {
  const auto eps = static_cast<Scalar>(kBatchNormEpsilon);
  Var<Scalar> normalized;
  if (mode.training) {
    std::pair<Array<Scalar>, Array<Scalar>> st;
    normalized = standardize_channels(x, eps, mode.stats ? &st : nullptr);
    if (mode.stats) mode.stats->push_back({layer, std::move(st.first), std::move(st.second), x.size() / x.shape().back()});
  } else {
    const Array<Scalar> inv = (params.at(bn_var(layer)).value().array() + eps).rsqrt();
    const Array<Scalar> shift = -params.at(bn_mean(layer)).value().array() * inv;
    const Index c = inv.size();
    normalized = add(mul(x, x.tape().constant(Tensor<Scalar>({c}, inv))), x.tape().constant(Tensor<Scalar>({c}, shift)));
  }
  return add(mul(normalized, params.at(bn_scale(layer))), params.at(bn_shift(layer)));
}

/// images: (N, H, W, C_in) -> feature map (N, H', W', C_last). No global pooling.
template <typename Scalar>
Var<Scalar> forward(const BackboneConfig& cfg, const BoundParameters<Scalar>& params, const Var<Scalar>& images,
                    const ForwardMode<Scalar>& mode = {}) {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != cfg.input_height || s[2] != cfg.input_width || s[3] != cfg.input_channels) {
    throw DimensionError("backbone expects (N, " + std::to_string(cfg.input_height) + ", " +
                         std::to_string(cfg.input_width) + ", " + std::to_string(cfg.input_channels) + "), got " +
                         shape_string(s));
  }
  Var<Scalar> x = images;
  for (std::size_t st = 0; st < cfg.stage_channels.size(); ++st) {
    Var<Scalar> h = x;
    for (Index c = 0; c < cfg.convs_per_stage; ++c) {
      const std::string layer = conv_layer(st, c);
      h = batch_norm(conv2d(h, params.at(weight(layer)), c == 0 ? 2 : 1, 1), params, layer, mode);
      if (c + 1 < cfg.convs_per_stage) h = relu(h);
    }
    const Var<Scalar> skip = batch_norm(conv2d(x, params.at(weight(skip_layer(st))), 2, 0), params, skip_layer(st), mode);
    x = relu(add(h, skip));
    if (mode.training && mode.dropout_rng != nullptr && cfg.use_dropout && cfg.dropout_rate > 0.0) {
      Tensor<Scalar> mask(x.shape());
      const auto keep = static_cast<Scalar>(1.0 / (1.0 - cfg.dropout_rate));
      for (Index i = 0; i < mask.size(); ++i) mask[i] = mode.dropout_rng->uniform() < cfg.dropout_rate ? Scalar(0) : keep;
      x = mul(x, x.tape().constant(std::move(mask)));
    }
  }
  return x;
}

/// Folds batch statistics into the running estimates (unbiased variance).
template <typename Scalar>
void update_running_stats(ParameterSet<Scalar>& params, const std::vector<BatchStats<Scalar>>& stats,
                          double momentum = kBatchNormMomentum) {
  const auto m = static_cast<Scalar>(momentum);
  for (const auto& st : stats) {
    const Scalar correction = st.count > 1 ? static_cast<Scalar>(st.count) / static_cast<Scalar>(st.count - 1) : Scalar(1);
    auto& mean = params.at(bn_mean(st.layer)).array();
    auto& var = params.at(bn_var(st.layer)).array();
    mean = (Scalar(1) - m) * mean + m * st.mean;
    var = (Scalar(1) - m) * var + m * correction * st.var;
  }
}

}  // namespace backbone
}  // namespace corl
