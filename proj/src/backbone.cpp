#include "corl/backbone.hpp"

namespace corl {

void BackboneConfig::validate() const {
  if (input_height <= 0 || input_width <= 0 || input_channels <= 0) {
    throw InputError("backbone input dimensions must be positive");
  }
  if (stage_channels.empty()) throw InputError("backbone needs at least one stage");
  for (Index c : stage_channels) {
    if (c <= 0) throw InputError("backbone stage channels must be positive");
  }
  if (convs_per_stage <= 0) throw InputError("convs_per_stage must be positive");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw InputError("dropout_rate must lie in [0, 1)");
  const FeatureMapSpec out = output_spec();
  if (out.height < 2 || out.width < 2) {
    throw InputError("input " + std::to_string(input_height) + "x" + std::to_string(input_width) + " shrinks to " +
                     std::to_string(out.height) + "x" + std::to_string(out.width) + " after " +
                     std::to_string(stage_channels.size()) + " stages; need at least 2x2");
  }
}

FeatureMapSpec BackboneConfig::output_spec() const {
  FeatureMapSpec spec{input_height, input_width, stage_channels.empty() ? 0 : stage_channels.back()};
  for (std::size_t i = 0; i < stage_channels.size(); ++i) {
    spec.height = halve(spec.height);
    spec.width = halve(spec.width);
  }
  return spec;
}

}  // namespace corl
