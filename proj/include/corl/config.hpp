#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "corl/synth.hpp"
#include "corl/trainer.hpp"

namespace corl {

/// Everything a training run needs. Text form is one `key = value` per line,
/// `#` starts a comment, unknown keys are errors.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string dataset;  // CORLIMGS file
  std::string out;      // output directory

  void validate() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Keys absent from the text keep their defaults. Throws ConfigError naming the field.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

/// Canonical text; parse_config(format_config(c)) == c and formatting is stable.
std::string format_config(const RunConfig& cfg);

/// Synthetic-data spec in the same key = value form (explicit layouts are not expressible).
SynthSpec parse_synth_spec(std::string_view text);
SynthSpec load_synth_spec(const std::filesystem::path& path);
std::string format_synth_spec(const SynthSpec& spec);

}  // namespace corl
