#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "corl/tensor.hpp"

namespace corl {

enum class Split : std::uint8_t { kTrain = 0, kVal = 1, kTest = 2 };

const char* split_name(Split s);
Split parse_split(const std::string& name);

struct ClassInfo {
  std::string name;
  Split split = Split::kTrain;

  friend bool operator==(const ClassInfo&, const ClassInfo&) = default;
};

/// 8-bit images with one class label each; every class belongs to exactly one split.
struct LabeledDataset {
  Index height = 0, width = 0, channels = 0;
  std::vector<ClassInfo> classes;
  std::vector<int> labels;
  std::vector<std::uint8_t> pixels;  // image-major, then row-major HWC

  Index size() const { return static_cast<Index>(labels.size()); }
  Index image_bytes() const { return height * width * channels; }
  std::span<const std::uint8_t> image(Index i) const {
    return {pixels.data() + i * image_bytes(), static_cast<std::size_t>(image_bytes())};
  }

  /// Appends an image; pixel count must equal image_bytes().
  void add_image(int label, std::span<const std::uint8_t> image);

  /// Class ids in `split`, ascending.
  std::vector<int> classes_in(Split split) const;
  /// Image indices per class id, each ascending.
  std::vector<std::vector<Index>> images_by_class() const;
  /// Image indices whose class is in `split`, ascending.
  std::vector<Index> images_in(Split split) const;

  /// Throws InputError on inconsistent sizes, label range or duplicated class names.
  void validate() const;

  friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

std::vector<std::uint8_t> encode_dataset(const LabeledDataset& data);
/// Parses a CORLIMGS buffer. Any defect raises FormatError with the byte offset.
LabeledDataset decode_dataset(std::span<const std::uint8_t> bytes);

void save_dataset(const std::filesystem::path& path, const LabeledDataset& data);
LabeledDataset load_dataset(const std::filesystem::path& path);

/// Images as an (n, H, W, C) tensor scaled to [0, 1]; flip[i] mirrors image i horizontally.
template <typename Scalar>
Tensor<Scalar> images_to_tensor(const LabeledDataset& data, std::span<const Index> indices,
                                const std::vector<bool>& flip = {}) {
  const Index h = data.height, w = data.width, c = data.channels;
  Tensor<Scalar> out({static_cast<Index>(indices.size()), h, w, c});
  Scalar* dst = out.data();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto img = data.image(indices[k]);
    const bool mirror = !flip.empty() && flip[k];
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        const Index sx = mirror ? w - 1 - x : x;
        for (Index ch = 0; ch < c; ++ch) *dst++ = static_cast<Scalar>(img[static_cast<std::size_t>((y * w + sx) * c + ch)]) / Scalar(255);
      }
    }
  }
  return out;
}

}  // namespace corl
