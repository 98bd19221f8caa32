#pragma once

#include <filesystem>
#include <vector>

#include "corl/trainer.hpp"

namespace corl {

/// A source-image region around one image's strongest response to a component.
struct Patch {
  Index image = 0;
  Index row0 = 0, col0 = 0, row1 = 0, col1 = 0;  // half-open pixel box
  double score = 0;                              // peak activation inside the box
};

struct Mosaic {
  Index component = 0;
  double threshold = 0;  // threshold_frac * global max of the component's map
  std::vector<Patch> patches;  // descending score, each >= threshold
};

/// Pixel rows [first, last) covered by cell i of a map of `cells` cells over `pixels` pixels,
/// under nearest-neighbour upsampling (pixel y reads cell floor(y * cells / pixels)).
std::pair<Index, Index> cell_footprint(Index i, Index cells, Index pixels);

/// Component activation maps A (N, H', W', B) of every dataset image, inference mode.
Tensor<float> activation_maps(const Checkpoint& ckpt, const LabeledDataset& data);

/// For each component: threshold = frac * global max over the dataset; every image
/// contributes its peak cell (upsampled to pixels) if that peak passes the threshold;
/// the top `topk` by score are kept. Throws InputError for a component id >= B.
std::vector<Mosaic> build_mosaics(const Checkpoint& ckpt, const LabeledDataset& data, std::span<const Index> components,
                                  Index topk, double threshold_frac);

/// Writes comp_<b>/patch_<k>.ppm, comp_<b>_mosaic.ppm and manifest.json under `dir`.
void write_mosaics(const std::filesystem::path& dir, const LabeledDataset& data, std::span<const Mosaic> mosaics,
                   Index topk);

/// Binary PPM (P6); single-channel images are written as gray RGB.
void write_ppm(const std::filesystem::path& path, Index height, Index width, Index channels,
               std::span<const std::uint8_t> pixels);

}  // namespace corl
