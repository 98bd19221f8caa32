#pragma once

#include <cstdint>
#include <vector>

#include "corl/dataset.hpp"

namespace corl {

/// One part placed at a nominal anchor (top-left corner of its glyph).
struct Placement {
  int part = 0;
  Index row = 0, col = 0;

  friend auto operator<=>(const Placement&, const Placement&) = default;
};

using Layout = std::vector<Placement>;

/// Where a glyph actually landed in one rendered image.
struct GlyphBox {
  int part = 0;
  Index row = 0, col = 0, size = 0;

  bool overlaps(Index r0, Index c0, Index r1, Index c1) const {  // half-open box
    return row < r1 && r0 < row + size && col < c1 && c0 < col + size;
  }
};

struct SynthSpec {
  Index part_pool = 10;
  Index parts_per_class = 4;
  Index train_classes = 8;
  Index val_classes = 0;
  Index test_classes = 5;
  Index images_per_class = 20;
  Index height = 64, width = 64, channels = 3;
  Index glyph_size = 7;
  Index jitter = 2;
  double noise = 8.0;
  std::uint64_t seed = 0;
  /// When non-empty, one layout per class (train, then val, then test) used verbatim.
  std::vector<Layout> layouts;

  Index total_classes() const { return train_classes + val_classes + test_classes; }
  void validate() const;
};

struct SynthDataset {
  LabeledDataset data;
  std::vector<std::vector<std::uint8_t>> glyphs;  // part pool, glyph_size^2 binary masks
  std::vector<Layout> layouts;                    // per class
  std::vector<std::vector<GlyphBox>> boxes;       // per image
};

/// Renders a class-disjoint dataset whose classes are layouts over one shared part pool.
/// Held-out (val/test) layouts never coincide with a training layout.
SynthDataset generate_synthetic(const SynthSpec& spec);

}  // namespace corl
