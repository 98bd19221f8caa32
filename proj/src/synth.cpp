#include "corl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "corl/rng.hpp"

namespace corl {

namespace {

constexpr int kMaxLayoutAttempts = 500;
constexpr int kMaxPlacementTries = 200;

std::vector<std::vector<std::uint8_t>> make_glyphs(const SynthSpec& spec, Rng rng) {
  const auto cells = static_cast<std::size_t>(spec.glyph_size * spec.glyph_size);
  std::set<std::vector<std::uint8_t>> seen;
  std::vector<std::vector<std::uint8_t>> out;
  while (static_cast<Index>(out.size()) < spec.part_pool) {
    std::vector<std::uint8_t> g(cells);
    for (auto& v : g) v = rng.uniform() < 0.5 ? 1 : 0;
    const auto on = std::count(g.begin(), g.end(), 1);
    if (on < static_cast<long>(cells / 3) || !seen.insert(g).second) continue;
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<std::vector<std::uint8_t>> make_colors(const SynthSpec& spec, Rng rng) {
  std::vector<std::vector<std::uint8_t>> out;
  for (Index p = 0; p < spec.part_pool; ++p) {
    std::vector<std::uint8_t> c(static_cast<std::size_t>(spec.channels));
    for (auto& v : c) v = static_cast<std::uint8_t>(96 + rng.below(160));
    out.push_back(std::move(c));
  }
  return out;
}

// Nominal glyph boxes may touch but not overlap, so jitter can only produce partial overlap.
Layout make_layout(const SynthSpec& spec, Rng& rng) {
  const Index lo = spec.jitter;
  const Index hi_r = spec.height - spec.glyph_size - spec.jitter;
  const Index hi_c = spec.width - spec.glyph_size - spec.jitter;
  std::vector<int> parts(static_cast<std::size_t>(spec.part_pool));
  std::iota(parts.begin(), parts.end(), 0);
  for (int attempt = 0; attempt < kMaxLayoutAttempts; ++attempt) {
    rng.shuffle(std::span<int>(parts));
    Layout layout;
    for (Index k = 0; k < spec.parts_per_class; ++k) {
      bool placed = false;
      for (int t = 0; t < kMaxPlacementTries && !placed; ++t) {
        const Placement p{parts[static_cast<std::size_t>(k)], lo + rng.below(hi_r - lo + 1), lo + rng.below(hi_c - lo + 1)};
        const bool clear = std::none_of(layout.begin(), layout.end(), [&](const Placement& q) {
          return std::abs(p.row - q.row) < spec.glyph_size && std::abs(p.col - q.col) < spec.glyph_size;
        });
        if (clear) {
          layout.push_back(p);
          placed = true;
        }
      }
      if (!placed) break;
    }
    if (static_cast<Index>(layout.size()) == spec.parts_per_class) return layout;
  }
  throw InputError("cannot place " + std::to_string(spec.parts_per_class) + " parts of size " +
                   std::to_string(spec.glyph_size) + " on a " + std::to_string(spec.height) + "x" +
                   std::to_string(spec.width) + " canvas without overlap");
}

Layout canonical(Layout l) {
  std::sort(l.begin(), l.end());
  return l;
}

}  // namespace

void SynthSpec::validate() const {
  if (part_pool <= 0 || parts_per_class <= 0) throw InputError("part_pool and parts_per_class must be positive");
  if (parts_per_class > part_pool) throw InputError("parts_per_class exceeds part_pool");
  if (train_classes < 0 || val_classes < 0 || test_classes < 0 || total_classes() == 0) {
    throw InputError("class counts must be non-negative with at least one class");
  }
  if (images_per_class <= 0) throw InputError("images_per_class must be positive");
  if (channels <= 0) throw InputError("channels must be positive");
  if (glyph_size <= 0 || jitter < 0) throw InputError("glyph_size must be positive and jitter non-negative");
  if (height < glyph_size + 2 * jitter || width < glyph_size + 2 * jitter) {
    throw InputError("canvas too small for glyph_size + 2 * jitter");
  }
  if (noise < 0) throw InputError("noise must be non-negative");
  if (!layouts.empty()) {
    if (static_cast<Index>(layouts.size()) != total_classes()) throw InputError("need one layout per class");
    for (const auto& l : layouts) {
      for (const auto& p : l) {
        if (p.part < 0 || p.part >= part_pool) throw InputError("layout part id out of range");
        if (p.row < 0 || p.col < 0 || p.row + glyph_size > height || p.col + glyph_size > width) {
          throw InputError("layout places a glyph outside the canvas");
        }
      }
    }
  }
}

SynthDataset generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  const Rng root(spec.seed);
  SynthDataset out;
  out.glyphs = make_glyphs(spec, root.split(0));
  const auto colors = make_colors(spec, root.split(1));

  if (!spec.layouts.empty()) {
    out.layouts = spec.layouts;
  } else {
    Rng layout_rng = root.split(2);
    std::set<Layout> used;
    for (Index c = 0; c < spec.total_classes(); ++c) {
      Layout l;
      int guard = 0;
      do {
        l = make_layout(spec, layout_rng);
        if (++guard > kMaxLayoutAttempts) throw InputError("cannot find enough distinct layouts");
      } while (used.contains(canonical(l)));
      used.insert(canonical(l));
      out.layouts.push_back(std::move(l));
    }
  }

  LabeledDataset& d = out.data;
  d.height = spec.height;
  d.width = spec.width;
  d.channels = spec.channels;
  auto add_classes = [&](Index n, Split split, const char* prefix) {
    for (Index i = 0; i < n; ++i) {
      d.classes.push_back({std::string(prefix) + "_" + (i < 10 ? "0" : "") + std::to_string(i), split});
    }
  };
  add_classes(spec.train_classes, Split::kTrain, "train");
  add_classes(spec.val_classes, Split::kVal, "val");
  add_classes(spec.test_classes, Split::kTest, "test");

  const Index g = spec.glyph_size, ch = spec.channels;
  std::vector<double> canvas(static_cast<std::size_t>(d.image_bytes()));
  std::vector<std::uint8_t> pixels(canvas.size());
  const Rng render = root.split(3);
  for (Index c = 0; c < spec.total_classes(); ++c) {
    const Layout& layout = out.layouts[static_cast<std::size_t>(c)];
    for (Index i = 0; i < spec.images_per_class; ++i) {
      Rng rng = render.split(static_cast<std::uint64_t>(c * spec.images_per_class + i));
      std::fill(canvas.begin(), canvas.end(), 0.0);
      std::vector<GlyphBox> boxes;
      for (const Placement& p : layout) {
        const Index r0 = std::clamp<Index>(p.row + rng.below(2 * spec.jitter + 1) - spec.jitter, 0, spec.height - g);
        const Index c0 = std::clamp<Index>(p.col + rng.below(2 * spec.jitter + 1) - spec.jitter, 0, spec.width - g);
        const auto& mask = out.glyphs[static_cast<std::size_t>(p.part)];
        const auto& color = colors[static_cast<std::size_t>(p.part)];
        for (Index y = 0; y < g; ++y) {
          for (Index x = 0; x < g; ++x) {
            if (!mask[static_cast<std::size_t>(y * g + x)]) continue;
            for (Index k = 0; k < ch; ++k) {
              canvas[static_cast<std::size_t>(((r0 + y) * spec.width + c0 + x) * ch + k)] = color[static_cast<std::size_t>(k)];
            }
          }
        }
        boxes.push_back({p.part, r0, c0, g});
      }
      for (std::size_t k = 0; k < canvas.size(); ++k) {
        const double v = canvas[k] + (spec.noise > 0 ? spec.noise * rng.normal() : 0.0);
        pixels[k] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
      d.add_image(static_cast<int>(c), pixels);
      out.boxes.push_back(std::move(boxes));
    }
  }
  return out;
}

}  // namespace corl
