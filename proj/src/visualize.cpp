#include "corl/visualize.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "json.hpp"

#include "corl/io.hpp"

namespace corl {

std::pair<Index, Index> cell_footprint(Index i, Index cells, Index pixels) {
  // smallest y with floor(y * cells / pixels) >= i
  auto first = [&](Index k) { return (k * pixels + cells - 1) / cells; };
  return {first(i), first(i + 1)};
}

Tensor<float> activation_maps(const Checkpoint& ckpt, const LabeledDataset& data) {
  const FeatureMapSpec f = ckpt.model.feature_spec();
  const Index b = ckpt.model.dict_size;
  Tensor<float> out({data.size(), f.height, f.width, b});
  constexpr Index kChunk = 64;
  for (Index start = 0; start < data.size(); start += kChunk) {
    const Index count = std::min(kChunk, data.size() - start);
    std::vector<Index> idx(static_cast<std::size_t>(count));
    std::iota(idx.begin(), idx.end(), start);
    Tape<float> tape;
    BoundParameters<float> bound(tape, ckpt.params);
    const auto pass = forward(ckpt.model, bound, tape.constant(images_to_tensor<float>(data, idx)), false);
    out.array().segment(start * f.positions() * b, count * f.positions() * b) = pass.activations.value().array();
  }
  return out;
}

std::vector<Mosaic> build_mosaics(const Checkpoint& ckpt, const LabeledDataset& data, std::span<const Index> components,
                                  Index topk, double threshold_frac) {
  const Index b = ckpt.model.dict_size;
  for (Index c : components) {
    if (c < 0 || c >= b) throw InputError("component " + std::to_string(c) + " outside [0, " + std::to_string(b) + ")");
  }
  if (topk <= 0) throw InputError("topk must be positive");
  if (!(threshold_frac >= 0 && threshold_frac <= 1)) throw InputError("threshold_frac must lie in [0, 1]");
  const Tensor<float> a = activation_maps(ckpt, data);
  const Index n = a.dim(0), h = a.dim(1), w = a.dim(2);
  std::vector<Mosaic> out;
  for (Index comp : components) {
    Mosaic m;
    m.component = comp;
    std::vector<Patch> candidates;
    double global = -std::numeric_limits<double>::infinity();
    for (Index i = 0; i < n; ++i) {
      Patch p;
      p.image = i;
      p.score = -std::numeric_limits<double>::infinity();
      Index best_r = 0, best_c = 0;
      for (Index r = 0; r < h; ++r) {
        for (Index c = 0; c < w; ++c) {
          const double v = a[((i * h + r) * w + c) * b + comp];
          if (v > p.score) {  // first maximum in raster order wins ties
            p.score = v;
            best_r = r;
            best_c = c;
          }
        }
      }
      std::tie(p.row0, p.row1) = cell_footprint(best_r, h, data.height);
      std::tie(p.col0, p.col1) = cell_footprint(best_c, w, data.width);
      global = std::max(global, p.score);
      candidates.push_back(p);
    }
    m.threshold = threshold_frac * global;
    std::erase_if(candidates, [&](const Patch& p) { return p.score < m.threshold; });
    std::stable_sort(candidates.begin(), candidates.end(), [](const Patch& x, const Patch& y) { return x.score > y.score; });
    if (static_cast<Index>(candidates.size()) > topk) candidates.resize(static_cast<std::size_t>(topk));
    m.patches = std::move(candidates);
    out.push_back(std::move(m));
  }
  return out;
}

void write_ppm(const std::filesystem::path& path, Index height, Index width, Index channels,
               std::span<const std::uint8_t> pixels) {
  if (channels != 1 && channels != 3) throw InputError("PPM output needs 1 or 3 channels");
  const std::string header = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  for (Index p = 0; p < height * width; ++p) {
    for (Index k = 0; k < 3; ++k) bytes.push_back(pixels[static_cast<std::size_t>(p * channels + (channels == 3 ? k : 0))]);
  }
  io::write_file(path, bytes);
}

namespace {

std::vector<std::uint8_t> crop(const LabeledDataset& data, const Patch& p) {
  std::vector<std::uint8_t> out;
  const auto img = data.image(p.image);
  for (Index y = p.row0; y < p.row1; ++y) {
    for (Index x = p.col0; x < p.col1; ++x) {
      for (Index c = 0; c < data.channels; ++c) out.push_back(img[static_cast<std::size_t>((y * data.width + x) * data.channels + c)]);
    }
  }
  return out;
}

}  // namespace

void write_mosaics(const std::filesystem::path& dir, const LabeledDataset& data, std::span<const Mosaic> mosaics,
                   Index topk) {
  constexpr Index kScale = 4;  // mosaics are enlarged for viewing
  constexpr Index kGap = 2;
  nlohmann::json manifest;
  manifest["topk"] = topk;
  manifest["components"] = nlohmann::json::array();
  for (const Mosaic& m : mosaics) {
    const std::string stem = "comp_" + std::to_string(m.component);
    nlohmann::json entry{{"component", m.component}, {"threshold", m.threshold}, {"patches", nlohmann::json::array()}};
    Index tile_h = 0, tile_w = 0;
    for (const Patch& p : m.patches) {
      tile_h = std::max(tile_h, p.row1 - p.row0);
      tile_w = std::max(tile_w, p.col1 - p.col0);
    }
    const Index count = static_cast<Index>(m.patches.size());
    const Index mh = std::max<Index>(1, tile_h * kScale);
    const Index mw = std::max<Index>(1, count * (tile_w * kScale + kGap) - (count > 0 ? kGap : 0));
    std::vector<std::uint8_t> mosaic(static_cast<std::size_t>(mh * mw * 3), 255);
    for (Index k = 0; k < count; ++k) {
      const Patch& p = m.patches[static_cast<std::size_t>(k)];
      const auto pixels = crop(data, p);
      const Index ph = p.row1 - p.row0, pw = p.col1 - p.col0;
      const std::string file = stem + "/patch_" + std::to_string(k) + ".ppm";
      write_ppm(dir / file, ph, pw, data.channels, pixels);
      for (Index y = 0; y < ph * kScale; ++y) {
        for (Index x = 0; x < pw * kScale; ++x) {
          for (Index c = 0; c < 3; ++c) {
            const Index src = ((y / kScale) * pw + x / kScale) * data.channels + (data.channels == 3 ? c : 0);
            mosaic[static_cast<std::size_t>((y * mw + k * (tile_w * kScale + kGap) + x) * 3 + c)] = pixels[static_cast<std::size_t>(src)];
          }
        }
      }
      const int label = data.labels[static_cast<std::size_t>(p.image)];
      entry["patches"].push_back({{"rank", k},
                                  {"image", p.image},
                                  {"class", data.classes[static_cast<std::size_t>(label)].name},
                                  {"score", p.score},
                                  {"box", {p.row0, p.col0, p.row1, p.col1}},
                                  {"file", file}});
    }
    write_ppm(dir / (stem + "_mosaic.ppm"), mh, mw, 3, mosaic);
    entry["mosaic"] = stem + "_mosaic.ppm";
    manifest["components"].push_back(std::move(entry));
  }
  const std::string text = manifest.dump(2) + "\n";
  io::write_file(dir / "manifest.json", {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

}  // namespace corl
