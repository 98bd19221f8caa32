#include "corl/dataset.hpp"

#include <limits>
#include <unordered_map>

#include "corl/io.hpp"

namespace corl {

namespace {

constexpr std::string_view kMagic = "CORLIMGS";
constexpr std::uint32_t kVersion = 1;

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw InputError("unknown split '" + name + "' (expected train, val or test)");
}

void LabeledDataset::add_image(int label, std::span<const std::uint8_t> image) {
  if (static_cast<Index>(image.size()) != image_bytes()) {
    throw DimensionError("image has " + std::to_string(image.size()) + " bytes, expected " + std::to_string(image_bytes()));
  }
  labels.push_back(label);
  pixels.insert(pixels.end(), image.begin(), image.end());
}

std::vector<int> LabeledDataset::classes_in(Split split) const {
  std::vector<int> out;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (classes[c].split == split) out.push_back(static_cast<int>(c));
  }
  return out;
}

std::vector<std::vector<Index>> LabeledDataset::images_by_class() const {
  std::vector<std::vector<Index>> out(classes.size());
  for (Index i = 0; i < size(); ++i) out[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])].push_back(i);
  return out;
}

std::vector<Index> LabeledDataset::images_in(Split split) const {
  std::vector<Index> out;
  for (Index i = 0; i < size(); ++i) {
    if (classes[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])].split == split) out.push_back(i);
  }
  return out;
}

void LabeledDataset::validate() const {
  if (height <= 0 || width <= 0 || channels <= 0) throw InputError("dataset image dimensions must be positive");
  if (static_cast<Index>(pixels.size()) != size() * image_bytes()) throw InputError("dataset pixel buffer size mismatch");
  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (!seen.emplace(classes[c].name, c).second) {
      throw InputError("class '" + classes[c].name + "' is listed in more than one split");
    }
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= classes.size()) throw InputError("label " + std::to_string(l) + " out of range");
  }
}

std::vector<std::uint8_t> encode_dataset(const LabeledDataset& data) {
  data.validate();
  if (data.classes.size() > std::numeric_limits<std::uint16_t>::max() + 1u) throw InputError("too many classes");
  io::ByteWriter w;
  w.text(kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(data.size()));
  w.u32(static_cast<std::uint32_t>(data.height));
  w.u32(static_cast<std::uint32_t>(data.width));
  w.u32(static_cast<std::uint32_t>(data.channels));
  w.u32(static_cast<std::uint32_t>(data.classes.size()));
  for (const auto& c : data.classes) {
    if (c.name.size() > std::numeric_limits<std::uint16_t>::max()) throw InputError("class name too long");
    w.u16(static_cast<std::uint16_t>(c.name.size()));
    w.text(c.name);
    w.u8(static_cast<std::uint8_t>(c.split));
  }
  for (Index i = 0; i < data.size(); ++i) {
    w.u16(static_cast<std::uint16_t>(data.labels[static_cast<std::size_t>(i)]));
    w.raw(data.image(i));
  }
  w.seal();
  return w.take();
}

LabeledDataset decode_dataset(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  r.expect_magic(kMagic);
  const std::size_t version_at = r.offset();
  if (r.u32() != kVersion) throw FormatError("unsupported dataset version", version_at);
  LabeledDataset d;
  const std::uint32_t count = r.u32();
  const std::size_t dims_at = r.offset();
  d.height = r.u32();
  d.width = r.u32();
  d.channels = r.u32();
  if (d.height == 0 || d.width == 0 || d.channels == 0) throw FormatError("zero image dimension", dims_at);
  const std::uint32_t class_count = r.u32();
  std::unordered_map<std::string, std::size_t> seen;
  for (std::uint32_t c = 0; c < class_count; ++c) {
    const std::size_t at = r.offset();
    ClassInfo info;
    info.name = r.text(r.u16());
    const std::size_t tag_at = r.offset();
    const std::uint8_t tag = r.u8();
    if (tag > 2) throw FormatError("invalid split tag " + std::to_string(tag), tag_at);
    info.split = static_cast<Split>(tag);
    if (!seen.emplace(info.name, c).second) {
      throw FormatError("class '" + info.name + "' is listed in more than one split", at);
    }
    d.classes.push_back(std::move(info));
  }
  const auto image_bytes = static_cast<std::size_t>(d.image_bytes());
  if (r.remaining() < static_cast<std::size_t>(count) * (2 + image_bytes) + 8) {
    throw FormatError("truncated: " + std::to_string(count) + " images declared", r.offset());
  }
  d.labels.reserve(count);
  d.pixels.reserve(count * image_bytes);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    const std::uint16_t label = r.u16();
    if (label >= class_count) throw FormatError("label " + std::to_string(label) + " out of range", at);
    d.labels.push_back(label);
    const auto img = r.raw(image_bytes, "image");
    d.pixels.insert(d.pixels.end(), img.begin(), img.end());
  }
  r.verify_crc();
  return d;
}

void save_dataset(const std::filesystem::path& path, const LabeledDataset& data) {
  io::write_file(path, encode_dataset(data));
}

LabeledDataset load_dataset(const std::filesystem::path& path) { return decode_dataset(io::read_file(path)); }

}  // namespace corl
