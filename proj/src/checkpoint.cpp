#include <limits>

#include "corl/config.hpp"
#include "corl/io.hpp"

namespace corl {

namespace {

constexpr std::string_view kMagic = "CORLCKPT";
constexpr std::uint32_t kVersion = 1;

// Metadata rides along as ordinary f32 tensors so the file stays a plain tensor list.
const std::string kMetaConfig = "meta.config";  // config text, one byte per value
const std::string kMetaEpoch = "meta.epoch";
const std::string kMetaRng = "meta.rng";  // key and counter as 16-bit chunks, low first

Tensor<float> rng_tensor(const Rng& rng) {
  Tensor<float> t({8});
  for (int i = 0; i < 4; ++i) {
    t[i] = static_cast<float>((rng.key() >> (16 * i)) & 0xffff);
    t[4 + i] = static_cast<float>((rng.counter() >> (16 * i)) & 0xffff);
  }
  return t;
}

void write_tensor(io::ByteWriter& w, const std::string& name, const Tensor<float>& t) {
  if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw InputError("tensor name too long");
  if (t.rank() > 255) throw InputError("tensor rank too large");
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.text(name);
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (Index d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (Index i = 0; i < t.size(); ++i) w.f32(t[i]);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  RunConfig snapshot;
  snapshot.model = ckpt.model;
  snapshot.train = ckpt.train;
  const std::string text = format_config(snapshot);
  Tensor<float> config({static_cast<Index>(text.size())});
  for (std::size_t i = 0; i < text.size(); ++i) config[static_cast<Index>(i)] = static_cast<unsigned char>(text[i]);

  io::ByteWriter w;
  w.text(kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.params.size() + 3));
  for (const auto& [name, t] : ckpt.params) write_tensor(w, name, t);
  write_tensor(w, kMetaConfig, config);
  write_tensor(w, kMetaEpoch, Tensor<float>({1}, {static_cast<float>(ckpt.epoch)}));
  write_tensor(w, kMetaRng, rng_tensor(ckpt.rng));
  w.seal();
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  r.expect_magic(kMagic);
  const std::size_t version_at = r.offset();
  if (r.u32() != kVersion) throw FormatError("unsupported checkpoint version", version_at);
  const std::uint32_t count = r.u32();
  Checkpoint ckpt;
  std::optional<std::size_t> config_at;
  std::string config_text;
  bool have_epoch = false, have_rng = false;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::size_t at = r.offset();
    const std::string name = r.text(r.u16());
    const std::uint8_t rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) {
      d = r.u32();
      if (d == 0) throw FormatError("zero dimension in tensor " + name, r.offset() - 4);
    }
    const Index n = shape_size(shape);
    if (static_cast<std::size_t>(n) > r.remaining() / 4) throw FormatError("truncated tensor " + name, r.offset());
    Tensor<float> t(shape);
    for (Index i = 0; i < n; ++i) t[i] = r.f32();
    if (name == kMetaConfig) {
      config_at = at;
      for (Index i = 0; i < n; ++i) config_text.push_back(static_cast<char>(static_cast<unsigned char>(t[i])));
    } else if (name == kMetaEpoch) {
      ckpt.epoch = static_cast<Index>(t[0]);
      have_epoch = true;
    } else if (name == kMetaRng) {
      if (n != 8) throw FormatError("meta.rng must hold 8 values", at);
      std::uint64_t key = 0, counter = 0;
      for (int i = 0; i < 4; ++i) {
        key |= static_cast<std::uint64_t>(t[i]) << (16 * i);
        counter |= static_cast<std::uint64_t>(t[4 + i]) << (16 * i);
      }
      ckpt.rng = Rng::from_state(key, counter);
      have_rng = true;
    } else {
      if (ckpt.params.contains(name)) throw FormatError("duplicate tensor " + name, at);
      ckpt.params.add(name, std::move(t));
    }
  }
  r.verify_crc();
  if (!config_at || !have_epoch || !have_rng) throw FormatError("checkpoint lacks metadata tensors", bytes.size());
  try {
    const RunConfig cfg = parse_config(config_text);
    ckpt.model = cfg.model;
    ckpt.train = cfg.train;
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad config snapshot: ") + e.what(), *config_at);
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  io::write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path)); }

}  // namespace corl
