#pragma once

#include <filesystem>

#include "advloop/core/bytes.hpp"
#include "advloop/core/error.hpp"
#include "advloop/core/image.hpp"
#include "advloop/perception/model.hpp"

namespace advloop {

/// Checkpoint file: "ADNN", u8 version = 1, u8 flags (bit 0 = trained),
/// u16 height, u16 width, u8 in_channels, u8 conv1, u8 conv2, u8 grid,
/// u8 classes, u32 parameter count, then little-endian f64 parameters.
struct Checkpoint {
  ModelParams params;
  bool trained = false;
};

inline Bytes encode_checkpoint(const Checkpoint& c) {
  const auto& cfg = c.params.config();
  Bytes out;
  ByteWriter w(out);
  w.raw(std::string("ADNN"));
  w.u8(1);
  w.u8(c.trained ? 1 : 0);
  w.u16(static_cast<std::uint16_t>(cfg.height));
  w.u16(static_cast<std::uint16_t>(cfg.width));
  w.u8(static_cast<std::uint8_t>(cfg.in_channels));
  w.u8(static_cast<std::uint8_t>(cfg.conv1_channels));
  w.u8(static_cast<std::uint8_t>(cfg.conv2_channels));
  w.u8(static_cast<std::uint8_t>(cfg.grid));
  w.u8(static_cast<std::uint8_t>(cfg.num_classes));
  w.u32(static_cast<std::uint32_t>(c.params.size()));
  for (double v : c.params.values()) w.f64(v);
  return out;
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto magic = r.take(4);
  if (!(magic[0] == 'A' && magic[1] == 'D' && magic[2] == 'N' && magic[3] == 'N'))
    fail(ErrorKind::io, "not a detector checkpoint (bad magic)");
  if (r.u8() != 1) fail(ErrorKind::io, "unsupported checkpoint version");
  Checkpoint c;
  c.trained = (r.u8() & 1) != 0;
  DetectorConfig cfg;
  cfg.height = r.u16();
  cfg.width = r.u16();
  cfg.in_channels = r.u8();
  cfg.conv1_channels = r.u8();
  cfg.conv2_channels = r.u8();
  cfg.grid = r.u8();
  cfg.num_classes = r.u8();
  try {
    cfg.validate();
  } catch (const Error& e) {
    fail(ErrorKind::io, std::string("checkpoint: ") + e.what());
  }
  const std::size_t n = r.u32();
  if (n != cfg.parameter_count()) fail(ErrorKind::io, "checkpoint: parameter count does not match its shape");
  c.params = ModelParams(cfg);
  for (auto& v : c.params.values()) v = r.f64();
  if (r.remaining() != 0) fail(ErrorKind::io, "checkpoint: trailing bytes");
  if (!c.params.all_finite()) fail(ErrorKind::io, "checkpoint: non-finite parameters");
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::missing_input, "checkpoint '" + path.string() + "' not found");
  return decode_checkpoint(read_file(path));
}

/// Loads a checkpoint and insists it was produced by training.
inline ModelParams load_trained(const std::filesystem::path& path) {
  Checkpoint c = load_checkpoint(path);
  if (!c.trained) fail(ErrorKind::untrained_model, "checkpoint '" + path.string() + "' holds an untrained model");
  return std::move(c.params);
}

}  // namespace advloop
