#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advloop/control/command.hpp"
#include "advloop/core/bytes.hpp"
#include "advloop/core/error.hpp"
#include "advloop/core/image.hpp"
#include "advloop/render/labels.hpp"

namespace advloop {

enum class MessageType : std::uint8_t { frame = 1, command = 2, heartbeat = 3 };

/// Framed message: "ADVL", u8 version, u8 type, u32 seq, u64 timestamp_us,
/// u32 payload_len, payload. Little-endian throughout.
struct WireMessage {
  MessageType type = MessageType::heartbeat;
  std::uint32_t seq = 0;
  std::uint64_t timestamp_us = 0;
  Bytes payload;

  friend bool operator==(const WireMessage&, const WireMessage&) = default;
};

inline constexpr std::uint8_t kWireVersion = 1;
inline constexpr std::size_t kWireHeaderSize = 22;
inline constexpr std::uint8_t kWireMagic[4] = {'A', 'D', 'V', 'L'};

enum class ProtocolFault { not_a_protocol_message, incomplete_frame, unsupported_version };

inline const char* fault_name(ProtocolFault f) {
  switch (f) {
    case ProtocolFault::not_a_protocol_message: return "not-a-protocol-message";
    case ProtocolFault::incomplete_frame: return "incomplete frame";
    case ProtocolFault::unsupported_version: return "unsupported version";
  }
  return "?";
}

class ProtocolError : public Error {
 public:
  explicit ProtocolError(ProtocolFault f) : Error(ErrorKind::network, fault_name(f)), fault_(f) {}
  ProtocolFault fault() const noexcept { return fault_; }

 private:
  ProtocolFault fault_;
};

inline Bytes encode(const WireMessage& m) {
  if (m.payload.size() > UINT32_MAX) fail(ErrorKind::invalid_argument, "encode: payload too large");
  Bytes out;
  ByteWriter w(out);
  w.raw(std::span<const std::uint8_t>(kWireMagic, 4));
  w.u8(kWireVersion);
  w.u8(static_cast<std::uint8_t>(m.type));
  w.u32(m.seq);
  w.u64(m.timestamp_us);
  w.u32(static_cast<std::uint32_t>(m.payload.size()));
  w.raw(m.payload);
  return out;
}

namespace detail {

/// Validates the fixed header and returns the total frame length.
inline std::size_t check_header(std::span<const std::uint8_t> in) {
  for (std::size_t i = 0; i < 4 && i < in.size(); ++i)
    if (in[i] != kWireMagic[i]) throw ProtocolError(ProtocolFault::not_a_protocol_message);
  if (in.size() < kWireHeaderSize) throw ProtocolError(ProtocolFault::incomplete_frame);
  if (in[4] != kWireVersion) throw ProtocolError(ProtocolFault::unsupported_version);
  if (in[5] < 1 || in[5] > 3) throw ProtocolError(ProtocolFault::not_a_protocol_message);
  ByteReader r(in.subspan(18, 4));
  return kWireHeaderSize + r.u32();
}

}  // namespace detail

/// Decodes exactly one message that fills `in`.
inline WireMessage decode(std::span<const std::uint8_t> in) {
  const std::size_t total = detail::check_header(in);
  if (in.size() < total) throw ProtocolError(ProtocolFault::incomplete_frame);
  if (in.size() > total) fail(ErrorKind::network, "decode: trailing bytes after message");
  ByteReader r(in.subspan(5));
  WireMessage m;
  m.type = static_cast<MessageType>(r.u8());
  m.seq = r.u32();
  m.timestamp_us = r.u64();
  const auto len = r.u32();
  const auto body = r.take(len);
  m.payload.assign(body.begin(), body.end());
  return m;
}

/// Stream helper: decodes the first message in `buf` if it is complete and
/// reports its length; nothing when more bytes are needed.
inline std::optional<WireMessage> try_decode_prefix(std::span<const std::uint8_t> buf, std::size_t& consumed) {
  consumed = 0;
  std::size_t total = 0;
  try {
    total = detail::check_header(buf);
  } catch (const ProtocolError& e) {
    if (e.fault() == ProtocolFault::incomplete_frame) return std::nullopt;
    throw;
  }
  if (buf.size() < total) return std::nullopt;
  consumed = total;
  return decode(buf.first(total));
}

/// Command payload: f64 v, f64 omega.
inline Bytes encode_command_payload(const ControlCommand& c) {
  Bytes out;
  ByteWriter w(out);
  w.f64(c.v);
  w.f64(c.omega);
  return out;
}

inline ControlCommand decode_command_payload(std::span<const std::uint8_t> p, std::uint32_t seq) {
  if (p.size() != 16) fail(ErrorKind::network, "command payload must be 16 bytes");
  ByteReader r(p);
  ControlCommand c;
  c.v = r.f64();
  c.omega = r.f64();
  c.seq = seq;
  return c;
}

/// Frame payload: an ADIM image, optionally followed by an "ALBL" section
/// carrying ground-truth labels for the white-box attacker (u32 count, then
/// u8 class and four f64 box fields per object).
inline Bytes encode_frame_payload(const ImageTensor& image, const LabelSet* labels = nullptr) {
  Bytes out = encode_image(image);
  if (labels) {
    ByteWriter w(out);
    w.raw(std::string("ALBL"));
    w.u32(static_cast<std::uint32_t>(labels->size()));
    for (std::size_t i = 0; i < labels->size(); ++i) {
      w.u8(static_cast<std::uint8_t>(labels->classes[i]));
      const Box& b = labels->boxes[i];
      w.f64(b.cx);
      w.f64(b.cy);
      w.f64(b.w);
      w.f64(b.h);
    }
  }
  return out;
}

struct FramePayload {
  ImageTensor image;
  std::optional<LabelSet> labels;
};

inline FramePayload decode_frame_payload(std::span<const std::uint8_t> p) {
  ByteReader r(p);
  const auto head = r.take(9);
  ByteReader hr(head.subspan(4));
  const std::size_t h = hr.u16(), w = hr.u16(), c = hr.u8();
  const std::size_t image_len = 9 + 4 * h * w * c;
  if (p.size() < image_len) fail(ErrorKind::network, "frame payload: truncated image");
  FramePayload out{decode_image(p.first(image_len)), std::nullopt};
  if (p.size() == image_len) return out;
  ByteReader lr(p.subspan(image_len));
  const auto tag = lr.take(4);
  if (!(tag[0] == 'A' && tag[1] == 'L' && tag[2] == 'B' && tag[3] == 'L'))
    fail(ErrorKind::network, "frame payload: unknown trailing section");
  LabelSet labels;
  const auto n = lr.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    const int cls = lr.u8();
    Box b;
    b.cx = lr.f64();
    b.cy = lr.f64();
    b.w = lr.f64();
    b.h = lr.f64();
    labels.boxes.push_back(b);
    labels.classes.push_back(cls);
  }
  if (lr.remaining() != 0) fail(ErrorKind::network, "frame payload: trailing bytes");
  out.labels = std::move(labels);
  return out;
}

}  // namespace advloop
