#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <vector>

#include "advloop/core/bytes.hpp"
#include "advloop/core/error.hpp"

namespace advloop {

/// H x W x C image, row-major, channel-last, values in [0, 1].
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(int height, int width, int channels = 3, double fill = 0.0)
      : height_(height), width_(width), channels_(channels) {
    require(height > 0 && width > 0 && channels > 0, "image dimensions must be positive");
    data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }

  double& at(int y, int x, int c) { return data_[index(y, x, c)]; }
  double at(int y, int x, int c) const { return data_[index(y, x, c)]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  bool same_shape(const ImageTensor& o) const {
    return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
  }

  void clamp01() {
    for (auto& v : data_) v = std::clamp(v, 0.0, 1.0);
  }

  bool in_unit_range() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; });
  }

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

inline double linf_distance(const ImageTensor& a, const ImageTensor& b) {
  require(a.same_shape(b), "linf_distance: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ADIM encoding: "ADIM", u16 height, u16 width, u8 channels, raw LE f32 pixels.
inline constexpr std::uint8_t kImageMagic[4] = {'A', 'D', 'I', 'M'};
inline constexpr std::size_t kImageHeaderBytes = 9;

inline Bytes encode_image(const ImageTensor& img) {
  require(img.height() <= 0xffff && img.width() <= 0xffff && img.channels() <= 0xff,
          "image too large for ADIM encoding");
  Bytes out;
  out.reserve(kImageHeaderBytes + img.size() * 4);
  ByteWriter w(out);
  for (std::uint8_t b : kImageMagic) w.u8(b);
  w.u16(static_cast<std::uint16_t>(img.height()));
  w.u16(static_cast<std::uint16_t>(img.width()));
  w.u8(static_cast<std::uint8_t>(img.channels()));
  for (double v : img.values()) w.f32(static_cast<float>(v));
  return out;
}

inline ImageTensor decode_image(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), kImageMagic)) fail(ErrorKind::io, "not an ADIM image");
  const int h = r.u16();
  const int w = r.u16();
  const int c = r.u8();
  if (h == 0 || w == 0 || c == 0) fail(ErrorKind::io, "ADIM image has a zero dimension");
  ImageTensor img(h, w, c);
  if (r.remaining() < img.size() * 4) fail(ErrorKind::io, "truncated ADIM pixel data");
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(r.f32());
  return img;
}

/// Rounds every pixel through f32, i.e. what survives an ADIM round trip.
inline ImageTensor quantize_f32(ImageTensor img) {
  for (auto& v : img.values()) v = static_cast<double>(static_cast<float>(v));
  return img;
}

inline Bytes read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorKind::missing_input, "cannot open " + p.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& p, std::span<const std::uint8_t> bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + p.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "write failed for " + p.string());
}

}  // namespace advloop
