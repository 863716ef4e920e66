#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "advloop/core/error.hpp"
#include "advloop/core/image.hpp"
#include "advloop/perception/model.hpp"

namespace advloop {

/// Pre-decode head output: grid x grid cells, each with
/// [box activations (4), objectness logit, class logits (num_classes)].
struct RawPrediction {
  int grid = 0;
  int per_cell = 0;
  std::vector<double> values;

  double* cell(int index) { return values.data() + static_cast<std::size_t>(index) * per_cell; }
  const double* cell(int index) const { return values.data() + static_cast<std::size_t>(index) * per_cell; }
  int cells() const { return grid * grid; }

  friend bool operator==(const RawPrediction&, const RawPrediction&) = default;
};

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Intermediate activations kept for the reverse pass.
/// Pixels are shifted by this before conv1 so that inputs are zero-centred.
inline constexpr double kInputOffset = 0.5;

struct ForwardCache {
  std::vector<double> input;      // image - kInputOffset
  std::vector<double> conv1_pre;  // H1 x W1 x C1
  std::vector<double> conv1_out;
  std::vector<double> conv2_pre;  // H2 x W2 x C2
  std::vector<double> conv2_out;
  std::vector<double> head_in;    // cells x head_inputs
};

namespace detail {

struct ConvShape {
  int in_h, in_w, in_c, out_h, out_w, out_c;
};

// 3x3, stride 2, padding 1, HWC layout, weights [ky][kx][in][out].
inline void conv_forward(std::span<const double> in, std::span<const double> w, std::span<const double> b,
                         const ConvShape& s, std::vector<double>& out) {
  out.assign(static_cast<std::size_t>(s.out_h) * s.out_w * s.out_c, 0.0);
  for (int oy = 0; oy < s.out_h; ++oy)
    for (int ox = 0; ox < s.out_w; ++ox) {
      double* o = out.data() + (static_cast<std::size_t>(oy) * s.out_w + ox) * s.out_c;
      for (int c = 0; c < s.out_c; ++c) o[c] = b[static_cast<std::size_t>(c)];
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = oy * 2 - 1 + ky;
        if (iy < 0 || iy >= s.in_h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int ix = ox * 2 - 1 + kx;
          if (ix < 0 || ix >= s.in_w) continue;
          const double* src = in.data() + (static_cast<std::size_t>(iy) * s.in_w + ix) * s.in_c;
          const double* wk = w.data() + static_cast<std::size_t>(ky * 3 + kx) * s.in_c * s.out_c;
          for (int ic = 0; ic < s.in_c; ++ic) {
            const double xv = src[ic];
            const double* wr = wk + static_cast<std::size_t>(ic) * s.out_c;
            for (int c = 0; c < s.out_c; ++c) o[c] += xv * wr[c];
          }
        }
      }
    }
}

// Accumulates weight/bias gradients and, when grad_in is non-empty, the input gradient.
inline void conv_backward(std::span<const double> in, std::span<const double> w, const ConvShape& s,
                          std::span<const double> grad_out, std::span<double> grad_w, std::span<double> grad_b,
                          std::span<double> grad_in) {
  const bool want_in = !grad_in.empty();
  const bool want_w = !grad_w.empty();
  for (int oy = 0; oy < s.out_h; ++oy)
    for (int ox = 0; ox < s.out_w; ++ox) {
      const double* g = grad_out.data() + (static_cast<std::size_t>(oy) * s.out_w + ox) * s.out_c;
      if (want_w)
        for (int c = 0; c < s.out_c; ++c) grad_b[static_cast<std::size_t>(c)] += g[c];
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = oy * 2 - 1 + ky;
        if (iy < 0 || iy >= s.in_h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int ix = ox * 2 - 1 + kx;
          if (ix < 0 || ix >= s.in_w) continue;
          const std::size_t src_off = (static_cast<std::size_t>(iy) * s.in_w + ix) * s.in_c;
          const std::size_t k_off = static_cast<std::size_t>(ky * 3 + kx) * s.in_c * s.out_c;
          for (int ic = 0; ic < s.in_c; ++ic) {
            const double* wr = w.data() + k_off + static_cast<std::size_t>(ic) * s.out_c;
            if (want_w) {
              const double xv = in[src_off + static_cast<std::size_t>(ic)];
              double* gw = grad_w.data() + k_off + static_cast<std::size_t>(ic) * s.out_c;
              for (int c = 0; c < s.out_c; ++c) gw[c] += xv * g[c];
            }
            if (want_in) {
              double acc = 0.0;
              for (int c = 0; c < s.out_c; ++c) acc += wr[c] * g[c];
              grad_in[src_off + static_cast<std::size_t>(ic)] += acc;
            }
          }
        }
      }
    }
}

inline void relu(const std::vector<double>& pre, std::vector<double>& out) {
  out.resize(pre.size());
  for (std::size_t i = 0; i < pre.size(); ++i) out[i] = pre[i] > 0.0 ? pre[i] : 0.0;
}

inline ConvShape conv1_shape(const DetectorConfig& c) {
  return {c.height, c.width, c.in_channels, c.conv1_h(), c.conv1_w(), c.conv1_channels};
}
inline ConvShape conv2_shape(const DetectorConfig& c) {
  return {c.conv1_h(), c.conv1_w(), c.conv1_channels, c.conv2_h(), c.conv2_w(), c.conv2_channels};
}

// Builds per-cell head inputs from the conv2 map.
inline void gather_head_inputs(const DetectorConfig& c, const std::vector<double>& fmap, std::vector<double>& head_in) {
  const int S = c.grid, ch = c.cell_h(), cw = c.cell_w(), C = c.conv2_channels, W2 = c.conv2_w();
  const int F = c.head_inputs(), B = c.block_features();
  std::vector<double> cell_mean(static_cast<std::size_t>(S) * S * C, 0.0);
  head_in.assign(static_cast<std::size_t>(S) * S * F, 0.0);
  const double inv = 1.0 / (ch * cw);
  for (int gy = 0; gy < S; ++gy)
    for (int gx = 0; gx < S; ++gx) {
      double* dst = head_in.data() + static_cast<std::size_t>(gy * S + gx) * F;
      double* mean = cell_mean.data() + static_cast<std::size_t>(gy * S + gx) * C;
      int k = 0;
      for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x) {
          const double* src = fmap.data() + (static_cast<std::size_t>(gy * ch + y) * W2 + gx * cw + x) * C;
          for (int cc = 0; cc < C; ++cc) {
            dst[k++] = src[cc];
            mean[cc] += src[cc] * inv;
          }
        }
    }
  for (int gy = 0; gy < S; ++gy)
    for (int gx = 0; gx < S; ++gx) {
      double* dst = head_in.data() + static_cast<std::size_t>(gy * S + gx) * F + B;
      for (int ny = -1; ny <= 1; ++ny)
        for (int nx = -1; nx <= 1; ++nx, dst += C) {
          const int yy = gy + ny, xx = gx + nx;
          if (yy < 0 || yy >= S || xx < 0 || xx >= S) continue;
          const double* m = cell_mean.data() + static_cast<std::size_t>(yy * S + xx) * C;
          std::copy(m, m + C, dst);
        }
    }
}

// Reverse of gather_head_inputs: scatters head-input gradients onto the conv2 map.
inline void scatter_head_grad(const DetectorConfig& c, const std::vector<double>& g_head_in, std::vector<double>& g_fmap) {
  const int S = c.grid, ch = c.cell_h(), cw = c.cell_w(), C = c.conv2_channels, W2 = c.conv2_w();
  const int F = c.head_inputs(), B = c.block_features();
  g_fmap.assign(static_cast<std::size_t>(c.conv2_h()) * W2 * C, 0.0);
  std::vector<double> g_mean(static_cast<std::size_t>(S) * S * C, 0.0);
  for (int gy = 0; gy < S; ++gy)
    for (int gx = 0; gx < S; ++gx) {
      const double* src = g_head_in.data() + static_cast<std::size_t>(gy * S + gx) * F + B;
      for (int ny = -1; ny <= 1; ++ny)
        for (int nx = -1; nx <= 1; ++nx, src += C) {
          const int yy = gy + ny, xx = gx + nx;
          if (yy < 0 || yy >= S || xx < 0 || xx >= S) continue;
          double* m = g_mean.data() + static_cast<std::size_t>(yy * S + xx) * C;
          for (int cc = 0; cc < C; ++cc) m[cc] += src[cc];
        }
    }
  const double inv = 1.0 / (ch * cw);
  for (int gy = 0; gy < S; ++gy)
    for (int gx = 0; gx < S; ++gx) {
      const double* src = g_head_in.data() + static_cast<std::size_t>(gy * S + gx) * F;
      const double* m = g_mean.data() + static_cast<std::size_t>(gy * S + gx) * C;
      int k = 0;
      for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x) {
          double* dst = g_fmap.data() + (static_cast<std::size_t>(gy * ch + y) * W2 + gx * cw + x) * C;
          for (int cc = 0; cc < C; ++cc) dst[cc] += src[k++] + m[cc] * inv;
        }
    }
}

}  // namespace detail

inline void check_input(const ModelParams& theta, const ImageTensor& image) {
  const auto& c = theta.config();
  if (image.height() != c.height || image.width() != c.width || image.channels() != c.in_channels)
    fail(ErrorKind::invalid_argument, "detector: image shape does not match the model configuration");
  if (theta.size() != c.parameter_count()) fail(ErrorKind::invalid_argument, "detector: parameter vector has wrong size");
}

inline RawPrediction forward(const ModelParams& theta, const ImageTensor& image, ForwardCache& cache) {
  check_input(theta, image);
  const auto& c = theta.config();
  cache.input.resize(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) cache.input[i] = image[i] - kInputOffset;
  detail::conv_forward(cache.input, theta.conv1_w(), theta.conv1_b(), detail::conv1_shape(c), cache.conv1_pre);
  detail::relu(cache.conv1_pre, cache.conv1_out);
  detail::conv_forward(cache.conv1_out, theta.conv2_w(), theta.conv2_b(), detail::conv2_shape(c), cache.conv2_pre);
  detail::relu(cache.conv2_pre, cache.conv2_out);
  detail::gather_head_inputs(c, cache.conv2_out, cache.head_in);

  RawPrediction raw{c.grid, c.head_outputs(), {}};
  raw.values.assign(static_cast<std::size_t>(raw.cells()) * raw.per_cell, 0.0);
  const int F = c.head_inputs(), O = c.head_outputs();
  const auto hw = theta.head_w();
  const auto hb = theta.head_b();
  for (int cell = 0; cell < raw.cells(); ++cell) {
    const double* in = cache.head_in.data() + static_cast<std::size_t>(cell) * F;
    double* out = raw.cell(cell);
    for (int o = 0; o < O; ++o) out[o] = hb[static_cast<std::size_t>(o)];
    for (int i = 0; i < F; ++i) {
      const double xv = in[i];
      if (xv == 0.0) continue;
      const double* wr = hw.data() + static_cast<std::size_t>(i) * O;
      for (int o = 0; o < O; ++o) out[o] += xv * wr[o];
    }
  }
  return raw;
}

inline RawPrediction forward(const ModelParams& theta, const ImageTensor& image) {
  ForwardCache cache;
  return forward(theta, image, cache);
}

/// Reverse pass from dL/d(raw) through the network. Either output may be
/// skipped by passing an empty span. Parameter gradients are accumulated.
inline void backward(const ModelParams& theta, const ImageTensor& image, const ForwardCache& cache,
                     std::span<const double> grad_raw, std::span<double> grad_params, std::span<double> grad_image) {
  const auto& c = theta.config();
  const int F = c.head_inputs(), O = c.head_outputs(), cells = c.grid * c.grid;
  const bool want_params = !grad_params.empty();
  std::span<double> g_head_w, g_head_b, g_c2w, g_c2b, g_c1w, g_c1b;
  if (want_params) {
    require(grad_params.size() == theta.size(), "backward: gradient buffer has wrong size");
    g_c1w = grad_params.subspan(0, c.conv1_weights());
    g_c1b = grad_params.subspan(theta.off_conv1_b(), static_cast<std::size_t>(c.conv1_channels));
    g_c2w = grad_params.subspan(theta.off_conv2_w(), c.conv2_weights());
    g_c2b = grad_params.subspan(theta.off_conv2_b(), static_cast<std::size_t>(c.conv2_channels));
    g_head_w = grad_params.subspan(theta.off_head_w(), c.head_weights());
    g_head_b = grad_params.subspan(theta.off_head_b(), static_cast<std::size_t>(O));
  }

  const auto hw = theta.head_w();
  std::vector<double> g_head_in(static_cast<std::size_t>(cells) * F, 0.0);
  for (int cell = 0; cell < cells; ++cell) {
    const double* g = grad_raw.data() + static_cast<std::size_t>(cell) * O;
    const double* in = cache.head_in.data() + static_cast<std::size_t>(cell) * F;
    double* gi = g_head_in.data() + static_cast<std::size_t>(cell) * F;
    bool any = false;
    for (int o = 0; o < O; ++o) any = any || g[o] != 0.0;
    if (!any) continue;
    if (want_params)
      for (int o = 0; o < O; ++o) g_head_b[static_cast<std::size_t>(o)] += g[o];
    for (int i = 0; i < F; ++i) {
      const double* wr = hw.data() + static_cast<std::size_t>(i) * O;
      double acc = 0.0;
      for (int o = 0; o < O; ++o) acc += wr[o] * g[o];
      gi[i] = acc;
      if (want_params && in[i] != 0.0) {
        double* gw = g_head_w.data() + static_cast<std::size_t>(i) * O;
        for (int o = 0; o < O; ++o) gw[o] += in[i] * g[o];
      }
    }
  }

  std::vector<double> g2;
  detail::scatter_head_grad(c, g_head_in, g2);
  // ReLU'(0) = 0.
  for (std::size_t i = 0; i < g2.size(); ++i)
    if (!(cache.conv2_pre[i] > 0.0)) g2[i] = 0.0;

  std::vector<double> g1(cache.conv1_out.size(), 0.0);
  detail::conv_backward(cache.conv1_out, theta.conv2_w(), detail::conv2_shape(c), g2, g_c2w, g_c2b, g1);
  for (std::size_t i = 0; i < g1.size(); ++i)
    if (!(cache.conv1_pre[i] > 0.0)) g1[i] = 0.0;

  if (!grad_image.empty()) require(grad_image.size() == image.size(), "backward: image gradient buffer has wrong size");
  if (want_params || !grad_image.empty())
    detail::conv_backward(cache.input, theta.conv1_w(), detail::conv1_shape(c), g1, g_c1w, g_c1b, grad_image);
}

}  // namespace advloop
