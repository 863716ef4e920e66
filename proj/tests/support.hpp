#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "advloop/core/image.hpp"
#include "advloop/core/rng.hpp"
#include "advloop/perception/gradients.hpp"
#include "advloop/perception/model.hpp"
#include "advloop/render/labels.hpp"

namespace advloop::testing {

inline ImageTensor random_image(std::uint64_t seed, int h = 64, int w = 64) {
  Rng rng(seed);
  ImageTensor img(h, w, 3);
  for (auto& v : img.values()) v = rng.uniform();
  return img;
}

inline LabelSet random_labels(std::uint64_t seed, int max_objects = 3) {
  Rng rng(seed);
  LabelSet l;
  const int n = static_cast<int>(rng.below(static_cast<std::uint64_t>(max_objects) + 1));
  for (int i = 0; i < n; ++i) {
    const double w = rng.uniform(0.05, 0.4), h = rng.uniform(0.05, 0.4);
    const double cx = rng.uniform(w / 2, 1 - w / 2), cy = rng.uniform(h / 2, 1 - h / 2);
    l.add({cx, cy, w, h}, static_cast<ObjectKind>(rng.below(kNumClasses)));
  }
  return l;
}

/// One central-difference probe. `smooth` is false when x - h and x + h sit
/// on different sides of a ReLU or a CIoU min/max, where the finite
/// difference does not estimate the derivative.
struct FdProbe {
  bool smooth = true;
  double analytic = 0.0;
  double numeric = 0.0;

  double rel_error(double floor = 1e-8) const {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
  }
};

namespace detail {

inline std::vector<signed char> branch_pattern(const ModelParams& theta, const ImageTensor& img, const LabelSet& labels,
                                               double& loss, const LossWeights& w) {
  ForwardCache cache;
  const RawPrediction raw = forward(theta, img, cache);
  loss = detection_loss(raw, labels, w).total;
  std::vector<signed char> sig;
  for (double v : cache.conv1_pre) sig.push_back(v > 0);
  for (double v : cache.conv2_pre) sig.push_back(v > 0);
  const auto owner = assign_targets(labels, raw.grid);
  for (int cell = 0; cell < raw.cells(); ++cell) {
    const int gt = owner[static_cast<std::size_t>(cell)];
    if (gt < 0) continue;
    const Box p = cell_box(raw.cell(cell), cell, raw.grid);
    const Box& g = labels.boxes[static_cast<std::size_t>(gt)];
    for (double d : {p.x0() - g.x0(), p.x1() - g.x1(), p.y0() - g.y0(), p.y1() - g.y1(),
                     std::min(p.x1(), g.x1()) - std::max(p.x0(), g.x0()),
                     std::min(p.y1(), g.y1()) - std::max(p.y0(), g.y0())})
      sig.push_back(d > 0);
  }
  return sig;
}

}  // namespace detail

inline FdProbe fd_input(const ModelParams& theta, const ImageTensor& img, const LabelSet& labels, const LossWeights& w,
                        const ImageTensor& grad, std::size_t i, double h = 1e-3) {
  ImageTensor a = img, b = img;
  a.values()[i] += h;
  b.values()[i] -= h;
  double la = 0, lb = 0;
  FdProbe r;
  r.smooth = detail::branch_pattern(theta, a, labels, la, w) == detail::branch_pattern(theta, b, labels, lb, w);
  r.analytic = grad.values()[i];
  r.numeric = (la - lb) / (2 * h);
  return r;
}

inline FdProbe fd_param(const ModelParams& theta, const ImageTensor& img, const LabelSet& labels, const LossWeights& w,
                        const std::vector<double>& grad, std::size_t i, double h = 1e-3) {
  ModelParams a = theta, b = theta;
  a.values()[i] += h;
  b.values()[i] -= h;
  double la = 0, lb = 0;
  FdProbe r;
  r.smooth = detail::branch_pattern(a, img, labels, la, w) == detail::branch_pattern(b, img, labels, lb, w);
  r.analytic = grad[i];
  r.numeric = (la - lb) / (2 * h);
  return r;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    Rng rng(static_cast<std::uint64_t>(reinterpret_cast<std::uintptr_t>(this)) ^
            static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count()));
    path_ = std::filesystem::temp_directory_path() / ("advloop_" + tag + "_" + std::to_string(rng.next_u64() % 1000000007));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace advloop::testing
