#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "advloop/core/error.hpp"
#include "advloop/core/rng.hpp"
#include "advloop/scene/scene.hpp"

namespace advloop {

/// Shapes of the grid detector. Both convolutions are 3x3, stride 2, padding 1.
struct DetectorConfig {
  int height = 64;
  int width = 64;
  int in_channels = 3;
  int conv1_channels = 8;
  int conv2_channels = 16;
  int grid = 4;
  int num_classes = kNumClasses;

  static constexpr int kernel = 3;
  static constexpr int box_outputs = 4;

  int conv1_h() const { return (height - 1) / 2 + 1; }
  int conv1_w() const { return (width - 1) / 2 + 1; }
  int conv2_h() const { return (conv1_h() - 1) / 2 + 1; }
  int conv2_w() const { return (conv1_w() - 1) / 2 + 1; }
  int cell_h() const { return conv2_h() / grid; }
  int cell_w() const { return conv2_w() / grid; }

  /// Per-cell head input: the cell's own conv2 block, flattened, followed by
  /// the mean conv2 feature of each cell in its 3x3 neighbourhood.
  int block_features() const { return cell_h() * cell_w() * conv2_channels; }
  int head_inputs() const { return block_features() + 9 * conv2_channels; }
  int head_outputs() const { return box_outputs + 1 + num_classes; }

  std::size_t conv1_weights() const { return std::size_t(kernel) * kernel * in_channels * conv1_channels; }
  std::size_t conv2_weights() const { return std::size_t(kernel) * kernel * conv1_channels * conv2_channels; }
  std::size_t head_weights() const { return std::size_t(head_inputs()) * head_outputs(); }
  std::size_t parameter_count() const {
    return conv1_weights() + conv1_channels + conv2_weights() + conv2_channels + head_weights() + head_outputs();
  }

  void validate() const {
    require(height > 0 && width > 0 && in_channels > 0 && conv1_channels > 0 && conv2_channels > 0,
            "detector: dimensions must be positive");
    require(grid > 0 && num_classes > 0, "detector: grid and classes must be positive");
    require(conv2_h() % grid == 0 && conv2_w() % grid == 0,
            "detector: conv2 feature map must divide evenly into the grid");
  }

  friend bool operator==(const DetectorConfig&, const DetectorConfig&) = default;
};

/// All detector weights in one contiguous vector.
///
/// Fixed order (also the checkpoint order):
///   conv1 weights [ky][kx][in][out], conv1 bias [out],
///   conv2 weights [ky][kx][in][out], conv2 bias [out],
///   head weights [input][output], head bias [output].
class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(const DetectorConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    values_.assign(cfg_.parameter_count(), 0.0);
  }

  const DetectorConfig& config() const { return cfg_; }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  std::span<const double> conv1_w() const { return slice(0, cfg_.conv1_weights()); }
  std::span<const double> conv1_b() const { return slice(off_conv1_b(), cfg_.conv1_channels); }
  std::span<const double> conv2_w() const { return slice(off_conv2_w(), cfg_.conv2_weights()); }
  std::span<const double> conv2_b() const { return slice(off_conv2_b(), cfg_.conv2_channels); }
  std::span<const double> head_w() const { return slice(off_head_w(), cfg_.head_weights()); }
  std::span<const double> head_b() const { return slice(off_head_b(), cfg_.head_outputs()); }

  std::size_t off_conv1_b() const { return cfg_.conv1_weights(); }
  std::size_t off_conv2_w() const { return off_conv1_b() + cfg_.conv1_channels; }
  std::size_t off_conv2_b() const { return off_conv2_w() + cfg_.conv2_weights(); }
  std::size_t off_head_w() const { return off_conv2_b() + cfg_.conv2_channels; }
  std::size_t off_head_b() const { return off_head_w() + cfg_.head_weights(); }

  bool all_finite() const {
    for (double v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;

 private:
  std::span<const double> slice(std::size_t off, std::size_t n) const {
    return std::span<const double>(values_).subspan(off, n);
  }

  DetectorConfig cfg_;
  std::vector<double> values_;
};

/// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) for every weight and bias of a layer.
inline ModelParams init_params(const DetectorConfig& cfg, std::uint64_t seed) {
  ModelParams p(cfg);
  Rng rng(seed);
  auto fill = [&](std::size_t off, std::size_t n, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < n; ++i) p.values()[off + i] = rng.uniform(-bound, bound);
  };
  const int k2 = DetectorConfig::kernel * DetectorConfig::kernel;
  fill(0, cfg.conv1_weights(), k2 * cfg.in_channels);
  fill(p.off_conv1_b(), cfg.conv1_channels, k2 * cfg.in_channels);
  fill(p.off_conv2_w(), cfg.conv2_weights(), k2 * cfg.conv1_channels);
  fill(p.off_conv2_b(), cfg.conv2_channels, k2 * cfg.conv1_channels);
  fill(p.off_head_w(), cfg.head_weights(), cfg.head_inputs());
  fill(p.off_head_b(), static_cast<std::size_t>(cfg.head_outputs()), cfg.head_inputs());
  return p;
}

}  // namespace advloop
