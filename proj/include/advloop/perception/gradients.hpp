#pragma once

#include <span>
#include <vector>

#include "advloop/core/image.hpp"
#include "advloop/perception/detector.hpp"
#include "advloop/perception/loss.hpp"
#include "advloop/render/dataset.hpp"

namespace advloop {

/// J(theta, x, y): the total detection loss of one frame.
inline LossBreakdown frame_loss(const ModelParams& theta, const ImageTensor& image, const LabelSet& labels,
                                const LossWeights& weights) {
  return detection_loss(forward(theta, image), labels, weights);
}

struct InputGradient {
  LossBreakdown loss;
  ImageTensor grad;  // same shape as the image
};

/// Exact dJ/dx for every pixel.
inline InputGradient input_gradient(const ModelParams& theta, const ImageTensor& image, const LabelSet& labels,
                                    const LossWeights& weights) {
  ForwardCache cache;
  const RawPrediction raw = forward(theta, image, cache);
  std::vector<double> g_raw(raw.values.size());
  InputGradient out;
  out.loss = detection_loss(raw, labels, weights, g_raw);
  out.grad = ImageTensor(image.height(), image.width(), image.channels());
  backward(theta, image, cache, g_raw, {}, out.grad.values());
  return out;
}

struct ParamGradient {
  double mean_loss = 0.0;
  std::vector<double> grad;  // same layout as ModelParams::values()
};

/// Mean loss and its parameter gradient over a batch of samples.
inline ParamGradient param_gradient(const ModelParams& theta, std::span<const Sample* const> batch,
                                    const LossWeights& weights) {
  require(!batch.empty(), "param_gradient: empty batch");
  ParamGradient out;
  out.grad.assign(theta.size(), 0.0);
  ForwardCache cache;
  std::vector<double> g_raw;
  for (const Sample* s : batch) {
    const RawPrediction raw = forward(theta, s->image, cache);
    g_raw.assign(raw.values.size(), 0.0);
    out.mean_loss += detection_loss(raw, s->labels, weights, g_raw).total;
    backward(theta, s->image, cache, g_raw, out.grad, {});
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.mean_loss *= inv;
  for (double& g : out.grad) g *= inv;
  return out;
}

inline ParamGradient param_gradient(const ModelParams& theta, const Dataset& batch, const LossWeights& weights) {
  std::vector<const Sample*> ptrs;
  for (const auto& s : batch) ptrs.push_back(&s);
  return param_gradient(theta, ptrs, weights);
}

}  // namespace advloop
