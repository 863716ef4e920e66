#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "advloop/core/error.hpp"
#include "advloop/perception/detector.hpp"
#include "advloop/perception/loss.hpp"
#include "advloop/render/labels.hpp"

namespace advloop {

struct Detection {
  Box box;
  int class_id = 0;
  double confidence = 0.0;
  int cell = 0;  // source grid cell, used for deterministic tie-breaking
  LightState light = LightState::none;  // filled by the cloud's lamp probe for traffic lights

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct DecodeParams {
  double conf_threshold = 0.25;
  double nms_iou = 0.5;
};

/// Greedy NMS: highest confidence first (ties: lower cell index); a candidate
/// is dropped if it overlaps an already kept detection with IoU >= nms_iou.
inline std::vector<Detection> non_max_suppression(std::vector<Detection> cands, double nms_iou) {
  std::sort(cands.begin(), cands.end(), [](const Detection& a, const Detection& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.cell < b.cell;
  });
  std::vector<Detection> kept;
  for (const auto& c : cands) {
    const bool suppressed =
        std::any_of(kept.begin(), kept.end(), [&](const Detection& k) { return iou(k.box, c.box) >= nms_iou; });
    if (!suppressed) kept.push_back(c);
  }
  return kept;
}

inline std::vector<Detection> decode(const RawPrediction& raw, const DecodeParams& p = {}) {
  require(p.conf_threshold >= 0.0 && p.conf_threshold <= 1.0, "decode: conf_threshold must be in [0,1]");
  require(p.nms_iou >= 0.0 && p.nms_iou <= 1.0, "decode: nms_iou must be in [0,1]");
  const int n_cls = raw.per_cell - 5;
  std::vector<Detection> cands;
  for (int cell = 0; cell < raw.cells(); ++cell) {
    const double* a = raw.cell(cell);
    int best = 0;
    for (int k = 1; k < n_cls; ++k)
      if (a[5 + k] > a[5 + best]) best = k;
    double denom = 0.0;
    for (int k = 0; k < n_cls; ++k) denom += std::exp(a[5 + k] - a[5 + best]);
    const double conf = sigmoid(a[4]) / denom;
    if (!(conf >= p.conf_threshold)) continue;
    Box b = cell_box(a, cell, raw.grid);
    // Keep the box inside the image.
    const double x0 = std::max(0.0, b.x0()), x1 = std::min(1.0, b.x1());
    const double y0 = std::max(0.0, b.y0()), y1 = std::min(1.0, b.y1());
    b = {(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0};
    cands.push_back({b, best, conf, cell, LightState::none});
  }
  return non_max_suppression(std::move(cands), p.nms_iou);
}

}  // namespace advloop
