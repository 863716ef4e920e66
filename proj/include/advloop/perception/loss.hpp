#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "advloop/core/error.hpp"
#include "advloop/perception/ciou.hpp"
#include "advloop/perception/detector.hpp"
#include "advloop/render/labels.hpp"

namespace advloop {

struct LossWeights {
  double lambda_box = 7.5;
  double lambda_cls = 0.5;
  double lambda_dfl = 0.0;

  void validate() const {
    require(lambda_box >= 0 && lambda_cls >= 0 && lambda_dfl >= 0, "loss weights must be non-negative");
  }
};

struct LossBreakdown {
  double l_ciou = 0.0;
  double l_bce = 0.0;
  double l_dfl = 0.0;  // no distribution head; always zero
  double total = 0.0;
};

/// Box decoded from a cell's four activations: the centre lies inside the
/// cell, width and height are fractions of the image.
inline Box cell_box(const double* act, int cell, int grid) {
  const int gy = cell / grid, gx = cell % grid;
  return {(gx + sigmoid(act[0])) / grid, (gy + sigmoid(act[1])) / grid, sigmoid(act[2]), sigmoid(act[3])};
}

/// Cell holding the box centre under half-open [k/S, (k+1)/S) intervals.
inline int assigned_cell(const Box& b, int grid) {
  const int gx = std::clamp(static_cast<int>(std::floor(b.cx * grid)), 0, grid - 1);
  const int gy = std::clamp(static_cast<int>(std::floor(b.cy * grid)), 0, grid - 1);
  return gy * grid + gx;
}

/// Ground-truth index per cell (-1 = background). If several centres share a
/// cell, the largest box wins; equal areas go to the lower label index.
inline std::vector<int> assign_targets(const LabelSet& labels, int grid) {
  std::vector<int> owner(static_cast<std::size_t>(grid) * grid, -1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int cell = assigned_cell(labels.boxes[i], grid);
    int& o = owner[static_cast<std::size_t>(cell)];
    if (o < 0 || labels.boxes[i].area() > labels.boxes[static_cast<std::size_t>(o)].area()) o = static_cast<int>(i);
  }
  return owner;
}

/// Numerically stable binary cross-entropy on a logit.
inline double bce_logit(double z, double target) {
  return std::max(z, 0.0) - z * target + std::log1p(std::exp(-std::abs(z)));
}

/// Composite detection loss. Fills grad_raw with dTotal/dRaw when non-empty.
///
/// l_ciou = mean over assigned cells of (1 - CIoU);
/// l_bce  = mean objectness BCE over all cells
///        + mean over assigned cells of the summed one-hot class BCE.
inline LossBreakdown detection_loss(const RawPrediction& raw, const LabelSet& labels, const LossWeights& weights,
                                    std::span<double> grad_raw = {}) {
  labels.validate();
  weights.validate();
  const int S = raw.grid, P = raw.per_cell, cells = raw.cells();
  const int n_cls = P - 5;
  const bool want_grad = !grad_raw.empty();
  if (want_grad) {
    require(grad_raw.size() == raw.values.size(), "detection_loss: gradient buffer has wrong size");
    std::fill(grad_raw.begin(), grad_raw.end(), 0.0);
  }
  const auto owner = assign_targets(labels, S);
  const int n_assigned = static_cast<int>(std::count_if(owner.begin(), owner.end(), [](int o) { return o >= 0; }));

  LossBreakdown out;
  double obj_sum = 0.0, cls_sum = 0.0, ciou_sum = 0.0;
  for (int cell = 0; cell < cells; ++cell) {
    const double* a = raw.cell(cell);
    const int gt = owner[static_cast<std::size_t>(cell)];
    const double obj_t = gt >= 0 ? 1.0 : 0.0;
    obj_sum += bce_logit(a[4], obj_t);
    if (want_grad) grad_raw[static_cast<std::size_t>(cell * P + 4)] += weights.lambda_cls * (sigmoid(a[4]) - obj_t) / cells;
    if (gt < 0) continue;

    const int cls = labels.classes[static_cast<std::size_t>(gt)];
    for (int k = 0; k < n_cls; ++k) {
      const double t = k == cls ? 1.0 : 0.0;
      cls_sum += bce_logit(a[5 + k], t);
      if (want_grad)
        grad_raw[static_cast<std::size_t>(cell * P + 5 + k)] += weights.lambda_cls * (sigmoid(a[5 + k]) - t) / n_assigned;
    }

    const Box pred = cell_box(a, cell, S);
    if (!(pred.w > 0.0 && pred.h > 0.0 && std::isfinite(pred.cx) && std::isfinite(pred.cy)))
      fail(ErrorKind::numerical, "detection_loss: predicted box collapsed (saturated or non-finite activations)");
    const auto cg = ciou_with_grad(pred, labels.boxes[static_cast<std::size_t>(gt)]);
    ciou_sum += 1.0 - cg.value;
    if (want_grad) {
      // d(box)/d(activation): cx = (gx + s(a0))/S, cy likewise, w = s(a2), h = s(a3).
      const double s0 = sigmoid(a[0]), s1 = sigmoid(a[1]), s2 = sigmoid(a[2]), s3 = sigmoid(a[3]);
      const double dbox[4] = {s0 * (1 - s0) / S, s1 * (1 - s1) / S, s2 * (1 - s2), s3 * (1 - s3)};
      for (int j = 0; j < 4; ++j)
        grad_raw[static_cast<std::size_t>(cell * P + j)] += -weights.lambda_box * cg.grad[static_cast<std::size_t>(j)] * dbox[j] / n_assigned;
    }
  }
  out.l_ciou = n_assigned > 0 ? ciou_sum / n_assigned : 0.0;
  out.l_bce = obj_sum / cells + (n_assigned > 0 ? cls_sum / n_assigned : 0.0);
  out.l_dfl = 0.0;
  out.total = weights.lambda_box * out.l_ciou + weights.lambda_cls * out.l_bce + weights.lambda_dfl * out.l_dfl;
  return out;
}

}  // namespace advloop
