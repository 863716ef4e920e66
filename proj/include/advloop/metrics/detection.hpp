#pragma once

#include <algorithm>
#include <array>
#include <numeric>
#include <utility>
#include <vector>

#include "advloop/perception/decode.hpp"
#include "advloop/render/labels.hpp"

namespace advloop {

struct MatchResult {
  int true_positives = 0;
  int false_positives = 0;
  int false_negatives = 0;
  std::vector<std::pair<int, int>> pairs;  // (prediction index, ground-truth index)
};

/// Greedy matching in descending confidence (stable on prediction index).
/// Each prediction takes the unmatched ground truth with the highest IoU
/// >= threshold, lowest index on ties; with `class_aware`, only same-class
/// ground truths are eligible.
inline MatchResult match_detections(const std::vector<Detection>& preds, const LabelSet& gts,
                                    double iou_threshold = 0.5, bool class_aware = true) {
  std::vector<int> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return preds[static_cast<std::size_t>(a)].confidence > preds[static_cast<std::size_t>(b)].confidence;
  });
  std::vector<bool> taken(gts.size(), false);
  MatchResult r;
  for (int pi : order) {
    const auto& p = preds[static_cast<std::size_t>(pi)];
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      if (class_aware && gts.classes[g] != p.class_id) continue;
      const double v = iou(p.box, gts.boxes[g]);
      if (v >= iou_threshold && v > best_iou) {
        best_iou = v;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      taken[static_cast<std::size_t>(best)] = true;
      r.pairs.emplace_back(pi, best);
    }
  }
  r.true_positives = static_cast<int>(r.pairs.size());
  r.false_positives = static_cast<int>(preds.size()) - r.true_positives;
  r.false_negatives = static_cast<int>(gts.size()) - r.true_positives;
  return r;
}

struct PrecisionRecall {
  double precision = 1.0;
  double recall = 1.0;
  long tp = 0, fp = 0, fn = 0;
};

/// P = TP/(TP+FP), R = TP/(TP+FN); an empty denominator yields 1.0.
inline PrecisionRecall precision_recall_from_counts(long tp, long fp, long fn) {
  PrecisionRecall pr;
  pr.tp = tp;
  pr.fp = fp;
  pr.fn = fn;
  pr.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 1.0;
  pr.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 1.0;
  return pr;
}

/// Rows = ground truth, columns = prediction; index kNumClasses is Background.
struct ConfusionMatrix {
  static constexpr int kSize = kNumClasses + 1;
  static constexpr int kBackground = kNumClasses;
  std::array<std::array<long, kSize>, kSize> counts{};

  long total() const {
    long t = 0;
    for (const auto& row : counts)
      for (long v : row) t += v;
    return t;
  }
  long diagonal() const {
    long t = 0;
    for (int i = 0; i < kNumClasses; ++i) t += counts[i][i];
    return t;
  }
  long background_column() const {
    long t = 0;
    for (int i = 0; i < kSize; ++i) t += counts[i][kBackground];
    return t;
  }
  long row_sum(int r) const {
    long t = 0;
    for (long v : counts[static_cast<std::size_t>(r)]) t += v;
    return t;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    for (int i = 0; i < kSize; ++i)
      for (int j = 0; j < kSize; ++j) counts[i][j] += o.counts[i][j];
    return *this;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

/// Class-agnostic matching at `iou_threshold`, then tallies (true, predicted)
/// pairs; unmatched ground truth goes to the Background column and unmatched
/// predictions to the Background row.
inline ConfusionMatrix confusion_for_frame(const std::vector<Detection>& preds, const LabelSet& gts,
                                           double iou_threshold = 0.5) {
  const auto m = match_detections(preds, gts, iou_threshold, /*class_aware=*/false);
  ConfusionMatrix cm;
  std::vector<bool> gt_used(gts.size(), false), pred_used(preds.size(), false);
  for (auto [pi, gi] : m.pairs) {
    cm.counts[static_cast<std::size_t>(gts.classes[static_cast<std::size_t>(gi)])]
             [static_cast<std::size_t>(preds[static_cast<std::size_t>(pi)].class_id)]++;
    gt_used[static_cast<std::size_t>(gi)] = true;
    pred_used[static_cast<std::size_t>(pi)] = true;
  }
  for (std::size_t g = 0; g < gts.size(); ++g)
    if (!gt_used[g]) cm.counts[static_cast<std::size_t>(gts.classes[g])][ConfusionMatrix::kBackground]++;
  for (std::size_t p = 0; p < preds.size(); ++p)
    if (!pred_used[p]) cm.counts[ConfusionMatrix::kBackground][static_cast<std::size_t>(preds[p].class_id)]++;
  return cm;
}

}  // namespace advloop
