#include <cmath>
#include <functional>

#include <gtest/gtest.h>

#include "advloop/metrics/evaluation.hpp"
#include "advloop/render/dataset.hpp"
#include "support.hpp"

using namespace advloop;
using namespace advloop::testing;

namespace {

Detection det(Box b, ObjectKind k, double conf, int cell = 0) { return {b, static_cast<int>(k), conf, cell}; }

// Box of the same size as `gt`, shifted right so that IoU(gt, result) = iou.
Box shifted(const Box& gt, double iou) {
  const double d = gt.w * (1 - iou) / (1 + iou);
  return {gt.cx + d, gt.cy, gt.w, gt.h};
}

std::vector<Detection> random_preds(std::uint64_t seed, const LabelSet& gts) {
  Rng rng(seed);
  std::vector<Detection> out;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    if (rng.uniform() < 0.3) continue;
    Box b = gts.boxes[i];
    b.cx += rng.uniform(-0.05, 0.05);
    b.cy += rng.uniform(-0.05, 0.05);
    const int k = rng.uniform() < 0.8 ? gts.classes[i] : static_cast<int>(rng.below(kNumClasses));
    out.push_back({b, k, rng.uniform(), static_cast<int>(i)});
  }
  const auto extra = random_labels(seed + 1000, 2);
  for (std::size_t i = 0; i < extra.size(); ++i)
    out.push_back({extra.boxes[i], extra.classes[i], rng.uniform(), static_cast<int>(10 + i)});
  return out;
}

// Drives the centreline at `cruise` starting at `s0`, halting `dwell` seconds
// on reaching each stop line, until `distance` of arc has been covered.
EpisodeLog drive(const TrackSpec& t, double s0, double distance, double dwell, double cruise = 0.3) {
  EpisodeLog log;
  const double dt = 0.01;
  double s = s0, travelled = 0.0, hold = 0.0, time = 0.0;
  std::array<bool, 3> done{};
  while (travelled < distance) {
    double v = cruise;
    if (hold > 0) {
      v = 0.0;
      hold -= dt;
    }
    const Pose2 p = t.pose_at(s);
    log.ticks.push_back({time, {p.position.x, p.position.y, p.heading, time}, v, 0.0});
    const double next = s + v * dt;
    for (int k = 0; k < 3; ++k) {
      const double line = t.stop_arc_s()[static_cast<std::size_t>(k)];
      const double a = arc_offset(t, s, line), b = arc_offset(t, next, line);
      if (!done[static_cast<std::size_t>(k)] && a < 0 && b >= 0 && std::abs(a) < 0.1) {
        done[static_cast<std::size_t>(k)] = true;
        hold = dwell;
      }
    }
    s = next;
    travelled += v * dt;
    time += dt;
  }
  return log;
}

}  // namespace

TEST(Match, PerfectPredictionsAreAllTruePositives) {
  const auto gts = random_labels(11, 5);
  std::vector<Detection> preds;
  for (std::size_t i = 0; i < gts.size(); ++i)
    preds.push_back({gts.boxes[i], gts.classes[i], 0.9, static_cast<int>(i)});
  const auto m = match_detections(preds, gts);
  EXPECT_EQ(m.true_positives, static_cast<int>(gts.size()));
  EXPECT_EQ(m.false_positives, 0);
  EXPECT_EQ(m.false_negatives, 0);
}

TEST(Match, HighConfidenceMissDoesNotBlockLaterMatch) {
  LabelSet gts;
  const Box gt{0.5, 0.5, 0.2, 0.2};
  gts.add(gt, ObjectKind::vehicle);
  const std::vector<Detection> preds = {det(shifted(gt, 0.4), ObjectKind::vehicle, 0.95, 0),
                                        det(shifted(gt, 0.6), ObjectKind::vehicle, 0.9, 1)};
  EXPECT_NEAR(iou(preds[0].box, gt), 0.4, 1e-12);
  EXPECT_NEAR(iou(preds[1].box, gt), 0.6, 1e-12);
  const auto m = match_detections(preds, gts);
  EXPECT_EQ(m.true_positives, 1);
  EXPECT_EQ(m.false_positives, 1);
  ASSERT_EQ(m.pairs.size(), 1u);
  EXPECT_EQ(m.pairs[0].first, 1);
  const auto pr = precision_recall_from_counts(m.true_positives, m.false_positives, m.false_negatives);
  EXPECT_DOUBLE_EQ(pr.precision, 0.5);
  EXPECT_DOUBLE_EQ(pr.recall, 1.0);
}

TEST(Match, ClassMismatchIsFalsePositiveAndFalseNegative) {
  LabelSet gts;
  const Box gt{0.5, 0.5, 0.2, 0.2};
  gts.add(gt, ObjectKind::stop_sign);
  const auto m = match_detections({det(shifted(gt, 0.9), ObjectKind::vehicle, 0.8)}, gts);
  EXPECT_EQ(m.true_positives, 0);
  EXPECT_EQ(m.false_positives, 1);
  EXPECT_EQ(m.false_negatives, 1);
}

TEST(Match, ThresholdIsInclusive) {
  LabelSet gts;
  const Box gt{0.5, 0.5, 0.2, 0.2};
  gts.add(gt, ObjectKind::vehicle);
  const std::vector<Detection> preds = {det(gt, ObjectKind::vehicle, 0.5)};
  EXPECT_EQ(match_detections(preds, gts, 1.0).true_positives, 1);
}

TEST(PrecisionRecall, EmptyDenominatorIsOne) {
  const auto pr = precision_recall_from_counts(0, 0, 4);
  EXPECT_EQ(pr.precision, 1.0);
  EXPECT_EQ(pr.recall, 0.0);
  const auto none = precision_recall_from_counts(0, 0, 0);
  EXPECT_EQ(none.precision, 1.0);
  EXPECT_EQ(none.recall, 1.0);
}

TEST(PrecisionRecall, NoDetectionsAtFullConfidenceThreshold) {
  const auto t = make_rect_track();
  const auto data = gen_dataset(20, 0.5, 5, t, RenderParams{}, SceneSamplingParams{}).test;
  EvalParams p;
  p.decode.conf_threshold = 1.0;
  const auto pr = precision_recall(init_params(DetectorConfig{}, 3), data, p);
  EXPECT_EQ(pr.tp + pr.fp, 0);
  EXPECT_GT(pr.fn, 0);
  EXPECT_EQ(pr.precision, 1.0);
  EXPECT_EQ(pr.recall, 0.0);
  EXPECT_THROW(precision_recall(init_params(DetectorConfig{}, 3), Dataset{}, p), Error);
}

TEST(Confusion, PerfectDetectorIsDiagonal) {
  ConfusionMatrix cm;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto gts = random_labels(s, 4);
    std::vector<Detection> preds;
    for (std::size_t i = 0; i < gts.size(); ++i) preds.push_back({gts.boxes[i], gts.classes[i], 0.7, 0});
    cm += confusion_for_frame(preds, gts);
  }
  EXPECT_GT(cm.total(), 0);
  EXPECT_EQ(cm.diagonal(), cm.total());
}

TEST(Confusion, BlindDetectorFillsBackgroundColumn) {
  ConfusionMatrix cm;
  for (std::uint64_t s = 0; s < 20; ++s) cm += confusion_for_frame({}, random_labels(s, 4));
  EXPECT_GT(cm.total(), 0);
  EXPECT_EQ(cm.background_column(), cm.total());
  EXPECT_EQ(cm.diagonal(), 0);
}

TEST(Confusion, MisclassifiedMatchIsOffDiagonal) {
  LabelSet gts;
  gts.add({0.5, 0.5, 0.2, 0.2}, ObjectKind::stop_sign);
  const auto cm = confusion_for_frame({det({0.5, 0.5, 0.2, 0.2}, ObjectKind::traffic_light, 0.9)}, gts);
  EXPECT_EQ(cm.counts[1][2], 1);
  EXPECT_EQ(cm.total(), 1);
}

TEST(MetricsProperty, CountInvariants) {
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto gts = random_labels(s, 5);
    const auto preds = random_preds(s + 5000, gts);
    for (bool aware : {true, false}) {
      const auto m = match_detections(preds, gts, 0.5, aware);
      EXPECT_EQ(m.true_positives + m.false_negatives, static_cast<int>(gts.size()));
      EXPECT_EQ(m.true_positives + m.false_positives, static_cast<int>(preds.size()));
      const auto pr = precision_recall_from_counts(m.true_positives, m.false_positives, m.false_negatives);
      EXPECT_GE(pr.precision, 0.0);
      EXPECT_LE(pr.precision, 1.0);
      EXPECT_GE(pr.recall, 0.0);
      EXPECT_LE(pr.recall, 1.0);
    }
    const auto cm = confusion_for_frame(preds, gts);
    for (int k = 0; k < kNumClasses; ++k) {
      long n = 0;
      for (int c : gts.classes) n += c == k;
      EXPECT_EQ(cm.row_sum(k), n);
    }
    EXPECT_EQ(cm.row_sum(ConfusionMatrix::kBackground) + static_cast<long>(gts.size()) - cm.background_column() +
                  cm.counts[ConfusionMatrix::kBackground][ConfusionMatrix::kBackground],
              static_cast<long>(preds.size()));
    EXPECT_EQ(cm.counts[ConfusionMatrix::kBackground][ConfusionMatrix::kBackground], 0);
  }
}

TEST(MetricsProperty, ThreadCountDoesNotChangeReport) {
  const auto t = make_rect_track();
  const auto data = gen_dataset(24, 0.5, 9, t, RenderParams{}, SceneSamplingParams{}).test;
  const auto theta = init_params(DetectorConfig{}, 4);
  EvalParams p;
  p.decode.conf_threshold = 0.05;
  p.threads = 1;
  const auto one = evaluate_detection(theta, data, p);
  p.threads = 4;
  const auto four = evaluate_detection(theta, data, p);
  EXPECT_EQ(one.pr.tp, four.pr.tp);
  EXPECT_EQ(one.pr.fp, four.pr.fp);
  EXPECT_EQ(one.pr.fn, four.pr.fn);
  EXPECT_EQ(one.confusion, four.confusion);
  const auto pr = precision_recall(theta, data, p);
  EXPECT_EQ(pr.tp, one.pr.tp);
  EXPECT_EQ(confusion(theta, data, p), one.confusion);
}

TEST(Compliance, NeverDeceleratingFailsEveryStop) {
  const auto t = make_rect_track();
  const auto log = drive(t, 0.0, t.lap_length() + 0.5, 0.0);
  const auto r = compliance(log, t);
  EXPECT_EQ(r.failed_stops(), 3);
  for (const auto& s : r.stops) {
    EXPECT_TRUE(s.reached);
    EXPECT_NEAR(s.min_speed, 0.3, 1e-12);
  }
  EXPECT_TRUE(r.lap_completed);
  EXPECT_LT(r.lateral_rms, 1e-9);
}

TEST(Compliance, ShortStopFails) {
  const auto t = make_rect_track();
  const auto r = compliance(drive(t, 0.0, t.lap_length() + 0.5, 0.5), t);
  EXPECT_EQ(r.failed_stops(), 3);
  for (const auto& s : r.stops) {
    EXPECT_EQ(s.min_speed, 0.0);
    EXPECT_NEAR(s.dwell, 0.5, 0.011);
  }
}

TEST(Compliance, FullStopPasses) {
  const auto t = make_rect_track();
  const auto r = compliance(drive(t, 0.0, t.lap_length() + 0.5, 1.2), t);
  EXPECT_EQ(r.failed_stops(), 0);
  for (const auto& s : r.stops) {
    EXPECT_EQ(s.visits, 1);
    EXPECT_GE(s.dwell, 1.0);
  }
}

TEST(Compliance, UnreachedStopFails) {
  const auto t = make_rect_track();
  const double first = t.stop_arc_s()[0];
  const auto r = compliance(drive(t, first - 0.5, 1.0, 1.2), t);
  EXPECT_TRUE(r.stops[0].pass);
  EXPECT_FALSE(r.stops[1].reached);
  EXPECT_FALSE(r.stops[1].pass);
  EXPECT_EQ(r.failed_stops(), 2);
  EXPECT_FALSE(r.lap_completed);
}

TEST(Compliance, OpenVisitCountsOnlyOnceQualified) {
  const auto t = make_rect_track();
  const double line = t.stop_arc_s()[0];
  auto stopped_at_end = [&](double seconds) {
    EpisodeLog log = drive(t, line - 0.3, 0.3 - 1e-6, 0.0);
    const Pose2 p = t.pose_at(line);
    double time = log.ticks.back().time;
    for (int i = 0; i < static_cast<int>(std::lround(seconds / 0.01)); ++i) {
      time += 0.01;
      log.ticks.push_back({time, {p.position.x, p.position.y, p.heading, time}, 0.0, 0.0});
    }
    return compliance(log, t).stops[0];
  };
  EXPECT_FALSE(stopped_at_end(0.4).pass);
  EXPECT_TRUE(stopped_at_end(1.5).pass);
}

TEST(Compliance, EmptyLog) {
  const auto r = compliance(EpisodeLog{}, make_rect_track());
  EXPECT_EQ(r.failed_stops(), 3);
}
