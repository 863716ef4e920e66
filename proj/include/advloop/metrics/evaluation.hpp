#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <thread>
#include <vector>

#include "advloop/attack/attack.hpp"
#include "advloop/core/error.hpp"
#include "advloop/loop/episode.hpp"
#include "advloop/metrics/detection.hpp"
#include "advloop/perception/decode.hpp"
#include "advloop/render/dataset.hpp"

namespace advloop {

struct EvalParams {
  AttackConfig attack;
  DecodeParams decode;
  double match_iou = 0.5;
  LossWeights weights;
  std::uint64_t seed = 1;  // PGD random starts
  unsigned threads = 0;    // 0 = hardware concurrency
};

/// Detections on one frame after the configured attack.
inline std::vector<Detection> detect_under_attack(const ModelParams& theta, const Sample& s, const EvalParams& p) {
  const ImageTensor x = apply_attack(p.attack, theta, s.image, s.labels, p.weights, derive_seed(p.seed, s.index));
  return decode(forward(theta, x), p.decode);
}

inline PrecisionRecall precision_recall(const ModelParams& theta, const Dataset& data, const EvalParams& p = {}) {
  if (data.empty()) fail(ErrorKind::invalid_argument, "precision_recall: empty dataset");
  long tp = 0, fp = 0, fn = 0;
  for (const auto& s : data) {
    const auto m = match_detections(detect_under_attack(theta, s, p), s.labels, p.match_iou);
    tp += m.true_positives;
    fp += m.false_positives;
    fn += m.false_negatives;
  }
  return precision_recall_from_counts(tp, fp, fn);
}

inline ConfusionMatrix confusion(const ModelParams& theta, const Dataset& data, const EvalParams& p = {}) {
  ConfusionMatrix cm;
  for (const auto& s : data) cm += confusion_for_frame(detect_under_attack(theta, s, p), s.labels, p.match_iou);
  return cm;
}

/// Both metrics from one pass over the data.
struct DetectionReport {
  PrecisionRecall pr;
  ConfusionMatrix confusion;
};

/// Frames are split across threads; counts are integers, so the result does
/// not depend on the thread count.
inline DetectionReport evaluate_detection(const ModelParams& theta, const Dataset& data, const EvalParams& p = {}) {
  if (data.empty()) fail(ErrorKind::invalid_argument, "evaluate_detection: empty dataset");
  unsigned n_threads = p.threads ? p.threads : std::max(1u, std::thread::hardware_concurrency());
  n_threads = static_cast<unsigned>(std::min<std::size_t>(n_threads, data.size()));
  struct Partial {
    long tp = 0, fp = 0, fn = 0;
    ConfusionMatrix cm;
  };
  std::vector<Partial> parts(n_threads);
  auto work = [&](unsigned t) {
    Partial& part = parts[t];
    for (std::size_t i = t; i < data.size(); i += n_threads) {
      const auto dets = detect_under_attack(theta, data[i], p);
      const auto m = match_detections(dets, data[i].labels, p.match_iou);
      part.tp += m.true_positives;
      part.fp += m.false_positives;
      part.fn += m.false_negatives;
      part.cm += confusion_for_frame(dets, data[i].labels, p.match_iou);
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n_threads; ++t) pool.emplace_back(work, t);
  work(0);
  for (auto& th : pool) th.join();
  DetectionReport r;
  long tp = 0, fp = 0, fn = 0;
  for (const auto& part : parts) {
    tp += part.tp;
    fp += part.fp;
    fn += part.fn;
    r.confusion += part.cm;
  }
  r.pr = precision_recall_from_counts(tp, fp, fn);
  return r;
}

struct ComplianceParams {
  double max_speed = 0.02;  // m/s
  double min_dwell = 1.0;   // s
  double zone = 0.15;       // m of arc-length either side of the line
};

struct StopResult {
  bool pass = false;
  bool reached = false;
  double min_speed = std::numeric_limits<double>::infinity();  // over ticks in the zone
  double dwell = 0.0;  // shortest qualifying dwell over judged visits, s
  int visits = 0;
};

struct ComplianceReport {
  std::array<StopResult, 3> stops;
  bool lap_completed = false;
  double lateral_rms = 0.0;
  double max_deviation = 0.0;
  double distance = 0.0;  // net arc-length travelled

  int failed_stops() const {
    int n = 0;
    for (const auto& s : stops) n += s.pass ? 0 : 1;
    return n;
  }
};

/// Signed arc distance from `line` to `s`, wrapped into (-L/2, L/2].
inline double arc_offset(const TrackSpec& track, double s, double line) {
  const double L = track.lap_length();
  double d = std::fmod(s - line, L);
  if (d > L / 2) d -= L;
  if (d <= -L / 2) d += L;
  return d;
}

/// Stop rule: every visit to a stop zone that ends within the log must
/// contain a stretch of at least `min_dwell` seconds at speed <= `max_speed`.
/// A visit still open when the log ends counts only if it already qualifies.
/// A stop that is never reached fails.
inline ComplianceReport compliance(const EpisodeLog& log, const TrackSpec& track, const ComplianceParams& p = {}) {
  ComplianceReport r;
  if (log.ticks.empty()) return r;
  const double dt = log.ticks.size() > 1 ? log.ticks[1].time - log.ticks[0].time : 0.0;
  std::vector<double> arc(log.ticks.size());
  double sq = 0.0;
  for (std::size_t i = 0; i < log.ticks.size(); ++i) {
    const auto proj = project_onto_track(track, log.ticks[i].state.position());
    arc[i] = proj.arc_s;
    sq += proj.signed_offset * proj.signed_offset;
    r.max_deviation = std::max(r.max_deviation, std::abs(proj.signed_offset));
    if (i > 0) r.distance += arc_offset(track, arc[i], arc[i - 1]);
  }
  r.lateral_rms = std::sqrt(sq / static_cast<double>(log.ticks.size()));
  r.lap_completed = r.distance >= track.lap_length();

  for (int k = 0; k < 3; ++k) {
    StopResult& sr = r.stops[static_cast<std::size_t>(k)];
    const double line = track.stop_arc_s()[static_cast<std::size_t>(k)];
    bool all_ok = true;
    bool judged = false;
    double worst = std::numeric_limits<double>::infinity();
    std::size_t i = 0;
    while (i < log.ticks.size()) {
      if (std::abs(arc_offset(track, arc[i], line)) > p.zone) {
        ++i;
        continue;
      }
      sr.reached = true;
      ++sr.visits;
      double best_run = 0.0, run = 0.0;
      std::size_t j = i;
      for (; j < log.ticks.size() && std::abs(arc_offset(track, arc[j], line)) <= p.zone; ++j) {
        const double speed = std::abs(log.ticks[j].v);
        sr.min_speed = std::min(sr.min_speed, speed);
        run = speed <= p.max_speed ? run + dt : 0.0;
        best_run = std::max(best_run, run);
      }
      const bool open = j == log.ticks.size();
      const bool ok = best_run >= p.min_dwell - 1e-9;
      if (!open || ok) {
        judged = true;
        all_ok = all_ok && ok;
        worst = std::min(worst, best_run);
      }
      i = j;
    }
    sr.pass = sr.reached && judged && all_ok;
    sr.dwell = judged ? worst : 0.0;
  }
  return r;
}

}  // namespace advloop
