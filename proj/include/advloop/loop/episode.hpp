#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "advloop/attack/attack.hpp"
#include "advloop/control/controller.hpp"
#include "advloop/core/error.hpp"
#include "advloop/core/rng.hpp"
#include "advloop/metrics/detection.hpp"
#include "advloop/netchan/channel.hpp"
#include "advloop/netchan/condition.hpp"
#include "advloop/perception/decode.hpp"
#include "advloop/render/render.hpp"
#include "advloop/scene/scene.hpp"

namespace advloop {

enum class Transport { simulated, tcp };

struct LoopConfig {
  double tick_dt = 0.01;       // s
  double frame_period = 0.05;  // s
  double episode_duration = 120.0;
  NetworkCondition uplink;
  NetworkCondition downlink;
  std::optional<AdversaryScenario> scenario;
  AttackConfig attack;
  Transport transport = Transport::simulated;
  std::uint64_t seed = 1;
  double start_arc = 0.0;  // m along the centerline
  ControlConfig control;
  DecodeParams decode;
  LossWeights weights;
  RenderParams render;

  std::int64_t tick_us() const { return std::llround(tick_dt * 1e6); }
  std::int64_t frame_us() const { return std::llround(frame_period * 1e6); }
  int ticks_per_frame() const { return static_cast<int>(frame_us() / tick_us()); }
  long total_ticks() const { return std::lround(episode_duration / tick_dt); }

  void validate() const {
    if (!(tick_dt > 0.0) || tick_us() <= 0) fail(ErrorKind::invalid_config, "loop: tick_dt must be > 0");
    if (!(frame_period > 0.0) || frame_us() % tick_us() != 0 || frame_us() < tick_us())
      fail(ErrorKind::invalid_config, "loop: frame_period must be a positive integer multiple of tick_dt");
    if (!(episode_duration > 0.0)) fail(ErrorKind::invalid_config, "loop: episode_duration must be > 0");
    uplink.validate();
    downlink.validate();
    if (scenario) scenario->validate();
    attack.validate();
    control.validate();
  }
};

struct TickRecord {
  double time = 0.0;
  VehicleState state;
  double v = 0.0, omega = 0.0;  // applied
  std::uint32_t cmd_seq = 0;    // 0 = initial (0, 0) command
  double cmd_age_ms = -1.0;     // now - capture time of the command's frame; -1 for the initial command
};

struct FrameRecord {
  std::uint32_t seq = 0;
  double t_send = 0.0;
  double t_arrive = -1.0;  // -1 if dropped or still in flight at the end
  bool dropped = false;
  bool attacked = false;
  int n_detections = 0;
  double loss_total = std::nan("");
  int tp = 0, fp = 0, fn = 0;  // detections matched against the frame labels at IoU 0.5
};

struct EventRecord {
  double time = 0.0;
  std::string kind;    // mode, stop_zone_enter, stop_zone_exit, link_down, link_up, stage
  std::string detail;
};

struct EpisodeLog {
  std::vector<TickRecord> ticks;
  std::vector<FrameRecord> frames;
  std::vector<EventRecord> events;
  bool aborted = false;
  std::string abort_reason;
};

/// Cloud side: optional attack, detection, lamp probe, lane estimate and the
/// rule state machine. Frames older than the newest processed one are ignored.
class CloudNode {
 public:
  struct Result {
    ControlCommand command;
    std::vector<Detection> detections;
    MatchResult match;
    double loss_total = 0.0;
    bool attacked = false;
    DriveMode mode_before = DriveMode::cruise;
    DriveMode mode_after = DriveMode::cruise;
  };

  CloudNode(const ModelParams& theta, const LoopConfig& cfg) : theta_(theta), cfg_(cfg) {}

  /// Returns nothing for stale frames.
  std::optional<Result> process(std::uint32_t seq, std::int64_t capture_us, const ImageTensor& image,
                                const LabelSet& labels) {
    if (seq <= last_seq_) return std::nullopt;
    const double dt = last_capture_us_ < 0 ? cfg_.frame_period
                                           : static_cast<double>(capture_us - last_capture_us_) * 1e-6;
    last_seq_ = seq;
    last_capture_us_ = capture_us;
    Result r;
    r.attacked = cfg_.attack.kind != AttackKind::none;
    const ImageTensor x = r.attacked ? apply_attack(cfg_.attack, theta_, image, labels, cfg_.weights,
                                                    derive_seed(cfg_.seed, 0xa77ac0000ULL + seq))
                                     : image;
    const RawPrediction raw = forward(theta_, x);
    r.loss_total = detection_loss(raw, labels, cfg_.weights).total;
    r.detections = decode(raw, cfg_.decode);
    r.match = match_detections(r.detections, labels, 0.5);
    annotate_lights(r.detections, x, cfg_.render.palette);
    r.mode_before = rules_.mode;
    const Decision d = decide(r.detections, estimate_lane_deviation(x, cfg_.control.lane), rules_,
                              dt > 0.0 ? dt : cfg_.frame_period, cfg_.control);
    rules_ = d.state;
    r.mode_after = rules_.mode;
    r.command = d.command;
    r.command.seq = seq;
    return r;
  }

  const RuleState& rules() const { return rules_; }

 private:
  const ModelParams& theta_;
  const LoopConfig& cfg_;
  RuleState rules_;
  std::uint32_t last_seq_ = 0;
  std::int64_t last_capture_us_ = -1;
};

/// Keeps the newest command: anything with seq <= the applied seq is stale.
struct StaleCommandFilter {
  ControlCommand applied{0.0, 0.0, 0};

  /// True if `c` replaced the applied command.
  bool offer(const ControlCommand& c) {
    if (c.seq <= applied.seq) return false;
    applied = c;
    return true;
  }
};

inline ControlCommand stale_command_filter(const std::vector<ControlCommand>& received, const ControlCommand& current) {
  StaleCommandFilter f{current};
  for (const auto& c : received) f.offer(c);
  return f.applied;
}

/// Vehicle start pose on the centerline at `start_arc`.
inline VehicleState start_state(const TrackSpec& track, double start_arc) {
  const Pose2 p = track.pose_at(start_arc);
  return {p.position.x, p.position.y, normalize_angle(p.heading), 0.0};
}

/// Fixed furniture with the light state at time t.
inline Scene loop_scene(const TrackSpec& track, double t) {
  Scene s;
  s.objects = fixed_objects(track, light_state_at(track, t));
  return s;
}

/// Discrete-time closed loop in simulated transport. Each tick: capture and
/// send a frame (on frame ticks), deliver due frames to the cloud and send its
/// commands, deliver due commands to the vehicle, log, integrate kinematics.
inline EpisodeLog run_episode(const LoopConfig& cfg, const TrackSpec& track, const ModelParams& theta) {
  cfg.validate();
  if (cfg.transport != Transport::simulated)
    fail(ErrorKind::invalid_config, "run_episode drives the simulated transport; use serve/drive for tcp");
  EpisodeLog log;
  Channel up(cfg.uplink), down(cfg.downlink);
  CloudNode cloud(theta, cfg);
  StaleCommandFilter filter;
  std::map<std::uint32_t, std::int64_t> capture_us;
  std::map<std::uint32_t, LabelSet> frame_labels;
  std::map<std::uint32_t, std::size_t> frame_index;
  VehicleState state = start_state(track, cfg.start_arc);
  const std::int64_t tick = cfg.tick_us();
  const int per_frame = cfg.ticks_per_frame();
  const long n_ticks = cfg.total_ticks();
  std::uint32_t next_seq = 1;
  bool impact_applied = false;
  std::size_t next_stage = 0;
  bool in_zone = false;

  for (long k = 0; k < n_ticks; ++k) {
    const std::int64_t now = k * tick;
    const double t = static_cast<double>(now) * 1e-6;

    if (cfg.scenario) {
      const auto& stages = cfg.scenario->stages;
      while (next_stage < stages.size() && stages[next_stage].time_s <= t) {
        log.events.push_back({t, "stage", std::string(stage_name(stages[next_stage].kind)) + ": " +
                                              stages[next_stage].note});
        ++next_stage;
      }
      const double ti = cfg.scenario->impact_time();
      if (!impact_applied && ti >= 0.0 && t >= ti) {
        up.set_condition(cfg.scenario->condition_at(cfg.uplink, t));
        down.set_condition(cfg.scenario->condition_at(cfg.downlink, t));
        impact_applied = true;
      }
    }

    if (k % per_frame == 0) {
      const std::uint32_t seq = next_seq++;
      const auto frame = render_frame(loop_scene(track, t), track, state, cfg.render, derive_seed(cfg.seed, seq));
      WireMessage m{MessageType::frame, seq, static_cast<std::uint64_t>(now), encode_frame_payload(frame.image)};
      capture_us[seq] = now;
      frame_labels[seq] = frame.labels;
      const auto rec = up.send(std::move(m), now);
      frame_index[seq] = log.frames.size();
      log.frames.push_back({seq, t, -1.0, rec.dropped, false, 0, std::nan("")});
      if (rec.dropped) frame_labels.erase(seq);
    }

    for (auto& m : up.poll(now)) {
      FrameRecord& fr = log.frames[frame_index.at(m.seq)];
      fr.t_arrive = t;
      const auto payload = decode_frame_payload(m.payload);
      const auto res = cloud.process(m.seq, static_cast<std::int64_t>(m.timestamp_us), payload.image,
                                     frame_labels.at(m.seq));
      frame_labels.erase(m.seq);
      if (!res) {
        fr.n_detections = -1;
        continue;
      }
      fr.attacked = res->attacked;
      fr.n_detections = static_cast<int>(res->detections.size());
      fr.loss_total = res->loss_total;
      fr.tp = res->match.true_positives;
      fr.fp = res->match.false_positives;
      fr.fn = res->match.false_negatives;
      if (res->mode_after != res->mode_before) log.events.push_back({t, "mode", mode_name(res->mode_after)});
      down.send({MessageType::command, res->command.seq, static_cast<std::uint64_t>(now),
                 encode_command_payload(res->command)},
                now);
    }

    for (auto& m : down.poll(now)) filter.offer(decode_command_payload(m.payload, m.seq));

    const ControlCommand& cmd = filter.applied;
    const double age = cmd.seq == 0 ? -1.0 : static_cast<double>(now - capture_us.at(cmd.seq)) * 1e-3;
    log.ticks.push_back({t, state, cmd.v, cmd.omega, cmd.seq, age});

    const auto zone = nearest_stop_zone(state, track, 0.15);
    double behind = 1e9;
    const double here = project_onto_track(track, state.position()).arc_s;
    for (double s : track.stop_arc_s()) {
      double d = here - s;
      if (d < 0) d += track.lap_length();
      behind = std::min(behind, d);
    }
    const bool now_in_zone = zone.has_value() || behind <= 0.15;
    if (now_in_zone != in_zone) log.events.push_back({t, now_in_zone ? "stop_zone_enter" : "stop_zone_exit", ""});
    in_zone = now_in_zone;

    const VehicleState next = step_kinematics(state, cmd, cfg.tick_dt);
    if (!std::isfinite(next.x) || !std::isfinite(next.y) || !std::isfinite(next.heading)) {
      log.aborted = true;
      log.abort_reason = "non-finite vehicle state at t=" + std::to_string(t);
      return log;
    }
    state = next;
  }
  return log;
}

/// Writes ticks.csv, frames.csv and events.txt into `dir`.
inline void save_episode(const EpisodeLog& log, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  char buf[256];
  {
    std::ofstream f(dir / "ticks.csv");
    f << "time,x,y,heading,v_applied,omega_applied,cmd_seq,cmd_age_ms\n";
    for (const auto& r : log.ticks) {
      std::snprintf(buf, sizeof buf, "%.2f,%.6f,%.6f,%.6f,%.6f,%.6f,%u,%.1f\n", r.time, r.state.x, r.state.y,
                    r.state.heading, r.v, r.omega, r.cmd_seq, r.cmd_age_ms);
      f << buf;
    }
    if (!f) fail(ErrorKind::io, "cannot write " + (dir / "ticks.csv").string());
  }
  {
    std::ofstream f(dir / "frames.csv");
    f << "seq,t_send,t_arrive,dropped,attacked,n_detections,loss_total,tp,fp,fn\n";
    for (const auto& r : log.frames) {
      std::snprintf(buf, sizeof buf, "%u,%.2f,%.2f,%d,%d,%d,%.6f,%d,%d,%d\n", r.seq, r.t_send, r.t_arrive,
                    r.dropped ? 1 : 0, r.attacked ? 1 : 0, r.n_detections, r.loss_total, r.tp, r.fp, r.fn);
      f << buf;
    }
    if (!f) fail(ErrorKind::io, "cannot write " + (dir / "frames.csv").string());
  }
  {
    // One record per line: time=<s> kind=<kind> detail=<rest of line>.
    std::ofstream f(dir / "events.txt");
    for (const auto& e : log.events) {
      std::snprintf(buf, sizeof buf, "time=%.2f kind=%s detail=", e.time, e.kind.c_str());
      f << buf << e.detail << "\n";
    }
    if (log.aborted) f << "kind=aborted detail=" << log.abort_reason << "\n";
    if (!f) fail(ErrorKind::io, "cannot write " + (dir / "events.txt").string());
  }
}

}  // namespace advloop
