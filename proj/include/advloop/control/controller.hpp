#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "advloop/control/command.hpp"
#include "advloop/core/error.hpp"
#include "advloop/core/image.hpp"
#include "advloop/perception/decode.hpp"
#include "advloop/render/render.hpp"

namespace advloop {

struct PidGains {
  double kp = 2.5;
  double ki = 0.0;
  double kd = 0.3;
  double integral_limit = 1.0;

  void validate() const {
    require(std::isfinite(kp) && std::isfinite(ki) && std::isfinite(kd), "pid: gains must be finite");
    require(integral_limit > 0.0 && std::isfinite(integral_limit), "pid: integral_limit must be > 0");
  }
};

struct PidState {
  double integral = 0.0;
  double prev_error = 0.0;
  bool initialized = false;
};

struct PidOutput {
  double u = 0.0;
  PidState state;
};

/// u = kp e + ki clamp(sum e dt) + kd (e - e_prev)/dt; no derivative on the
/// first call.
inline PidOutput pid_step(const PidGains& g, const PidState& s, double error, double dt) {
  require(dt > 0.0 && std::isfinite(dt), "pid_step: dt must be > 0");
  PidOutput out;
  out.state.integral = std::clamp(s.integral + error * dt, -g.integral_limit, g.integral_limit);
  const double deriv = s.initialized ? (error - s.prev_error) / dt : 0.0;
  out.state.prev_error = error;
  out.state.initialized = true;
  out.u = g.kp * error + g.ki * out.state.integral + g.kd * deriv;
  return out;
}

struct LaneEstimatorParams {
  Rgb lane_color = Palette{}.lane;
  double color_tolerance = 0.15;  // per channel
  int min_pixels = 10;
};

/// Normalized lateral offset of the lane markings in the lower half of the
/// image: (centroid column - W/2) / (W/2), clamped to [-1, 1]. Positive means
/// the markings sit right of centre, i.e. the vehicle is left of the lane
/// centre. Empty optional = no lane visible.
inline std::optional<double> estimate_lane_deviation(const ImageTensor& image, const LaneEstimatorParams& p = {}) {
  require(image.channels() >= 3, "estimate_lane_deviation: need an RGB image");
  const int H = image.height(), W = image.width();
  long count = 0;
  double col_sum = 0.0;
  for (int y = H / 2; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      bool match = true;
      for (int c = 0; c < 3 && match; ++c)
        match = std::abs(image.at(y, x, c) - p.lane_color[static_cast<std::size_t>(c)]) < p.color_tolerance;
      if (match) {
        ++count;
        col_sum += x;
      }
    }
  if (count < p.min_pixels) return std::nullopt;
  const double half = W / 2.0;
  return std::clamp((col_sum / static_cast<double>(count) - half) / half, -1.0, 1.0);
}

/// Reads the lit lamp inside a traffic-light box: red if lamp-red pixels
/// outnumber lamp-green ones, green if the reverse, none if neither shows.
inline LightState probe_light(const ImageTensor& image, const Box& box, const Palette& palette = {},
                              double tolerance = 0.2) {
  const int H = image.height(), W = image.width();
  const int x0 = std::clamp(static_cast<int>(std::floor(box.x0() * W)), 0, W);
  const int x1 = std::clamp(static_cast<int>(std::ceil(box.x1() * W)), 0, W);
  const int y0 = std::clamp(static_cast<int>(std::floor(box.y0() * H)), 0, H);
  const int y1 = std::clamp(static_cast<int>(std::ceil(box.y1() * H)), 0, H);
  auto near = [&](int y, int x, const Rgb& c) {
    for (int k = 0; k < 3; ++k)
      if (std::abs(image.at(y, x, k) - c[static_cast<std::size_t>(k)]) >= tolerance) return false;
    return true;
  };
  long red = 0, green = 0;
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      red += near(y, x, palette.lamp_red);
      green += near(y, x, palette.lamp_green);
    }
  if (red == 0 && green == 0) return LightState::none;
  return red >= green ? LightState::red : LightState::green;
}

/// Fills `light` for every traffic-light detection.
inline void annotate_lights(std::vector<Detection>& dets, const ImageTensor& image, const Palette& palette = {}) {
  for (auto& d : dets)
    if (d.class_id == static_cast<int>(ObjectKind::traffic_light)) d.light = probe_light(image, d.box, palette);
}

struct ControlConfig {
  PidGains pid;
  double v_cruise = 0.3;
  double v_max = 0.5;
  double omega_max = 4.0;
  double near_height = 0.25;      // box height (image fraction) that counts as near
  double stop_confidence = 0.5;
  double light_confidence = 0.25;
  double stop_duration = 2.0;     // s
  double stop_cooldown = 10.0;    // s
  double sign_forget = 1.0;       // s without a near stop sign before a new sign may trigger
  LaneEstimatorParams lane;

  void validate() const {
    pid.validate();
    require(v_max > 0 && omega_max > 0, "control: v_max and omega_max must be > 0");
    require(v_cruise >= 0 && v_cruise <= v_max, "control: v_cruise must be in [0, v_max]");
    require(near_height > 0 && near_height <= 1, "control: near_height must be in (0, 1]");
    require(stop_duration >= 0 && stop_cooldown >= 0 && sign_forget >= 0, "control: durations must be >= 0");
  }
};

enum class DriveMode { cruise, stopping, waiting_light };

inline const char* mode_name(DriveMode m) {
  switch (m) {
    case DriveMode::cruise: return "cruise";
    case DriveMode::stopping: return "stopping";
    case DriveMode::waiting_light: return "waiting_light";
  }
  return "?";
}

/// Rule state. Images carry no sign identity, so "the same stop" is the stop
/// sign that has stayed near in view: after a stop, a near sign cannot
/// re-trigger until `cooldown` runs out, unless no near sign was seen for
/// `sign_forget` seconds in between (the old sign has been passed).
struct RuleState {
  DriveMode mode = DriveMode::cruise;
  double stop_timer = 0.0;
  double cooldown = 0.0;
  double since_near_sign = 1e9;  // s since a near stop sign was last seen
  double last_omega = 0.0;
  PidState pid;
};

struct Decision {
  ControlCommand command;
  RuleState state;
};

inline bool is_near(const Detection& d, const ControlConfig& cfg) { return d.box.h >= cfg.near_height; }

/// One control step on the detections of a frame. `dt` is the time since the
/// previous decision.
inline Decision decide(const std::vector<Detection>& detections, std::optional<double> deviation,
                       const RuleState& state, double dt, const ControlConfig& cfg = {}) {
  require(dt > 0.0 && std::isfinite(dt), "decide: dt must be > 0");
  Decision out{{}, state};
  RuleState& s = out.state;
  s.stop_timer = std::max(0.0, s.stop_timer - dt);
  s.cooldown = std::max(0.0, s.cooldown - dt);

  bool near_sign = false, near_red = false;
  for (const auto& d : detections) {
    if (!is_near(d, cfg)) continue;
    if (d.class_id == static_cast<int>(ObjectKind::stop_sign) && d.confidence >= cfg.stop_confidence) near_sign = true;
    if (d.class_id == static_cast<int>(ObjectKind::traffic_light) && d.confidence >= cfg.light_confidence &&
        d.light == LightState::red)
      near_red = true;
  }
  const bool sign_is_new = s.since_near_sign >= cfg.sign_forget;
  s.since_near_sign = near_sign ? 0.0 : s.since_near_sign + dt;

  if (s.mode == DriveMode::stopping && s.stop_timer <= 0.0) {
    s.mode = DriveMode::cruise;
    s.cooldown = cfg.stop_cooldown;
  }
  if (s.mode == DriveMode::waiting_light && !near_red) s.mode = DriveMode::cruise;
  if (s.mode == DriveMode::cruise && near_sign && (s.cooldown <= 0.0 || sign_is_new)) {
    s.mode = DriveMode::stopping;
    s.stop_timer = cfg.stop_duration;
  }
  if (s.mode == DriveMode::cruise && near_red) s.mode = DriveMode::waiting_light;

  if (s.mode != DriveMode::cruise) {
    out.command = {0.0, 0.0, 0};
    s.pid = {};
    return out;
  }
  double v = cfg.v_cruise, omega = s.last_omega;
  if (deviation) {
    const auto r = pid_step(cfg.pid, s.pid, *deviation, dt);
    s.pid = r.state;
    omega = -r.u;
  } else {
    v = cfg.v_cruise / 2.0;
  }
  omega = std::clamp(omega, -cfg.omega_max, cfg.omega_max);
  s.last_omega = omega;
  out.command = {std::clamp(v, -cfg.v_max, cfg.v_max), omega, 0};
  return out;
}

}  // namespace advloop
