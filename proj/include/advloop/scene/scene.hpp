#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "advloop/control/command.hpp"
#include "advloop/core/error.hpp"
#include "advloop/core/rng.hpp"
#include "advloop/scene/geometry.hpp"
#include "advloop/scene/track.hpp"

namespace advloop {

/// Detector classes. The numeric value is the class id used in labels.
enum class ObjectKind : int { vehicle = 0, stop_sign = 1, traffic_light = 2, intersection = 3 };
inline constexpr int kNumClasses = 4;

inline const char* kind_name(ObjectKind k) {
  switch (k) {
    case ObjectKind::vehicle: return "vehicle";
    case ObjectKind::stop_sign: return "stop_sign";
    case ObjectKind::traffic_light: return "traffic_light";
    case ObjectKind::intersection: return "intersection";
  }
  return "?";
}

enum class LightState { none, red, green };

struct VehicleState {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;  // (-pi, pi]
  double time = 0.0;

  Vec2 position() const { return {x, y}; }
  friend bool operator==(const VehicleState&, const VehicleState&) = default;
};

/// Screen-facing billboard in the world.
struct SceneObject {
  ObjectKind kind = ObjectKind::vehicle;
  Pose2 pose;
  double width = 0.1;      // m
  double height = 0.1;     // m
  double elevation = 0.0;  // bottom edge above the ground, m
  LightState light_state = LightState::none;

  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

/// Physical dimensions per object kind.
struct ObjectDims {
  double width, height, elevation;
};
inline constexpr std::array<ObjectDims, kNumClasses> kDefaultDims = {{
    {0.12, 0.08, 0.0},   // vehicle
    {0.18, 0.18, 0.04},  // stop_sign
    {0.07, 0.14, 0.04},  // traffic_light
    {0.16, 0.10, 0.02},  // intersection marker
}};

struct Scene {
  std::vector<SceneObject> objects;
  VehicleState viewpoint;

  friend bool operator==(const Scene&, const Scene&) = default;
};

/// Unicycle model, explicit Euler; position uses the pre-update heading.
inline VehicleState step_kinematics(const VehicleState& s, const ControlCommand& cmd, double dt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) fail(ErrorKind::invalid_argument, "step_kinematics: dt must be positive and finite");
  if (!std::isfinite(cmd.v) || !std::isfinite(cmd.omega))
    fail(ErrorKind::numerical, "step_kinematics: non-finite command");
  if (!std::isfinite(s.x) || !std::isfinite(s.y) || !std::isfinite(s.heading) || !std::isfinite(s.time))
    fail(ErrorKind::numerical, "step_kinematics: non-finite state");
  VehicleState out;
  out.x = s.x + cmd.v * std::cos(s.heading) * dt;
  out.y = s.y + cmd.v * std::sin(s.heading) * dt;
  out.heading = normalize_angle(s.heading + cmd.omega * dt);
  out.time = s.time + dt;
  return out;
}

inline double lateral_deviation(const VehicleState& s, const TrackSpec& track) {
  return project_onto_track(track, s.position()).signed_offset;
}

struct StopZoneHit {
  int stop_index = 0;  // 1-based, matches "Stop 1..3"
  double distance = 0.0;

  friend bool operator==(const StopZoneHit&, const StopZoneHit&) = default;
};

/// Next stop line ahead of the vehicle within `lookahead` metres of arc-length.
inline std::optional<StopZoneHit> nearest_stop_zone(const VehicleState& s, const TrackSpec& track,
                                                    double lookahead = 1.0) {
  const double here = project_onto_track(track, s.position()).arc_s;
  std::optional<StopZoneHit> best;
  for (int i = 0; i < 3; ++i) {
    double ahead = track.stop_arc_s()[static_cast<std::size_t>(i)] - here;
    if (ahead < 0.0) ahead += track.lap_length();
    // A point a rounding error past the line still counts as on it.
    if (track.lap_length() - ahead < 1e-9) ahead = 0.0;
    if (ahead <= lookahead && (!best || ahead < best->distance)) best = StopZoneHit{i + 1, ahead};
  }
  return best;
}

inline LightState light_state_at(const TrackSpec& track, double time) {
  const auto& l = track.traffic_light();
  const double cycle = l.red_duration + l.green_duration;
  double phase = std::fmod(time + l.phase_offset, cycle);
  if (phase < 0.0) phase += cycle;
  return phase < l.red_duration ? LightState::red : LightState::green;
}

inline SceneObject make_object(ObjectKind kind, Vec2 at, double heading = 0.0) {
  const auto& d = kDefaultDims[static_cast<std::size_t>(kind)];
  SceneObject o;
  o.kind = kind;
  o.pose = {at, heading};
  o.width = d.width;
  o.height = d.height;
  o.elevation = d.elevation;
  return o;
}

/// Stop signs, the traffic light and the corner intersection markers.
inline std::vector<SceneObject> fixed_objects(const TrackSpec& track, LightState light) {
  std::vector<SceneObject> out;
  for (double s : track.stop_arc_s()) out.push_back(make_object(ObjectKind::stop_sign, track.roadside_point(s)));
  SceneObject tl = make_object(ObjectKind::traffic_light, track.roadside_point(track.traffic_light().arc_s));
  tl.light_state = light;
  out.push_back(tl);
  // Intersection markers stand beyond the outer edge of each corner, facing the approach.
  std::array<double, 4> corners = {track.stop_arc_s()[0], track.stop_arc_s()[1], track.stop_arc_s()[2],
                                   track.traffic_light().arc_s};
  for (double s : corners) {
    const Pose2 p = track.pose_at(s);
    const Vec2 tangent{std::cos(p.heading), std::sin(p.heading)};
    const Vec2 right{std::sin(p.heading), -std::cos(p.heading)};
    const double reach = 0.35;
    out.push_back(make_object(ObjectKind::intersection, p.position + reach * tangent + 0.12 * right));
  }
  return out;
}

struct SceneSamplingParams {
  int max_vehicles = 3;
  double vehicle_side_offset = 0.2;  // parked this far from the centerline
  double min_separation = 0.3;
  double viewpoint_lateral = 0.06;
  double viewpoint_heading = 0.3;
  double approach_bias = 0.6;     // probability the viewpoint is on a corner approach
  double approach_window = 0.8;   // m before a stop/light line
  double light_weight = 0.4;      // share of corner approaches aimed at the traffic light
  double vehicle_bias = 0.5;      // probability an unbiased viewpoint sits behind a parked vehicle
  double vehicle_window = 0.6;    // m before a parked vehicle
  int max_retries = 200;
};

/// Parked vehicles placed at random arc positions on either side of the lane,
/// at least `min_separation` from every other object.
inline std::vector<SceneObject> place_vehicles(const TrackSpec& track, const std::vector<SceneObject>& existing,
                                               int count, const SceneSamplingParams& p, Rng& rng) {
  std::vector<SceneObject> placed;
  for (int v = 0; v < count; ++v) {
    bool ok = false;
    for (int attempt = 0; attempt < p.max_retries && !ok; ++attempt) {
      const double s = rng.uniform(0.0, track.lap_length());
      const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
      const Pose2 c = track.pose_at(s);
      const Vec2 left{-std::sin(c.heading), std::cos(c.heading)};
      const Vec2 at = c.position + (side * p.vehicle_side_offset) * left;
      auto clear = [&](const SceneObject& o) { return norm(o.pose.position - at) >= p.min_separation; };
      if (std::all_of(existing.begin(), existing.end(), clear) && std::all_of(placed.begin(), placed.end(), clear)) {
        placed.push_back(make_object(ObjectKind::vehicle, at, c.heading));
        ok = true;
      }
    }
    if (!ok) fail(ErrorKind::numerical, "sample_scene: could not place vehicle " + std::to_string(v) + " without collision");
  }
  return placed;
}

/// Deterministic random scene: parked vehicles, fixed furniture with a random
/// light state, and a random viewpoint near the centerline.
inline Scene sample_scene(std::uint64_t seed, const TrackSpec& track, const SceneSamplingParams& p = {}) {
  Rng rng(seed);
  Scene scene;
  const int n_vehicles = static_cast<int>(rng.below(static_cast<std::uint64_t>(p.max_vehicles) + 1));
  const LightState light = rng.uniform() < 0.5 ? LightState::red : LightState::green;
  scene.objects = fixed_objects(track, light);
  auto vehicles = place_vehicles(track, scene.objects, n_vehicles, p, rng);
  scene.objects.insert(scene.objects.end(), vehicles.begin(), vehicles.end());

  double s = rng.uniform(0.0, track.lap_length());
  if (rng.uniform() < p.approach_bias) {
    const double line = rng.uniform() < p.light_weight ? track.traffic_light().arc_s : track.stop_arc_s()[rng.below(3)];
    s = line - rng.uniform(-0.1, p.approach_window);
  } else if (!vehicles.empty() && rng.uniform() < p.vehicle_bias) {
    const auto& v = vehicles[rng.below(vehicles.size())];
    s = project_onto_track(track, v.pose.position).arc_s - rng.uniform(0.1, p.vehicle_window);
  }
  const Pose2 c = track.pose_at(s);
  const Vec2 left{-std::sin(c.heading), std::cos(c.heading)};
  const Vec2 at = c.position + rng.uniform(-p.viewpoint_lateral, p.viewpoint_lateral) * left;
  scene.viewpoint = {at.x, at.y, normalize_angle(c.heading + rng.uniform(-p.viewpoint_heading, p.viewpoint_heading)),
                     0.0};
  return scene;
}

}  // namespace advloop
