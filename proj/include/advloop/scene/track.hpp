#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "advloop/core/error.hpp"
#include "advloop/scene/geometry.hpp"

namespace advloop {

struct TrafficLightSpec {
  double arc_s = 0.0;  // position along the centerline of the light's approach line
  double red_duration = 4.0;
  double green_duration = 6.0;
  double phase_offset = 0.0;
};

/// Placement of roadside furniture relative to a line on the centerline.
struct SignPlacement {
  double ahead = 0.33;          // along the line's tangent, past the line
  double side_clearance = 0.04; // beyond the lane edge, on the right
};

/// Closed polyline track. Construct through TrackSpec::from_polyline so the
/// derived arc-length tables are populated and the invariants are checked.
class TrackSpec {
 public:
  static TrackSpec from_polyline(std::vector<Vec2> centerline, double lane_width,
                                 std::array<double, 3> stop_arc_s, TrafficLightSpec light,
                                 SignPlacement signs = {}) {
    TrackSpec t;
    t.centerline_ = std::move(centerline);
    t.lane_width_ = lane_width;
    t.stop_arc_s_ = stop_arc_s;
    t.light_ = light;
    t.signs_ = signs;
    t.validate_and_index();
    return t;
  }

  const std::vector<Vec2>& centerline() const { return centerline_; }
  double lane_width() const { return lane_width_; }
  double lap_length() const { return lap_length_; }
  std::size_t segment_count() const { return centerline_.size(); }
  const std::array<double, 3>& stop_arc_s() const { return stop_arc_s_; }
  const TrafficLightSpec& traffic_light() const { return light_; }
  const SignPlacement& sign_placement() const { return signs_; }

  Vec2 segment_start(std::size_t i) const { return centerline_[i]; }
  Vec2 segment_end(std::size_t i) const { return centerline_[(i + 1) % centerline_.size()]; }
  double segment_arc_start(std::size_t i) const { return seg_s_[i]; }

  /// Wraps an arc-length into [0, lap_length).
  double wrap_s(double s) const {
    s = std::fmod(s, lap_length_);
    if (s < 0.0) s += lap_length_;
    return s;
  }

  /// Centerline pose at arc-length s (heading = segment direction).
  Pose2 pose_at(double s) const {
    s = wrap_s(s);
    std::size_t i = 0;
    while (i + 1 < seg_s_.size() && seg_s_[i + 1] <= s) ++i;
    const Vec2 a = segment_start(i), b = segment_end(i);
    const double len = norm(b - a);
    const double t = len > 0.0 ? (s - seg_s_[i]) / len : 0.0;
    return {a + t * (b - a), std::atan2(b.y - a.y, b.x - a.x)};
  }

  Pose2 stop_line_pose(int index) const { return pose_at(stop_arc_s_.at(static_cast<std::size_t>(index))); }

  /// Roadside pose for furniture anchored to the line at arc-length s.
  Vec2 roadside_point(double s) const {
    const Pose2 p = pose_at(s);
    const Vec2 tangent{std::cos(p.heading), std::sin(p.heading)};
    const Vec2 right{std::sin(p.heading), -std::cos(p.heading)};
    return p.position + signs_.ahead * tangent + (lane_width_ / 2 + signs_.side_clearance) * right;
  }

 private:
  void validate_and_index() {
    const std::size_t n = centerline_.size();
    require(n >= 3, "track centerline needs at least 3 points");
    require(lane_width_ > 0.0 && std::isfinite(lane_width_), "lane_width must be positive");
    for (const auto& p : centerline_) require(std::isfinite(p.x) && std::isfinite(p.y), "non-finite centerline point");
    seg_s_.assign(n, 0.0);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      seg_s_[i] = s;
      const double len = norm(segment_end(i) - segment_start(i));
      require(len > 0.0, "centerline has a zero-length segment");
      s += len;
    }
    lap_length_ = s;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const bool adjacent = (j == i + 1) || (i == 0 && j == n - 1);
        if (!adjacent && segments_intersect(segment_start(i), segment_end(i), segment_start(j), segment_end(j)))
          fail(ErrorKind::invalid_argument, "track centerline self-intersects");
      }
    for (double& st : stop_arc_s_) {
      require(std::isfinite(st), "stop line position must be finite");
      st = wrap_s(st);
    }
    require(light_.red_duration >= 0.0 && light_.green_duration >= 0.0 &&
                light_.red_duration + light_.green_duration > 0.0,
            "traffic light cycle must have positive length");
    light_.arc_s = wrap_s(light_.arc_s);
  }

  static bool segments_intersect(Vec2 p1, Vec2 p2, Vec2 q1, Vec2 q2) {
    const double d1 = cross(p2 - p1, q1 - p1), d2 = cross(p2 - p1, q2 - p1);
    const double d3 = cross(q2 - q1, p1 - q1), d4 = cross(q2 - q1, p2 - q1);
    if (((d1 > 0) != (d2 > 0)) && ((d3 > 0) != (d4 > 0)) && d1 != 0 && d2 != 0 && d3 != 0 && d4 != 0) return true;
    auto on_seg = [](Vec2 a, Vec2 b, Vec2 p) {
      return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
             p.y <= std::max(a.y, b.y);
    };
    if (d1 == 0 && on_seg(p1, p2, q1)) return true;
    if (d2 == 0 && on_seg(p1, p2, q2)) return true;
    if (d3 == 0 && on_seg(q1, q2, p1)) return true;
    if (d4 == 0 && on_seg(q1, q2, p2)) return true;
    return false;
  }

  std::vector<Vec2> centerline_;
  double lane_width_ = 0.0;
  std::array<double, 3> stop_arc_s_{};
  TrafficLightSpec light_;
  SignPlacement signs_;
  std::vector<double> seg_s_;
  double lap_length_ = 0.0;
};

struct RectTrackParams {
  double width = 3.0;
  double height = 2.0;
  double fillet_radius = 0.1;
  int fillet_segments = 8;
  double lane_width = 0.2;
  double stop_setback = 0.05;  // stop line distance before the corner fillet begins
  TrafficLightSpec light;
  SignPlacement signs;
};

/// Counter-clockwise rectangular loop starting at the bottom-left end of the
/// bottom straight. Stop lines sit before the first three corners in travel
/// order; the traffic light guards the fourth.
inline TrackSpec make_rect_track(const RectTrackParams& p = {}) {
  require(p.width > 2 * p.fillet_radius && p.height > 2 * p.fillet_radius, "track too small for its fillets");
  require(p.fillet_radius > 0.0 && p.fillet_segments >= 1, "fillet must have positive radius and segments");
  const double r = p.fillet_radius;
  std::vector<Vec2> pts;
  auto arc = [&](Vec2 c, double a0) {
    for (int k = 1; k < p.fillet_segments; ++k) {
      const double a = a0 + (std::numbers::pi / 2) * k / p.fillet_segments;
      pts.push_back({c.x + r * std::cos(a), c.y + r * std::sin(a)});
    }
  };
  const double w = p.width, h = p.height, pi = std::numbers::pi;
  pts.push_back({r, 0});
  pts.push_back({w - r, 0});
  arc({w - r, r}, -pi / 2);
  pts.push_back({w, r});
  pts.push_back({w, h - r});
  arc({w - r, h - r}, 0);
  pts.push_back({w - r, h});
  pts.push_back({r, h});
  arc({r, h - r}, pi / 2);
  pts.push_back({0, h - r});
  pts.push_back({0, r});
  arc({r, r}, pi);

  // Arc-length at which each corner's fillet begins.
  const double quarter = 2 * r * p.fillet_segments * std::sin(pi / 4 / p.fillet_segments);
  const double side_w = w - 2 * r, side_h = h - 2 * r;
  const double c0 = side_w;
  const double c1 = c0 + quarter + side_h;
  const double c2 = c1 + quarter + side_w;
  const double c3 = c2 + quarter + side_h;
  TrafficLightSpec light = p.light;
  light.arc_s = c3 - p.stop_setback;
  return TrackSpec::from_polyline(std::move(pts), p.lane_width,
                                  {c0 - p.stop_setback, c1 - p.stop_setback, c2 - p.stop_setback}, light,
                                  p.signs);
}

/// Result of projecting a point onto the centerline.
struct TrackProjection {
  std::size_t segment = 0;
  double arc_s = 0.0;
  double signed_offset = 0.0;  // positive = left of travel direction
  double distance = 0.0;
};

/// Nearest-segment projection; exact ties go to the lowest segment index.
inline TrackProjection project_onto_track(const TrackSpec& track, Vec2 p) {
  TrackProjection best;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < track.segment_count(); ++i) {
    const Vec2 a = track.segment_start(i), b = track.segment_end(i);
    const Vec2 ab = b - a;
    const double len2 = dot(ab, ab);
    const double t = std::clamp(dot(p - a, ab) / len2, 0.0, 1.0);
    const Vec2 q = a + t * ab;
    const double d = norm(p - q);
    if (d < best_d) {
      best_d = d;
      const double side = cross(ab, p - a);
      best.segment = i;
      best.arc_s = track.wrap_s(track.segment_arc_start(i) + t * std::sqrt(len2));
      best.distance = d;
      best.signed_offset = side >= 0.0 ? d : -d;
    }
  }
  return best;
}

}  // namespace advloop
