#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "advloop/core/error.hpp"
#include "advloop/core/image.hpp"
#include "advloop/core/rng.hpp"
#include "advloop/render/labels.hpp"
#include "advloop/scene/scene.hpp"

namespace advloop {

using Rgb = std::array<double, 3>;

struct Palette {
  Rgb wall{0.62, 0.66, 0.72};
  Rgb floor{0.28, 0.28, 0.30};
  Rgb lane{0.95, 0.95, 0.92};
  Rgb vehicle{0.1, 0.25, 0.95};
  Rgb stop_sign{0.85, 0.10, 0.10};
  Rgb light_housing{0.08, 0.08, 0.08};
  Rgb lamp_red{1.00, 0.15, 0.10};
  Rgb lamp_green{0.10, 0.90, 0.20};
  Rgb lamp_off{0.25, 0.25, 0.25};
  Rgb intersection{0.95, 0.80, 0.10};

  const Rgb& body(ObjectKind k) const {
    switch (k) {
      case ObjectKind::vehicle: return vehicle;
      case ObjectKind::stop_sign: return stop_sign;
      case ObjectKind::traffic_light: return light_housing;
      case ObjectKind::intersection: return intersection;
    }
    return floor;
  }
};

struct RenderParams {
  int height = 64;
  int width = 64;
  double camera_fov = 1.5707963267948966;  // horizontal, radians
  double horizon_row = 24.0;               // continuous row coordinate of the horizon
  double camera_height = 0.20;             // m above the ground
  double noise_sigma = 0.02;
  double marking_width = 0.025;  // m, each lane band
  double max_ground_depth = 4.0;
  double min_depth = 0.05;       // objects closer than this are behind the image plane
  int min_box_px = 5;            // objects projecting smaller than this (height) are not drawn
  double min_label_visible = 0.9;
  Palette palette;

  double focal_px() const { return (width / 2.0) / std::tan(camera_fov / 2.0); }

  void validate() const {
    require(height > 0 && width > 0, "render: image size must be positive");
    require(camera_fov > 0.0 && camera_fov < 3.1, "render: camera_fov out of range");
    require(horizon_row >= 0.0 && horizon_row < height, "render: horizon_row must lie within the image");
    require(noise_sigma >= 0.0 && std::isfinite(noise_sigma), "render: noise_sigma must be >= 0");
    require(camera_height > 0.0, "render: camera_height must be positive");
  }
};

/// Integer pixel rectangle [x0, x1) x [y0, y1).
struct PixelRect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int w() const { return x1 - x0; }
  int h() const { return y1 - y0; }
  long area() const { return w() > 0 && h() > 0 ? static_cast<long>(w()) * h() : 0; }
};

struct ProjectedObject {
  std::size_t object_index = 0;
  double depth = 0.0;
  PixelRect full;     // before clipping to the image
  PixelRect clipped;
};

/// Camera frame attached to the vehicle pose.
struct Camera {
  Vec2 origin;
  Vec2 forward;
  Vec2 right;

  explicit Camera(const VehicleState& s)
      : origin{s.x, s.y}, forward{std::cos(s.heading), std::sin(s.heading)},
        right{std::sin(s.heading), -std::cos(s.heading)} {}
};

/// Pinhole projection of a screen-facing billboard. Returns false when the
/// object is behind the camera or too small to draw.
inline bool project_object(const SceneObject& o, const Camera& cam, const RenderParams& p, ProjectedObject& out) {
  const Vec2 d = o.pose.position - cam.origin;
  const double z = dot(d, cam.forward);
  if (z <= p.min_depth) return false;
  const double f = p.focal_px();
  const double u = p.width / 2.0 + f * dot(d, cam.right) / z;
  const double half_w = f * o.width / (2.0 * z);
  const double v_top = p.horizon_row + f * (p.camera_height - (o.elevation + o.height)) / z;
  const double v_bot = p.horizon_row + f * (p.camera_height - o.elevation) / z;
  // Bound before the integer conversion; anything this far out is clipped away regardless.
  auto snap = [](double v) { return static_cast<int>(std::lround(std::clamp(v, -1e6, 1e6))); };
  PixelRect r{snap(u - half_w), snap(v_top), snap(u + half_w), snap(v_bot)};
  if (r.h() < p.min_box_px || r.w() < 2) return false;
  PixelRect c{std::max(r.x0, 0), std::max(r.y0, 0), std::min(r.x1, p.width), std::min(r.y1, p.height)};
  if (c.w() < 2 || c.h() < 2) return false;
  out.depth = z;
  out.full = r;
  out.clipped = c;
  return true;
}

inline void fill_rect(ImageTensor& img, const PixelRect& r, const Rgb& color, std::vector<int>* ids = nullptr,
                      int id = -1) {
  for (int y = std::max(r.y0, 0); y < std::min(r.y1, img.height()); ++y)
    for (int x = std::max(r.x0, 0); x < std::min(r.x1, img.width()); ++x) {
      for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = color[static_cast<std::size_t>(ch)];
      if (ids) (*ids)[static_cast<std::size_t>(y) * img.width() + x] = id;
    }
}

/// Background, floor and lane bands; lane pixels are found by back-projecting
/// each floor pixel onto the ground plane.
inline void render_ground(ImageTensor& img, const TrackSpec& track, const Camera& cam, const RenderParams& p) {
  const double f = p.focal_px();
  const double band_center = track.lane_width() / 2.0;
  for (int y = 0; y < p.height; ++y) {
    const double dv = y + 0.5 - p.horizon_row;
    for (int x = 0; x < p.width; ++x) {
      const Rgb* color = &p.palette.wall;
      if (dv > 0.0) {
        color = &p.palette.floor;
        const double z = f * p.camera_height / dv;
        if (z <= p.max_ground_depth) {
          const double lateral = (x + 0.5 - p.width / 2.0) * z / f;
          const Vec2 g = cam.origin + z * cam.forward + lateral * cam.right;
          const double dist = project_onto_track(track, g).distance;
          if (std::abs(dist - band_center) <= p.marking_width / 2.0) color = &p.palette.lane;
        }
      }
      for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = (*color)[static_cast<std::size_t>(ch)];
    }
  }
}

/// Lamp sub-rectangle for a traffic light box: red on top, green at the bottom.
inline PixelRect lamp_rect(const PixelRect& r, bool top) {
  const double w = r.w(), h = r.h();
  const int x0 = r.x0 + static_cast<int>(std::lround(0.2 * w));
  const int x1 = r.x0 + static_cast<int>(std::lround(0.8 * w));
  const int y0 = r.y0 + static_cast<int>(std::lround((top ? 0.08 : 0.67) * h));
  const int y1 = r.y0 + static_cast<int>(std::lround((top ? 0.33 : 0.92) * h));
  return {x0, y0, std::max(x1, x0 + 1), std::max(y1, y0 + 1)};
}

struct RenderedFrame {
  ImageTensor image;
  LabelSet labels;
};

/// Renders the scene from `state` and returns the image and exact labels.
///
/// Objects are painted far-to-near. An object is labeled only if at least
/// `min_label_visible` of its clipped rectangle remains visible after
/// occlusion, so every label box coincides with drawn pixels.
inline RenderedFrame render_frame(const Scene& scene, const TrackSpec& track, const VehicleState& state,
                                  const RenderParams& p, std::uint64_t seed) {
  p.validate();
  require(std::isfinite(state.x) && std::isfinite(state.y) && std::isfinite(state.heading),
          "render_frame: non-finite vehicle state");
  const Camera cam(state);
  RenderedFrame out{ImageTensor(p.height, p.width, 3), {}};
  render_ground(out.image, track, cam, p);

  std::vector<ProjectedObject> visible;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    ProjectedObject po;
    po.object_index = i;
    if (project_object(scene.objects[i], cam, p, po)) visible.push_back(po);
  }
  std::stable_sort(visible.begin(), visible.end(),
                   [](const ProjectedObject& a, const ProjectedObject& b) { return a.depth > b.depth; });

  std::vector<int> ids(static_cast<std::size_t>(p.width) * p.height, -1);
  for (std::size_t k = 0; k < visible.size(); ++k) {
    const auto& po = visible[k];
    const SceneObject& o = scene.objects[po.object_index];
    fill_rect(out.image, po.full, p.palette.body(o.kind), &ids, static_cast<int>(k));
    if (o.kind == ObjectKind::traffic_light) {
      const bool red = o.light_state == LightState::red;
      const bool green = o.light_state == LightState::green;
      fill_rect(out.image, lamp_rect(po.full, true), red ? p.palette.lamp_red : p.palette.lamp_off);
      fill_rect(out.image, lamp_rect(po.full, false), green ? p.palette.lamp_green : p.palette.lamp_off);
    }
  }

  for (std::size_t k = 0; k < visible.size(); ++k) {
    const auto& c = visible[k].clipped;
    long shown = 0;
    for (int y = c.y0; y < c.y1; ++y)
      for (int x = c.x0; x < c.x1; ++x)
        if (ids[static_cast<std::size_t>(y) * p.width + x] == static_cast<int>(k)) ++shown;
    if (static_cast<double>(shown) < p.min_label_visible * static_cast<double>(c.area())) continue;
    const double W = p.width, H = p.height;
    out.labels.add({(c.x0 + c.x1) / (2.0 * W), (c.y0 + c.y1) / (2.0 * H), c.w() / W, c.h() / H},
                   scene.objects[visible[k].object_index].kind);
  }

  if (p.noise_sigma > 0.0) {
    Rng rng(seed);
    for (auto& v : out.image.values()) v += p.noise_sigma * rng.normal();
  }
  out.image.clamp01();
  out.image = quantize_f32(std::move(out.image));
  return out;
}

inline RenderedFrame render_frame(const Scene& scene, const TrackSpec& track, const RenderParams& p,
                                  std::uint64_t seed) {
  return render_frame(scene, track, scene.viewpoint, p, seed);
}

}  // namespace advloop
