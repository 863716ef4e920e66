#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "advloop/core/error.hpp"
#include "advloop/scene/scene.hpp"

namespace advloop {

/// Axis-aligned box in normalized image coordinates (center, size).
struct Box {
  double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;

  double x0() const { return cx - w / 2; }
  double x1() const { return cx + w / 2; }
  double y0() const { return cy - h / 2; }
  double y1() const { return cy + h / 2; }
  double area() const { return w * h; }

  friend bool operator==(const Box&, const Box&) = default;
};

inline double iou(const Box& a, const Box& b) {
  const double iw = std::max(0.0, std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0()));
  const double ih = std::max(0.0, std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0()));
  const double inter = iw * ih;
  const double uni = (a.x1() - a.x0()) * (a.y1() - a.y0()) + (b.x1() - b.x0()) * (b.y1() - b.y0()) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// Ground-truth objects of one frame; `boxes[i]` has class `classes[i]`.
struct LabelSet {
  std::vector<Box> boxes;
  std::vector<int> classes;

  std::size_t size() const { return boxes.size(); }
  bool empty() const { return boxes.empty(); }

  void add(const Box& b, ObjectKind k) {
    boxes.push_back(b);
    classes.push_back(static_cast<int>(k));
  }

  void validate() const {
    require(boxes.size() == classes.size(), "label set: boxes/classes length mismatch");
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      const auto& b = boxes[i];
      require(classes[i] >= 0 && classes[i] < kNumClasses, "label set: class id out of range");
      require(b.w > 0 && b.h > 0, "label set: box size must be positive");
      for (double v : {b.cx, b.cy, b.w, b.h}) require(v >= 0.0 && v <= 1.0, "label set: box outside [0,1]");
    }
  }

  friend bool operator==(const LabelSet&, const LabelSet&) = default;
};

/// One line per object: "class_id cx cy w h". %.17g keeps the round trip exact.
inline std::string format_labels(const LabelSet& l) {
  std::string out;
  char buf[160];
  for (std::size_t i = 0; i < l.size(); ++i) {
    const auto& b = l.boxes[i];
    std::snprintf(buf, sizeof buf, "%d %.17g %.17g %.17g %.17g\n", l.classes[i], b.cx, b.cy, b.w, b.h);
    out += buf;
  }
  return out;
}

inline LabelSet parse_labels(const std::string& text) {
  LabelSet l;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    int cls;
    Box b;
    if (!(ls >> cls >> b.cx >> b.cy >> b.w >> b.h)) fail(ErrorKind::io, "malformed label line: " + line);
    l.boxes.push_back(b);
    l.classes.push_back(cls);
  }
  l.validate();
  return l;
}

}  // namespace advloop
