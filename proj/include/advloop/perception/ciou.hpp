#pragma once

#include <array>
#include <cmath>
#include <numbers>

#include "advloop/core/error.hpp"
#include "advloop/render/labels.hpp"

namespace advloop {

/// Forward-mode dual number carrying N partial derivatives.
template <int N>
struct Dual {
  double v = 0.0;
  std::array<double, N> d{};

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT: constants promote implicitly

  static Dual variable(double value, int i) {
    Dual x(value);
    x.d[static_cast<std::size_t>(i)] = 1.0;
    return x;
  }

  friend Dual operator+(const Dual& a, const Dual& b) {
    Dual r(a.v + b.v);
    for (int i = 0; i < N; ++i) r.d[i] = a.d[i] + b.d[i];
    return r;
  }
  friend Dual operator-(const Dual& a, const Dual& b) {
    Dual r(a.v - b.v);
    for (int i = 0; i < N; ++i) r.d[i] = a.d[i] - b.d[i];
    return r;
  }
  friend Dual operator*(const Dual& a, const Dual& b) {
    Dual r(a.v * b.v);
    for (int i = 0; i < N; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
    return r;
  }
  friend Dual operator/(const Dual& a, const Dual& b) {
    Dual r(a.v / b.v);
    for (int i = 0; i < N; ++i) r.d[i] = (a.d[i] * b.v - a.v * b.d[i]) / (b.v * b.v);
    return r;
  }
  friend Dual atan(const Dual& a) {
    Dual r(std::atan(a.v));
    const double k = 1.0 / (1.0 + a.v * a.v);
    for (int i = 0; i < N; ++i) r.d[i] = k * a.d[i];
    return r;
  }
  // Subgradient conventions at ties: min/max pick the first argument.
  friend Dual min(const Dual& a, const Dual& b) { return b.v < a.v ? b : a; }
  friend Dual max(const Dual& a, const Dual& b) { return b.v > a.v ? b : a; }
};

namespace ciou_detail {
inline double min(double a, double b) { return b < a ? b : a; }
inline double max(double a, double b) { return b > a ? b : a; }
}  // namespace ciou_detail

inline double value_of(double x) { return x; }
template <int N>
double value_of(const Dual<N>& x) {
  return x.v;
}

/// Complete IoU: IoU - rho^2 / c^2 - alpha * v.
///
/// rho is the centre distance, c the diagonal of the smallest enclosing box,
/// v = 4/pi^2 (atan(wb/hb) - atan(wa/ha))^2 and alpha = v / ((1 - IoU) + v),
/// with alpha = 0 when that denominator vanishes. Generic over T so the same
/// expression yields exact derivatives through Dual.
template <typename T>
T ciou_generic(const T& acx, const T& acy, const T& aw, const T& ah, const Box& b) {
  using ciou_detail::max;
  using ciou_detail::min;
  using std::atan;
  const T half(0.5);
  const T ax0 = acx - half * aw, ax1 = acx + half * aw;
  const T ay0 = acy - half * ah, ay1 = acy + half * ah;
  const T bx0(b.x0()), bx1(b.x1()), by0(b.y0()), by1(b.y1());

  T iw = min(ax1, bx1) - max(ax0, bx0);
  T ih = min(ay1, by1) - max(ay0, by0);
  if (value_of(iw) < 0.0) iw = T(0.0);
  if (value_of(ih) < 0.0) ih = T(0.0);
  const T inter = iw * ih;
  // Areas from the same edges as the intersection, so CIoU(a, a) is exactly 1.
  const T uni = (ax1 - ax0) * (ay1 - ay0) + T((b.x1() - b.x0()) * (b.y1() - b.y0())) - inter;
  const T iou_v = inter / uni;

  const T dx = acx - T(b.cx), dy = acy - T(b.cy);
  const T rho2 = dx * dx + dy * dy;
  const T ew = max(ax1, bx1) - min(ax0, bx0);
  const T eh = max(ay1, by1) - min(ay0, by0);
  const T c2 = ew * ew + eh * eh;

  const T da = T(std::atan(b.w / b.h)) - atan(aw / ah);
  const T v = T(4.0 / (std::numbers::pi * std::numbers::pi)) * da * da;
  const T denom = (T(1.0) - iou_v) + v;
  const T alpha = value_of(denom) > 0.0 ? v / denom : T(0.0);
  return iou_v - rho2 / c2 - alpha * v;
}

inline double ciou(const Box& a, const Box& b) {
  if (!(a.w > 0 && a.h > 0 && b.w > 0 && b.h > 0)) fail(ErrorKind::invalid_argument, "ciou: degenerate box");
  return ciou_generic<double>(a.cx, a.cy, a.w, a.h, b);
}

/// CIoU and its gradient with respect to the first box's (cx, cy, w, h).
struct CiouWithGrad {
  double value = 0.0;
  std::array<double, 4> grad{};
};

inline CiouWithGrad ciou_with_grad(const Box& a, const Box& b) {
  if (!(a.w > 0 && a.h > 0 && b.w > 0 && b.h > 0)) fail(ErrorKind::invalid_argument, "ciou: degenerate box");
  using D = Dual<4>;
  const D r = ciou_generic<D>(D::variable(a.cx, 0), D::variable(a.cy, 1), D::variable(a.w, 2), D::variable(a.h, 3), b);
  return {r.v, r.d};
}

}  // namespace advloop
