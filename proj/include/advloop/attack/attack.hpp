#pragma once

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <string>

#include "advloop/core/error.hpp"
#include "advloop/core/image.hpp"
#include "advloop/core/rng.hpp"
#include "advloop/perception/gradients.hpp"

namespace advloop {

enum class AttackKind { none, fgsm, pgd };

inline const char* attack_name(AttackKind k) {
  switch (k) {
    case AttackKind::none: return "none";
    case AttackKind::fgsm: return "fgsm";
    case AttackKind::pgd: return "pgd";
  }
  return "?";
}

inline AttackKind parse_attack_kind(const std::string& s) {
  if (s == "none" || s == "clean") return AttackKind::none;
  if (s == "fgsm") return AttackKind::fgsm;
  if (s == "pgd") return AttackKind::pgd;
  fail(ErrorKind::invalid_config, "unknown attack kind '" + s + "'");
}

/// L-infinity attack settings; epsilon is on the [0,1] pixel scale.
struct AttackConfig {
  AttackKind kind = AttackKind::none;
  double epsilon = 0.0;
  double step_size = 0.01;
  int iterations = 10;
  bool random_start = false;

  void validate() const {
    require(epsilon >= 0.0 && std::isfinite(epsilon), "attack: epsilon must be >= 0");
    require(iterations >= 0, "attack: iterations must be >= 0");
    if (kind == AttackKind::pgd) require(step_size > 0.0 && std::isfinite(step_size), "attack: PGD step size must be > 0");
  }
};

/// Anything that maps an image to dJ/dx of the same shape.
template <typename F>
concept GradientOracle = requires(F f, const ImageTensor& x) {
  { f(x) } -> std::convertible_to<ImageTensor>;
};

inline double sign_of(double g) { return g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0); }

/// Clamp to [origin - eps, origin + eps], then to [0, 1]. Idempotent.
inline ImageTensor project(const ImageTensor& candidate, const ImageTensor& origin, double epsilon) {
  require(candidate.same_shape(origin), "project: shape mismatch");
  ImageTensor out = candidate;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double lo = origin[i] - epsilon, hi = origin[i] + epsilon;
    out[i] = std::clamp(std::clamp(out[i], lo, hi), 0.0, 1.0);
  }
  return out;
}

/// x' = clamp(x + eps * sign(grad J(x)), 0, 1), with sign(0) = 0.
template <GradientOracle Grad>
ImageTensor fgsm(const ImageTensor& x, double epsilon, Grad&& grad) {
  require(epsilon >= 0.0, "fgsm: epsilon must be >= 0");
  const ImageTensor g = grad(x);
  require(g.same_shape(x), "fgsm: gradient shape mismatch");
  ImageTensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(x[i] + epsilon * sign_of(g[i]), 0.0, 1.0);
  return out;
}

/// Iterated signed ascent with projection onto the eps-ball around x
/// intersected with [0,1]^n. Random start draws uniform noise in the ball.
template <GradientOracle Grad>
ImageTensor pgd(const ImageTensor& x, double epsilon, double alpha, int iterations, Grad&& grad,
                bool random_start = false, std::uint64_t seed = 0) {
  require(alpha > 0.0, "pgd: step size must be > 0");
  require(iterations >= 0, "pgd: iterations must be >= 0");
  require(epsilon >= 0.0, "pgd: epsilon must be >= 0");
  ImageTensor cur = x;
  if (random_start) {
    Rng rng(seed);
    for (std::size_t i = 0; i < cur.size(); ++i) cur[i] += rng.uniform(-epsilon, epsilon);
    cur = project(cur, x, epsilon);
  }
  for (int t = 0; t < iterations; ++t) {
    const ImageTensor g = grad(cur);
    require(g.same_shape(x), "pgd: gradient shape mismatch");
    ImageTensor step = cur;
    for (std::size_t i = 0; i < step.size(); ++i) step[i] = cur[i] + alpha * sign_of(g[i]);
    cur = project(step, x, epsilon);
  }
  return cur;
}

/// Gradient oracle for the detector loss with fixed (theta, y).
struct DetectorLossGradient {
  const ModelParams* theta;
  const LabelSet* labels;
  LossWeights weights;

  ImageTensor operator()(const ImageTensor& x) const { return input_gradient(*theta, x, *labels, weights).grad; }
};

inline ImageTensor fgsm(const ModelParams& theta, const ImageTensor& x, const LabelSet& y, double epsilon,
                        const LossWeights& weights = {}) {
  return fgsm(x, epsilon, DetectorLossGradient{&theta, &y, weights});
}

inline ImageTensor pgd(const ModelParams& theta, const ImageTensor& x, const LabelSet& y, double epsilon, double alpha,
                       int iterations, std::uint64_t seed = 0, bool random_start = false,
                       const LossWeights& weights = {}) {
  return pgd(x, epsilon, alpha, iterations, DetectorLossGradient{&theta, &y, weights}, random_start, seed);
}

/// Dispatches on the configured attack; kind = none returns x unchanged.
inline ImageTensor apply_attack(const AttackConfig& cfg, const ModelParams& theta, const ImageTensor& x,
                                const LabelSet& y, const LossWeights& weights = {}, std::uint64_t seed = 0) {
  cfg.validate();
  switch (cfg.kind) {
    case AttackKind::none: return x;
    case AttackKind::fgsm: return fgsm(theta, x, y, cfg.epsilon, weights);
    case AttackKind::pgd:
      return pgd(theta, x, y, cfg.epsilon, cfg.step_size, cfg.iterations, seed, cfg.random_start, weights);
  }
  return x;
}

}  // namespace advloop
