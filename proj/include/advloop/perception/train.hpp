#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "advloop/core/error.hpp"
#include "advloop/core/rng.hpp"
#include "advloop/perception/gradients.hpp"
#include "advloop/perception/model.hpp"

namespace advloop {

struct TrainParams {
  int epochs = 60;
  double learning_rate = 0.02;
  double momentum = 0.9;
  int batch_size = 32;
  bool cosine_decay = true;  // lr * 0.5 (1 + cos(pi * epoch / epochs))
  double grad_clip = 5.0;    // max L2 norm of a batch gradient; 0 disables
  std::uint64_t seed = 1;
  LossWeights weights;
  DetectorConfig detector;
};

struct TrainResult {
  ModelParams params;
  std::vector<double> loss_curve;  // mean training loss per epoch
};

/// Mini-batch SGD with heavy-ball momentum (v = mu v + g; theta -= lr v),
/// optional per-epoch cosine learning-rate decay and gradient-norm clipping.
/// Initialization and every epoch's shuffle are derived from `seed`.
inline TrainResult train(const Dataset& data, const TrainParams& p,
                         const std::function<void(int, double)>& on_epoch = {}) {
  require(!data.empty(), "train: empty dataset");
  require(p.epochs >= 0 && p.batch_size > 0, "train: epochs must be >= 0 and batch_size > 0");
  require(p.learning_rate >= 0.0 && std::isfinite(p.learning_rate), "train: learning_rate must be >= 0");
  TrainResult out{init_params(p.detector, derive_seed(p.seed, 1)), {}};
  std::vector<double> velocity(out.params.size(), 0.0);
  std::vector<const Sample*> order;
  for (const auto& s : data) order.push_back(&s);

  for (int epoch = 0; epoch < p.epochs; ++epoch) {
    Rng rng(derive_seed(p.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    const double lr = p.cosine_decay && p.epochs > 0
                          ? p.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / p.epochs))
                          : p.learning_rate;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(p.batch_size)) {
      const std::size_t n = std::min(order.size() - start, static_cast<std::size_t>(p.batch_size));
      const auto g = param_gradient(out.params, std::span<const Sample* const>(order.data() + start, n), p.weights);
      if (!std::isfinite(g.mean_loss))
        fail(ErrorKind::numerical, "train: loss diverged in epoch " + std::to_string(epoch));
      epoch_loss += g.mean_loss * static_cast<double>(n);
      seen += n;
      double scale = 1.0;
      if (p.grad_clip > 0.0) {
        double sq = 0.0;
        for (double v : g.grad) sq += v * v;
        const double gn = std::sqrt(sq);
        if (gn > p.grad_clip) scale = p.grad_clip / gn;
      }
      auto theta = out.params.values();
      for (std::size_t i = 0; i < theta.size(); ++i) {
        velocity[i] = p.momentum * velocity[i] + scale * g.grad[i];
        theta[i] -= lr * velocity[i];
      }
    }
    if (!out.params.all_finite()) fail(ErrorKind::numerical, "train: parameters became non-finite");
    out.loss_curve.push_back(epoch_loss / static_cast<double>(seen));
    if (on_epoch) on_epoch(epoch, out.loss_curve.back());
  }
  return out;
}

}  // namespace advloop
