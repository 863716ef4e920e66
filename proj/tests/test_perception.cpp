#include <algorithm>
#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "advloop/perception/checkpoint.hpp"
#include "advloop/perception/decode.hpp"
#include "advloop/perception/train.hpp"
#include "support.hpp"

using namespace advloop;
using namespace advloop::testing;

namespace {

double logit(double p) { return std::log(p / (1 - p)); }

RawPrediction zero_raw() {
  DetectorConfig c;
  RawPrediction r;
  r.grid = c.grid;
  r.per_cell = c.head_outputs();
  r.values.assign(static_cast<std::size_t>(r.cells() * r.per_cell), 0.0);
  return r;
}

// Straight from the definition, independent of the library's templated version.
double ciou_oracle(const Box& a, const Box& b) {
  const double iw = std::max(0.0, std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0()));
  const double ih = std::max(0.0, std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0()));
  const double inter = iw * ih;
  const double u = a.area() + b.area() - inter;
  const double iou_v = inter / u;
  const double cw = std::max(a.x1(), b.x1()) - std::min(a.x0(), b.x0());
  const double ch = std::max(a.y1(), b.y1()) - std::min(a.y0(), b.y0());
  const double rho2 = (a.cx - b.cx) * (a.cx - b.cx) + (a.cy - b.cy) * (a.cy - b.cy);
  const double dv = std::atan(b.w / b.h) - std::atan(a.w / a.h);
  const double v = 4.0 / (std::numbers::pi * std::numbers::pi) * dv * dv;
  const double alpha = (1 - iou_v) + v > 0 ? v / ((1 - iou_v) + v) : 0.0;
  return iou_v - rho2 / (cw * cw + ch * ch) - alpha * v;
}

Box random_box(Rng& rng) {
  const double w = rng.uniform(0.02, 0.6), h = rng.uniform(0.02, 0.6);
  return {rng.uniform(0, 1), rng.uniform(0, 1), w, h};
}

Dataset tiny_dataset(std::uint64_t seed, int n) {
  Dataset d;
  for (int i = 0; i < n; ++i)
    d.push_back({static_cast<std::uint32_t>(i), random_image(seed * 100 + i), random_labels(seed * 100 + i)});
  return d;
}

}  // namespace

TEST(Model, ParameterCountMatchesLayout) {
  const DetectorConfig c;
  EXPECT_EQ(c.parameter_count(), 3u * 3 * 3 * 8 + 8 + 3u * 3 * 8 * 16 + 16 + 400u * 9 + 9);
  EXPECT_EQ(c.head_inputs(), 400);
  const auto p = init_params(c, 1);
  EXPECT_EQ(p.size(), c.parameter_count());
  EXPECT_EQ(p.off_head_b() + 9, p.size());
}

TEST(Model, InitIsBoundedByFanIn) {
  const auto p = init_params(DetectorConfig{}, 5);
  for (double v : p.conv1_w()) EXPECT_LE(std::abs(v), 1.0 / std::sqrt(27.0));
  for (double v : p.conv2_w()) EXPECT_LE(std::abs(v), 1.0 / std::sqrt(72.0));
  for (double v : p.head_w()) EXPECT_LE(std::abs(v), 1.0 / std::sqrt(400.0));
  EXPECT_EQ(p, init_params(DetectorConfig{}, 5));
  EXPECT_NE(p, init_params(DetectorConfig{}, 6));
}

TEST(Forward, ZeroWeightsGiveHalfSigmoids) {
  const ModelParams zero{DetectorConfig{}};
  const auto raw = forward(zero, random_image(1));
  for (double v : raw.values) EXPECT_EQ(v, 0.0);
  const Box b = cell_box(raw.cell(5), 5, raw.grid);
  EXPECT_DOUBLE_EQ(b.w, 0.5);
  EXPECT_DOUBLE_EQ(b.h, 0.5);
  EXPECT_DOUBLE_EQ(b.cx, (1 + 0.5) / 4);
  EXPECT_DOUBLE_EQ(sigmoid(raw.cell(0)[4]), 0.5);
}

TEST(Forward, Deterministic) {
  const auto theta = init_params(DetectorConfig{}, 2);
  const auto img = random_image(3);
  EXPECT_EQ(forward(theta, img), forward(theta, img));
}

TEST(Forward, ContinuityProbe) {
  const auto theta = init_params(DetectorConfig{}, 2);
  const auto img = random_image(4);
  ImageTensor scaled = img;
  for (auto& v : scaled.values()) v *= 1.0 + 1e-12;
  const auto a = forward(theta, img), b = forward(theta, scaled);
  for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-9);
}

TEST(Forward, RejectsWrongShape) {
  const auto theta = init_params(DetectorConfig{}, 2);
  EXPECT_THROW(forward(theta, ImageTensor(32, 64, 3)), Error);
  EXPECT_THROW(forward(theta, ImageTensor(64, 64, 1)), Error);
}

TEST(Loss, EmptyLabelsAtZeroLogits) {
  const auto l = detection_loss(zero_raw(), LabelSet{}, LossWeights{});
  EXPECT_NEAR(l.l_bce, std::log(2.0), 1e-15);
  EXPECT_EQ(l.l_ciou, 0.0);
  EXPECT_EQ(l.l_dfl, 0.0);
  EXPECT_NEAR(l.total, 0.5 * std::log(2.0), 1e-15);
}

TEST(Loss, ConcentricHalfSizeBox) {
  auto raw = zero_raw();
  LabelSet labels;
  labels.add({0.375, 0.375, 0.2, 0.2}, ObjectKind::stop_sign);
  const int cell = assigned_cell(labels.boxes[0], 4);
  ASSERT_EQ(cell, 5);
  raw.cell(cell)[2] = logit(0.1);
  raw.cell(cell)[3] = logit(0.1);
  const Box pred = cell_box(raw.cell(cell), cell, 4);
  EXPECT_NEAR(pred.cx, 0.375, 1e-15);
  EXPECT_NEAR(ciou(pred, labels.boxes[0]), 0.25, 1e-12);
  EXPECT_NEAR(detection_loss(raw, labels, LossWeights{}).l_ciou, 0.75, 1e-12);
}

TEST(Loss, PerfectPredictionApproachesZero) {
  auto raw = zero_raw();
  LabelSet labels;
  labels.add({0.375, 0.625, 0.2, 0.3}, ObjectKind::vehicle);
  const int cell = assigned_cell(labels.boxes[0], 4);
  for (int c = 0; c < raw.cells(); ++c) {
    double* a = raw.cell(c);
    a[4] = c == cell ? 40.0 : -40.0;
    for (int k = 0; k < kNumClasses; ++k) a[5 + k] = k == 0 ? 40.0 : -40.0;
  }
  raw.cell(cell)[2] = logit(0.2);
  raw.cell(cell)[3] = logit(0.3);
  const auto l = detection_loss(raw, labels, LossWeights{});
  EXPECT_GE(l.total, 0.0);
  EXPECT_LT(l.total, 1e-12);
}

TEST(LossProperty, DecompositionIdentity) {
  Rng rng(21);
  for (int i = 0; i < 200; ++i) {
    auto raw = zero_raw();
    for (auto& v : raw.values) v = rng.uniform(-4, 4);
    const LossWeights w{rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(0, 10)};
    const auto l = detection_loss(raw, random_labels(1000 + i), w);
    EXPECT_EQ(l.total, w.lambda_box * l.l_ciou + w.lambda_cls * l.l_bce + w.lambda_dfl * l.l_dfl);
    EXPECT_GE(l.l_bce, 0.0);
    EXPECT_GE(l.l_ciou, 0.0);
    EXPECT_LT(l.l_ciou, 2.0);
  }
}

TEST(Loss, RejectsNegativeWeights) {
  EXPECT_THROW(detection_loss(zero_raw(), LabelSet{}, LossWeights{-1, 0.5, 0}), Error);
}

TEST(Ciou, Examples) {
  const Box a{0.5, 0.5, 0.2, 0.2};
  EXPECT_EQ(ciou(a, a), 1.0);
  EXPECT_NEAR(ciou({0.5, 0.5, 0.1, 0.1}, a), 0.25, 1e-12);
  const double far = ciou({0.1, 0.1, 0.05, 0.05}, {0.9, 0.9, 0.05, 0.05});
  EXPECT_LT(far, 0.0);
  // rho^2 = 1.28, enclosing diagonal^2 = 2 * 0.85^2
  EXPECT_NEAR(far, -1.28 / (2 * 0.85 * 0.85), 1e-12);
  EXPECT_THROW(ciou({0.5, 0.5, 0.0, 0.1}, a), Error);
}

TEST(CiouProperty, MatchesDirectFormula) {
  Rng rng(22);
  for (int i = 0; i < 1000; ++i) {
    const Box a = random_box(rng), b = random_box(rng);
    const double c = ciou(a, b);
    EXPECT_NEAR(c, ciou_oracle(a, b), 1e-12);
    EXPECT_GT(c, -1.0);
    EXPECT_LE(c, 1.0);
    EXPECT_DOUBLE_EQ(ciou(a, a), 1.0);
  }
}

TEST(CiouProperty, SymmetricForEqualSizes) {
  Rng rng(23);
  for (int i = 0; i < 500; ++i) {
    const Box a = random_box(rng);
    const Box b{rng.uniform(0, 1), rng.uniform(0, 1), a.w, a.h};
    EXPECT_NEAR(ciou(a, b), ciou(b, a), 1e-14);
  }
}

TEST(CiouProperty, GradientMatchesFiniteDifferences) {
  Rng rng(24);
  int checked = 0;
  for (int i = 0; i < 300; ++i) {
    const Box a = random_box(rng), b = random_box(rng);
    const auto g = ciou_with_grad(a, b);
    EXPECT_EQ(g.value, ciou(a, b));
    for (int j = 0; j < 4; ++j) {
      const double h = 1e-6;
      Box p = a, m = a;
      (&p.cx)[j] += h;
      (&m.cx)[j] -= h;
      const double num = (ciou(p, b) - ciou(m, b)) / (2 * h);
      const double fwd = (ciou(p, b) - g.value) / h, bwd = (g.value - ciou(m, b)) / h;
      if (std::abs(fwd - bwd) > 1e-3 * std::max(1.0, std::abs(num))) continue;  // min/max kink
      EXPECT_NEAR(g.grad[static_cast<std::size_t>(j)], num, 1e-5 * std::max(1.0, std::abs(num)));
      ++checked;
    }
  }
  EXPECT_GT(checked, 1000);
}

TEST(InputGradient, ZeroNetworkHasZeroGradient) {
  const ModelParams zero{DetectorConfig{}};
  const auto g = input_gradient(zero, random_image(5), random_labels(5, 3), LossWeights{});
  for (double v : g.grad.values()) EXPECT_EQ(v, 0.0);
}

TEST(InputGradient, MatchesFiniteDifferences) {
  int smooth = 0, total = 0;
  for (std::uint64_t c = 0; c < 20; ++c) {
    const auto theta = init_params(DetectorConfig{}, 300 + c);
    const auto img = random_image(400 + c);
    LabelSet labels = random_labels(500 + c);
    if (labels.size() == 0) labels.add({0.4, 0.6, 0.2, 0.15}, ObjectKind::stop_sign);
    const auto g = input_gradient(theta, img, labels, LossWeights{});
    Rng rng(600 + c);
    for (int k = 0; k < 20; ++k) {
      const std::size_t i = rng.below(img.size());
      const auto probe = fd_input(theta, img, labels, LossWeights{}, g.grad, i);
      ++total;
      if (!probe.smooth) continue;
      ++smooth;
      EXPECT_LT(probe.rel_error(), 1e-4) << "case " << c << " pixel " << i << " analytic " << probe.analytic
                                         << " numeric " << probe.numeric;
    }
  }
  EXPECT_GE(smooth, total * 9 / 10);
}

TEST(InputGradient, SmoothnessProbe) {
  const auto theta = init_params(DetectorConfig{}, 7);
  const auto img = random_image(8);
  const auto labels = random_labels(9);
  ImageTensor moved = img;
  for (auto& v : moved.values()) v += 1e-9;
  const auto a = input_gradient(theta, img, labels, LossWeights{});
  const auto b = input_gradient(theta, moved, labels, LossWeights{});
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(a.grad.values()[i], b.grad.values()[i], 1e-6);
}

TEST(ParamGradient, MatchesFiniteDifferences) {
  int smooth = 0, total = 0;
  for (std::uint64_t c = 0; c < 10; ++c) {
    const auto theta = init_params(DetectorConfig{}, 700 + c);
    Dataset one{{0, random_image(800 + c), random_labels(900 + c)}};
    if (one[0].labels.size() == 0) one[0].labels.add({0.7, 0.3, 0.1, 0.25}, ObjectKind::traffic_light);
    const auto g = param_gradient(theta, one, LossWeights{});
    Rng rng(1000 + c);
    for (int k = 0; k < 20; ++k) {
      const std::size_t i = rng.below(theta.size());
      const auto probe = fd_param(theta, one[0].image, one[0].labels, LossWeights{}, g.grad, i);
      ++total;
      if (!probe.smooth) continue;
      ++smooth;
      EXPECT_LT(probe.rel_error(), 1e-4) << "case " << c << " param " << i << " analytic " << probe.analytic
                                         << " numeric " << probe.numeric;
    }
  }
  EXPECT_GE(smooth, total * 8 / 10);
}

TEST(ParamGradient, DuplicatedBatchMatchesSingle) {
  const auto theta = init_params(DetectorConfig{}, 11);
  const Sample s{0, random_image(12), random_labels(13)};
  const auto one = param_gradient(theta, Dataset{s}, LossWeights{});
  const auto two = param_gradient(theta, Dataset{s, s}, LossWeights{});
  EXPECT_NEAR(one.mean_loss, two.mean_loss, 1e-15);
  for (std::size_t i = 0; i < one.grad.size(); ++i) EXPECT_NEAR(one.grad[i], two.grad[i], 1e-15);
}

TEST(ParamGradient, ZeroLambdasGiveZeroGradient) {
  const auto theta = init_params(DetectorConfig{}, 14);
  const auto g = param_gradient(theta, tiny_dataset(15, 3), LossWeights{0, 0, 0});
  EXPECT_EQ(g.mean_loss, 0.0);
  for (double v : g.grad) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(param_gradient(theta, Dataset{}, LossWeights{}), Error);
}

TEST(Train, ZeroLearningRateKeepsInitialization) {
  TrainParams p;
  p.epochs = 2;
  p.learning_rate = 0.0;
  p.seed = 3;
  const auto r = train(tiny_dataset(16, 40), p);
  EXPECT_EQ(r.params, init_params(p.detector, derive_seed(3, 1)));
  EXPECT_EQ(r.loss_curve.size(), 2u);
}

TEST(Train, SameSeedSameResult) {
  TrainParams p;
  p.epochs = 3;
  p.seed = 4;
  const auto data = tiny_dataset(17, 40);
  const auto a = train(data, p), b = train(data, p);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.loss_curve, b.loss_curve);
  p.seed = 5;
  EXPECT_NE(train(data, p).params, a.params);
}

TEST(Train, LossFallsOnTinyProblem) {
  TrainParams p;
  p.epochs = 15;
  p.batch_size = 8;
  const auto r = train(tiny_dataset(18, 16), p);
  EXPECT_LT(r.loss_curve.back(), r.loss_curve.front());
}

TEST(Train, DivergenceAborts) {
  TrainParams p;
  p.epochs = 20;
  p.learning_rate = 1e6;
  p.grad_clip = 0.0;
  p.cosine_decay = false;
  try {
    train(tiny_dataset(19, 32), p);
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numerical) << e.what();
  }
}

TEST(Decode, ConfidenceIsObjectnessTimesSoftmaxMax) {
  auto raw = zero_raw();
  double* a = raw.cell(6);
  a[4] = 2.0;
  a[5 + 1] = 1.0;
  a[5 + 2] = 0.5;
  const auto dets = decode(raw, {0.3, 0.5});
  ASSERT_EQ(dets.size(), 1u);
  const double z = 2.0 + std::exp(1.0) + std::exp(0.5);
  EXPECT_NEAR(dets[0].confidence, sigmoid(2.0) * std::exp(1.0) / z, 1e-12);
  EXPECT_EQ(dets[0].class_id, 1);
  EXPECT_EQ(dets[0].cell, 6);
}

TEST(Decode, LowObjectnessGivesNothing) {
  auto raw = zero_raw();
  for (int c = 0; c < raw.cells(); ++c) {
    raw.cell(c)[4] = -20.0;
    raw.cell(c)[5] = 20.0;
  }
  EXPECT_TRUE(decode(raw).empty());
}

TEST(Decode, ThresholdsMustBeInUnitInterval) {
  EXPECT_THROW(decode(zero_raw(), {1.5, 0.5}), Error);
  EXPECT_THROW(decode(zero_raw(), {0.25, -0.1}), Error);
}

TEST(Nms, OverlapPointSixKeepsHigher) {
  // Equal squares of side w shifted by w/4 have IoU (w - dx)/(w + dx) = 0.6.
  const Detection a{{0.5, 0.5, 0.2, 0.2}, 1, 0.8, 5};
  const Detection b{{0.55, 0.5, 0.2, 0.2}, 1, 0.9, 6};
  ASSERT_NEAR(iou(a.box, b.box), 0.6, 1e-12);
  const auto kept = non_max_suppression({a, b}, 0.5);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].confidence, 0.9);
}

TEST(Nms, OverlapPointThreeKeepsBoth) {
  const double dx = 0.2 * 0.7 / 1.3;
  const Detection a{{0.5, 0.5, 0.2, 0.2}, 0, 0.9, 5};
  const Detection b{{0.5 + dx, 0.5, 0.2, 0.2}, 0, 0.8, 6};
  ASSERT_NEAR(iou(a.box, b.box), 0.3, 1e-12);
  EXPECT_EQ(non_max_suppression({a, b}, 0.5).size(), 2u);
}

TEST(Nms, EqualConfidenceFavoursLowerCell) {
  const Detection a{{0.5, 0.5, 0.2, 0.2}, 0, 0.7, 9};
  const Detection b{{0.52, 0.5, 0.2, 0.2}, 0, 0.7, 4};
  const auto kept = non_max_suppression({a, b}, 0.5);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].cell, 4);
}

TEST(NmsProperty, PermutationInvariant) {
  Rng rng(25);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Detection> cands;
    for (int c = 0; c < 16; ++c) {
      const Box b{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.4)};
      // coarse confidences so ties happen
      cands.push_back({b, static_cast<int>(rng.below(4)), 0.25 + 0.05 * static_cast<double>(rng.below(5)), c});
    }
    const auto ref = non_max_suppression(cands, 0.5);
    rng.shuffle(cands);
    EXPECT_EQ(non_max_suppression(cands, 0.5), ref);
    for (std::size_t i = 0; i < ref.size(); ++i)
      for (std::size_t j = i + 1; j < ref.size(); ++j) EXPECT_LT(iou(ref[i].box, ref[j].box), 0.5);
  }
}

TEST(DecodeProperty, BoxesInsideImageAndAboveThreshold) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto theta = init_params(DetectorConfig{}, 40 + s);
    for (const auto& d : decode(forward(theta, random_image(90 + s)), {0.1, 0.5})) {
      EXPECT_GE(d.confidence, 0.1);
      EXPECT_GE(d.box.x0(), -1e-12);
      EXPECT_LE(d.box.x1(), 1 + 1e-12);
      EXPECT_GE(d.box.y0(), -1e-12);
      EXPECT_LE(d.box.y1(), 1 + 1e-12);
    }
  }
}

TEST(Checkpoint, RoundTrip) {
  TempDir dir("ckpt");
  const Checkpoint c{init_params(DetectorConfig{}, 31), true};
  save_checkpoint(c, dir.path() / "m.adnn");
  const auto back = load_trained(dir.path() / "m.adnn");
  EXPECT_EQ(back, c.params);
  EXPECT_EQ(encode_checkpoint(c), encode_checkpoint({back, true}));
}

TEST(Checkpoint, UntrainedAndMissingAreDistinct) {
  TempDir dir("ckpt2");
  save_checkpoint({init_params(DetectorConfig{}, 32), false}, dir.path() / "u.adnn");
  try {
    load_trained(dir.path() / "u.adnn");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::untrained_model);
  }
  try {
    load_trained(dir.path() / "none.adnn");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::missing_input);
  }
}

TEST(Checkpoint, CorruptBytesRejected) {
  Bytes b = encode_checkpoint({init_params(DetectorConfig{}, 33), true});
  Bytes bad_magic = b;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), Error);
  Bytes truncated(b.begin(), b.end() - 3);
  EXPECT_THROW(decode_checkpoint(truncated), Error);
  Bytes trailing = b;
  trailing.push_back(0);
  EXPECT_THROW(decode_checkpoint(trailing), Error);
}
