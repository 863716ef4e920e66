#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "advloop/core/config.hpp"
#include "advloop/loop/episode.hpp"
#include "advloop/metrics/evaluation.hpp"
#include "advloop/perception/train.hpp"
#include "advloop/scene/track.hpp"

namespace advloop {

struct TrackConfig {
  std::string preset = "rect-3x2";  // or "polyline"
  RectTrackParams rect;
  std::vector<double> polyline;     // x0,y0,x1,y1,... when preset = polyline
  std::vector<double> stop_arcs;    // three arc positions (polyline only)
  double light_arc = 0.0;           // polyline only
};

struct DatasetConfig {
  std::size_t n = 2400;
  double train_fraction = 0.7;
  std::uint64_t seed = 1;
};

struct EvalGrid {
  std::vector<double> epsilons{0.01, 0.02, 0.04};
  std::vector<std::string> attacks{"fgsm", "pgd"};
  std::vector<double> delays_ms{100, 150, 250};
  std::vector<double> losses_pct{0.5, 2, 5};
  double lateral_rms_gate = 0.05;
};

/// Everything a run needs; every field has a default and a config key.
struct ExperimentConfig {
  TrackConfig track;
  SceneSamplingParams sampling;
  RenderParams render;
  DatasetConfig dataset;
  TrainParams train;
  AttackConfig attack{AttackKind::none, 0.0, 0.01, 10, false};
  LoopConfig loop;
  EvalParams eval;
  ComplianceParams compliance;
  EvalGrid grid;

  TrackSpec make_track() const {
    if (track.preset == "rect-3x2") return make_rect_track(track.rect);
    if (track.preset == "polyline") {
      if (track.polyline.size() < 6 || track.polyline.size() % 2 != 0)
        fail(ErrorKind::invalid_config, "scene.polyline needs at least three x,y pairs");
      if (track.stop_arcs.size() != 3) fail(ErrorKind::invalid_config, "scene.stop_arcs needs exactly three values");
      std::vector<Vec2> pts;
      for (std::size_t i = 0; i < track.polyline.size(); i += 2) pts.push_back({track.polyline[i], track.polyline[i + 1]});
      TrafficLightSpec light = track.rect.light;
      light.arc_s = track.light_arc;
      try {
        return TrackSpec::from_polyline(std::move(pts), track.rect.lane_width,
                                        {track.stop_arcs[0], track.stop_arcs[1], track.stop_arcs[2]}, light,
                                        track.rect.signs);
      } catch (const Error& e) {
        fail(ErrorKind::invalid_config, std::string("scene: ") + e.what());
      }
    }
    fail(ErrorKind::invalid_config, "scene.track must be rect-3x2 or polyline");
  }

  /// Propagates shared settings into the nested structs before use.
  void finalize() {
    loop.render = render;
    loop.attack = attack;
    loop.decode = eval.decode;
    loop.weights = train.weights;
    eval.weights = train.weights;
  }

  /// One seed for everything; the downlink gets seed + 1.
  void override_seed(std::uint64_t s) {
    dataset.seed = s;
    train.seed = s;
    loop.seed = s;
    eval.seed = s;
    loop.uplink.seed = s;
    loop.downlink.seed = s + 1;
  }

  void validate() const {
    make_track();
    try {
      render.validate();
      attack.validate();
      train.detector.validate();
    } catch (const Error& e) {
      fail(ErrorKind::invalid_config, e.what());
    }
    if (dataset.n < 10) fail(ErrorKind::invalid_config, "render.n must be >= 10");
    if (!(dataset.train_fraction > 0.0 && dataset.train_fraction < 1.0))
      fail(ErrorKind::invalid_config, "render.train_fraction must be in (0, 1)");
    if (train.epochs < 0 || train.batch_size <= 0 || !(train.learning_rate >= 0.0))
      fail(ErrorKind::invalid_config, "model: epochs >= 0, batch_size > 0, learning_rate >= 0 required");
    if (train.detector.height != render.height || train.detector.width != render.width)
      fail(ErrorKind::invalid_config, "render size must match the detector input size");
    for (const auto& a : grid.attacks)
      if (parse_attack_kind(a) == AttackKind::none) fail(ErrorKind::invalid_config, "eval.attacks lists only fgsm/pgd");
    for (double e : grid.epsilons)
      if (!(e >= 0.0)) fail(ErrorKind::invalid_config, "eval.epsilons must be >= 0");
    for (double l : grid.losses_pct)
      if (!(l >= 0.0 && l <= 100.0)) fail(ErrorKind::invalid_config, "eval.losses_pct must be in [0, 100]");
    for (double d : grid.delays_ms)
      if (!(d >= 0.0)) fail(ErrorKind::invalid_config, "eval.delays_ms must be >= 0");
    try {
      loop.validate();
    } catch (const Error& e) {
      fail(ErrorKind::invalid_config, e.what());
    }
  }
};

namespace detail {

struct Binding {
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename Field>
Binding bind_double(Field f) {
  return {[f](ExperimentConfig& c, const std::string& k, const std::string& v) { f(c) = parse_double(k, v); },
          [f](const ExperimentConfig& c) { return format_double(f(const_cast<ExperimentConfig&>(c))); }};
}

template <typename Field>
Binding bind_int(Field f) {
  return {[f](ExperimentConfig& c, const std::string& k, const std::string& v) {
            using T = std::remove_reference_t<decltype(f(c))>;
            const long long n = parse_int(k, v);
            if constexpr (std::is_unsigned_v<T>)
              if (n < 0) fail(ErrorKind::invalid_config, k + " must be >= 0");
            f(c) = static_cast<T>(n);
          },
          [f](const ExperimentConfig& c) { return std::to_string(f(const_cast<ExperimentConfig&>(c))); }};
}

template <typename Field>
Binding bind_u64(Field f) {
  return {[f](ExperimentConfig& c, const std::string& k, const std::string& v) { f(c) = parse_u64(k, v); },
          [f](const ExperimentConfig& c) { return std::to_string(f(const_cast<ExperimentConfig&>(c))); }};
}

template <typename Field>
Binding bind_bool(Field f) {
  return {[f](ExperimentConfig& c, const std::string& k, const std::string& v) { f(c) = parse_bool(k, v); },
          [f](const ExperimentConfig& c) { return std::string(f(const_cast<ExperimentConfig&>(c)) ? "true" : "false"); }};
}

template <typename Field>
Binding bind_list(Field f) {
  return {[f](ExperimentConfig& c, const std::string& k, const std::string& v) { f(c) = parse_double_list(k, v); },
          [f](const ExperimentConfig& c) { return format_double_list(f(const_cast<ExperimentConfig&>(c))); }};
}

inline void add_network_keys(std::map<std::string, Binding>& m, const std::string& prefix,
                             NetworkCondition& (*sel)(ExperimentConfig&)) {
  m[prefix + "delay_ms"] = bind_double([sel](ExperimentConfig& c) -> double& { return sel(c).delay_ms; });
  m[prefix + "jitter_ms"] = bind_double([sel](ExperimentConfig& c) -> double& { return sel(c).jitter_ms; });
  m[prefix + "loss_prob"] = bind_double([sel](ExperimentConfig& c) -> double& { return sel(c).loss_prob; });
  m[prefix + "seed"] = bind_u64([sel](ExperimentConfig& c) -> std::uint64_t& { return sel(c).seed; });
}

// Impact-stage scenario keys: net.scenario.impact_s < 0 disables it.
struct ScenarioKeys {
  static double& impact(ExperimentConfig& c) {
    ensure(c);
    return c.loop.scenario->stages.back().time_s;
  }
  static NetworkCondition& cond(ExperimentConfig& c) {
    ensure(c);
    return c.loop.scenario->impact_condition;
  }
  static void ensure(ExperimentConfig& c) {
    if (!c.loop.scenario) {
      c.loop.scenario = AdversaryScenario{};
      c.loop.scenario->stages = {{StageKind::reconnaissance, 0.0, "network scan of the vehicle-cloud link"},
                                 {StageKind::discovery, 0.0, "protocol identified by its magic bytes"},
                                 {StageKind::impact, 0.0, "impairment applied"}};
    }
  }
};

#define ADV_FIELD(type, expr) [](ExperimentConfig& c) -> type& { return expr; }

inline const std::map<std::string, Binding>& bindings() {
  static const std::map<std::string, Binding> table = [] {
    std::map<std::string, Binding> m;
    m["scene.track"] = {[](ExperimentConfig& c, const std::string&, const std::string& v) { c.track.preset = v; },
                        [](const ExperimentConfig& c) { return c.track.preset; }};
    m["scene.width"] = bind_double(ADV_FIELD(double, c.track.rect.width));
    m["scene.height"] = bind_double(ADV_FIELD(double, c.track.rect.height));
    m["scene.fillet_radius"] = bind_double(ADV_FIELD(double, c.track.rect.fillet_radius));
    m["scene.fillet_segments"] = bind_int(ADV_FIELD(int, c.track.rect.fillet_segments));
    m["scene.lane_width"] = bind_double(ADV_FIELD(double, c.track.rect.lane_width));
    m["scene.stop_setback"] = bind_double(ADV_FIELD(double, c.track.rect.stop_setback));
    m["scene.polyline"] = bind_list(ADV_FIELD(std::vector<double>, c.track.polyline));
    m["scene.stop_arcs"] = bind_list(ADV_FIELD(std::vector<double>, c.track.stop_arcs));
    m["scene.light_arc"] = bind_double(ADV_FIELD(double, c.track.light_arc));
    m["scene.light_red_s"] = bind_double(ADV_FIELD(double, c.track.rect.light.red_duration));
    m["scene.light_green_s"] = bind_double(ADV_FIELD(double, c.track.rect.light.green_duration));
    m["scene.light_phase_s"] = bind_double(ADV_FIELD(double, c.track.rect.light.phase_offset));
    m["scene.sign_ahead"] = bind_double(ADV_FIELD(double, c.track.rect.signs.ahead));
    m["scene.sign_clearance"] = bind_double(ADV_FIELD(double, c.track.rect.signs.side_clearance));
    m["scene.max_vehicles"] = bind_int(ADV_FIELD(int, c.sampling.max_vehicles));
    m["scene.approach_bias"] = bind_double(ADV_FIELD(double, c.sampling.approach_bias));
    m["scene.vehicle_bias"] = bind_double(ADV_FIELD(double, c.sampling.vehicle_bias));
    m["scene.light_weight"] = bind_double(ADV_FIELD(double, c.sampling.light_weight));

    m["render.width"] = bind_int(ADV_FIELD(int, c.render.width));
    m["render.height"] = bind_int(ADV_FIELD(int, c.render.height));
    m["render.camera_fov"] = bind_double(ADV_FIELD(double, c.render.camera_fov));
    m["render.horizon_row"] = bind_double(ADV_FIELD(double, c.render.horizon_row));
    m["render.camera_height"] = bind_double(ADV_FIELD(double, c.render.camera_height));
    m["render.noise_sigma"] = bind_double(ADV_FIELD(double, c.render.noise_sigma));
    m["render.marking_width"] = bind_double(ADV_FIELD(double, c.render.marking_width));
    m["render.min_box_px"] = bind_int(ADV_FIELD(int, c.render.min_box_px));
    m["render.n"] = bind_int(ADV_FIELD(std::size_t, c.dataset.n));
    m["render.train_fraction"] = bind_double(ADV_FIELD(double, c.dataset.train_fraction));
    m["render.seed"] = bind_u64(ADV_FIELD(std::uint64_t, c.dataset.seed));

    m["model.epochs"] = bind_int(ADV_FIELD(int, c.train.epochs));
    m["model.learning_rate"] = bind_double(ADV_FIELD(double, c.train.learning_rate));
    m["model.momentum"] = bind_double(ADV_FIELD(double, c.train.momentum));
    m["model.batch_size"] = bind_int(ADV_FIELD(int, c.train.batch_size));
    m["model.cosine_decay"] = bind_bool(ADV_FIELD(bool, c.train.cosine_decay));
    m["model.grad_clip"] = bind_double(ADV_FIELD(double, c.train.grad_clip));
    m["model.seed"] = bind_u64(ADV_FIELD(std::uint64_t, c.train.seed));
    m["model.lambda_box"] = bind_double(ADV_FIELD(double, c.train.weights.lambda_box));
    m["model.lambda_cls"] = bind_double(ADV_FIELD(double, c.train.weights.lambda_cls));
    m["model.lambda_dfl"] = bind_double(ADV_FIELD(double, c.train.weights.lambda_dfl));
    m["model.grid"] = bind_int(ADV_FIELD(int, c.train.detector.grid));

    m["attack.kind"] = {[](ExperimentConfig& c, const std::string&, const std::string& v) { c.attack.kind = parse_attack_kind(v); },
                        [](const ExperimentConfig& c) { return std::string(attack_name(c.attack.kind)); }};
    m["attack.epsilon"] = bind_double(ADV_FIELD(double, c.attack.epsilon));
    m["attack.step_size"] = bind_double(ADV_FIELD(double, c.attack.step_size));
    m["attack.iterations"] = bind_int(ADV_FIELD(int, c.attack.iterations));
    m["attack.random_start"] = bind_bool(ADV_FIELD(bool, c.attack.random_start));

    add_network_keys(m, "net.uplink.", +[](ExperimentConfig& c) -> NetworkCondition& { return c.loop.uplink; });
    add_network_keys(m, "net.downlink.", +[](ExperimentConfig& c) -> NetworkCondition& { return c.loop.downlink; });
    m["net.scenario.impact_s"] = {
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {
          const double t = parse_double(k, v);
          if (t < 0.0) {
            c.loop.scenario.reset();
            return;
          }
          ScenarioKeys::impact(c) = t;
        },
        [](const ExperimentConfig& c) {
          return c.loop.scenario ? format_double(c.loop.scenario->impact_time()) : std::string("-1");
        }};
    for (const char* f : {"delay_ms", "jitter_ms", "loss_prob"}) {
      const std::string field = f;
      m["net.scenario." + field] = {
          [field](ExperimentConfig& c, const std::string& k, const std::string& v) {
            auto& n = ScenarioKeys::cond(c);
            const double d = parse_double(k, v);
            (field == "delay_ms" ? n.delay_ms : field == "jitter_ms" ? n.jitter_ms : n.loss_prob) = d;
          },
          [field](const ExperimentConfig& c) {
            const NetworkCondition n = c.loop.scenario ? c.loop.scenario->impact_condition : NetworkCondition{};
            return format_double(field == "delay_ms" ? n.delay_ms : field == "jitter_ms" ? n.jitter_ms : n.loss_prob);
          }};
    }

    m["control.kp"] = bind_double(ADV_FIELD(double, c.loop.control.pid.kp));
    m["control.ki"] = bind_double(ADV_FIELD(double, c.loop.control.pid.ki));
    m["control.kd"] = bind_double(ADV_FIELD(double, c.loop.control.pid.kd));
    m["control.integral_limit"] = bind_double(ADV_FIELD(double, c.loop.control.pid.integral_limit));
    m["control.v_cruise"] = bind_double(ADV_FIELD(double, c.loop.control.v_cruise));
    m["control.v_max"] = bind_double(ADV_FIELD(double, c.loop.control.v_max));
    m["control.omega_max"] = bind_double(ADV_FIELD(double, c.loop.control.omega_max));
    m["control.near_height"] = bind_double(ADV_FIELD(double, c.loop.control.near_height));
    m["control.stop_confidence"] = bind_double(ADV_FIELD(double, c.loop.control.stop_confidence));
    m["control.light_confidence"] = bind_double(ADV_FIELD(double, c.loop.control.light_confidence));
    m["control.stop_duration"] = bind_double(ADV_FIELD(double, c.loop.control.stop_duration));
    m["control.stop_cooldown"] = bind_double(ADV_FIELD(double, c.loop.control.stop_cooldown));
    m["control.sign_forget"] = bind_double(ADV_FIELD(double, c.loop.control.sign_forget));
    m["control.lane_tolerance"] = bind_double(ADV_FIELD(double, c.loop.control.lane.color_tolerance));
    m["control.lane_min_pixels"] = bind_int(ADV_FIELD(int, c.loop.control.lane.min_pixels));

    m["loop.tick_dt"] = bind_double(ADV_FIELD(double, c.loop.tick_dt));
    m["loop.frame_period"] = bind_double(ADV_FIELD(double, c.loop.frame_period));
    m["loop.duration"] = bind_double(ADV_FIELD(double, c.loop.episode_duration));
    m["loop.start_arc"] = bind_double(ADV_FIELD(double, c.loop.start_arc));
    m["loop.seed"] = bind_u64(ADV_FIELD(std::uint64_t, c.loop.seed));
    m["loop.transport"] = {
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {
          if (v == "simulated") c.loop.transport = Transport::simulated;
          else if (v == "tcp") c.loop.transport = Transport::tcp;
          else fail(ErrorKind::invalid_config, k + " must be simulated or tcp");
        },
        [](const ExperimentConfig& c) {
          return std::string(c.loop.transport == Transport::tcp ? "tcp" : "simulated");
        }};

    m["eval.conf_threshold"] = bind_double(ADV_FIELD(double, c.eval.decode.conf_threshold));
    m["eval.nms_iou"] = bind_double(ADV_FIELD(double, c.eval.decode.nms_iou));
    m["eval.match_iou"] = bind_double(ADV_FIELD(double, c.eval.match_iou));
    m["eval.seed"] = bind_u64(ADV_FIELD(std::uint64_t, c.eval.seed));
    m["eval.epsilons"] = bind_list(ADV_FIELD(std::vector<double>, c.grid.epsilons));
    m["eval.attacks"] = {
        [](ExperimentConfig& c, const std::string&, const std::string& v) { c.grid.attacks = split_list(v); },
        [](const ExperimentConfig& c) {
          std::string out;
          for (std::size_t i = 0; i < c.grid.attacks.size(); ++i) out += (i ? "," : "") + c.grid.attacks[i];
          return out;
        }};
    m["eval.delays_ms"] = bind_list(ADV_FIELD(std::vector<double>, c.grid.delays_ms));
    m["eval.losses_pct"] = bind_list(ADV_FIELD(std::vector<double>, c.grid.losses_pct));
    m["eval.lateral_rms_gate"] = bind_double(ADV_FIELD(double, c.grid.lateral_rms_gate));
    m["eval.stop_max_speed"] = bind_double(ADV_FIELD(double, c.compliance.max_speed));
    m["eval.stop_min_dwell"] = bind_double(ADV_FIELD(double, c.compliance.min_dwell));
    m["eval.stop_zone"] = bind_double(ADV_FIELD(double, c.compliance.zone));
    return m;
  }();
  return table;
}

#undef ADV_FIELD

}  // namespace detail

/// Applies key/value pairs; unknown keys are rejected. net.scenario.impact_s
/// goes last so that a negative value disables the scenario whatever other
/// net.scenario.* keys are present.
inline void apply_config(ExperimentConfig& cfg, const std::map<std::string, std::string>& kv) {
  const auto& table = detail::bindings();
  const std::string last = "net.scenario.impact_s";
  for (const auto& [k, v] : kv) {
    if (!table.count(k)) fail(ErrorKind::invalid_config, "unknown config key '" + k + "'");
    if (k != last) table.at(k).set(cfg, k, v);
  }
  if (const auto it = kv.find(last); it != kv.end()) table.at(last).set(cfg, last, it->second);
}

inline ExperimentConfig config_from_text(const std::string& text) {
  ExperimentConfig cfg;
  apply_config(cfg, parse_key_values(text));
  cfg.finalize();
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  ExperimentConfig cfg;
  apply_config(cfg, read_key_value_file(path));
  cfg.finalize();
  cfg.validate();
  return cfg;
}

/// Every key with its current value, one "key = value" line each.
inline std::string dump_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [k, b] : detail::bindings()) out += k + " = " + b.get(cfg) + "\n";
  return out;
}

}  // namespace advloop
