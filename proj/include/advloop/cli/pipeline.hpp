#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "advloop/cli/experiment.hpp"
#include "advloop/cli/svg.hpp"
#include "advloop/core/bytes.hpp"
#include "advloop/perception/checkpoint.hpp"

namespace advloop {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- metrics.csv

struct MetricsRow {
  std::string scenario;
  std::string attack = "none";
  double epsilon = 0.0;
  double delay_ms = 0.0;
  double loss_pct = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  // Closed-loop columns; empty for detection-only rows.
  std::optional<double> lat_rms;
  std::optional<bool> lap_completed;
  std::optional<std::array<bool, 3>> stops;
};

inline constexpr const char* kMetricsHeader =
    "scenario,attack,epsilon,delay_ms,loss_pct,precision,recall,lat_rms,lap_completed,stop1,stop2,stop3";

inline std::string format_metrics(const std::vector<MetricsRow>& rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%.4f,%.1f,%.2f,%.6f,%.6f,", r.scenario.c_str(), r.attack.c_str(), r.epsilon,
                  r.delay_ms, r.loss_pct, r.precision, r.recall);
    out += buf;
    if (r.lat_rms) {
      std::snprintf(buf, sizeof buf, "%.6f", *r.lat_rms);
      out += buf;
    }
    out += ",";
    if (r.lap_completed) out += *r.lap_completed ? "1" : "0";
    for (int k = 0; k < 3; ++k) {
      out += ",";
      if (r.stops) out += (*r.stops)[static_cast<std::size_t>(k)] ? "1" : "0";
    }
    out += "\n";
  }
  return out;
}

inline std::vector<MetricsRow> parse_metrics(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || trim(line) != kMetricsHeader)
    fail(ErrorKind::missing_input, origin + ": not a metrics file (bad header)");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(trim(cell));
    while (f.size() < 12) f.emplace_back();
    if (f.size() != 12) fail(ErrorKind::missing_input, origin + ": expected 12 columns");
    MetricsRow r;
    r.scenario = f[0];
    r.attack = f[1];
    r.epsilon = parse_double(origin, f[2]);
    r.delay_ms = parse_double(origin, f[3]);
    r.loss_pct = parse_double(origin, f[4]);
    r.precision = parse_double(origin, f[5]);
    r.recall = parse_double(origin, f[6]);
    if (!f[7].empty()) r.lat_rms = parse_double(origin, f[7]);
    if (!f[8].empty()) r.lap_completed = f[8] == "1";
    if (!f[9].empty()) r.stops = std::array<bool, 3>{f[9] == "1", f[10] == "1", f[11] == "1"};
    rows.push_back(r);
  }
  return rows;
}

inline std::string read_text(const fs::path& p) {
  if (!fs::is_regular_file(p)) fail(ErrorKind::missing_input, "missing input: " + p.string());
  const auto b = read_file(p);
  return std::string(b.begin(), b.end());
}

inline void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_file(p, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// ------------------------------------------------------------------ training

inline std::string format_loss_curve(const std::vector<double>& curve) {
  std::string out = "epoch,loss\n";
  char buf[64];
  for (std::size_t e = 0; e < curve.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g\n", e, curve[e]);
    out += buf;
  }
  return out;
}

inline std::vector<double> parse_loss_curve(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  std::vector<double> out;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    out.push_back(parse_double(origin, trim(line.substr(comma + 1))));
  }
  return out;
}

/// Count of 5-epoch windows [e, e+4] whose last loss exceeds the first.
inline int loss_window_violations(const std::vector<double>& curve, std::size_t window = 5) {
  int n = 0;
  for (std::size_t e = 0; e + window <= curve.size(); ++e) n += curve[e + window - 1] > curve[e] ? 1 : 0;
  return n;
}

// ------------------------------------------------------------- attack grid

struct EvalCase {
  std::string scenario;
  AttackConfig attack;
};

/// Clean, then every attack at every epsilon, in config order.
inline std::vector<EvalCase> eval_cases(const ExperimentConfig& cfg) {
  std::vector<EvalCase> out;
  out.push_back({"clean", AttackConfig{}});
  for (const auto& name : cfg.grid.attacks)
    for (double eps : cfg.grid.epsilons) {
      AttackConfig a = cfg.attack;
      a.kind = parse_attack_kind(name);
      a.epsilon = eps;
      out.push_back({name + "_eps" + format_double(eps), a});
    }
  return out;
}

struct EvalOutcome {
  EvalCase c;
  DetectionReport report;
};

inline std::vector<EvalOutcome> run_eval_grid(const ExperimentConfig& cfg, const ModelParams& theta, const Dataset& test,
                                              const std::function<void(const EvalOutcome&)>& on_case = {}) {
  std::vector<EvalOutcome> out;
  for (const auto& c : eval_cases(cfg)) {
    EvalParams p = cfg.eval;
    p.attack = c.attack;
    out.push_back({c, evaluate_detection(theta, test, p)});
    if (on_case) on_case(out.back());
  }
  return out;
}

inline MetricsRow eval_row(const EvalOutcome& o) {
  MetricsRow r;
  r.scenario = o.c.scenario;
  r.attack = attack_name(o.c.attack.kind);
  r.epsilon = o.c.attack.epsilon;
  r.precision = o.report.pr.precision;
  r.recall = o.report.pr.recall;
  return r;
}

inline std::string format_confusion(const ConfusionMatrix& cm) {
  std::string out = "true\\pred";
  for (int j = 0; j < ConfusionMatrix::kSize; ++j)
    out += std::string(",") + (j < kNumClasses ? kind_name(static_cast<ObjectKind>(j)) : "background");
  out += "\n";
  for (int i = 0; i < ConfusionMatrix::kSize; ++i) {
    out += i < kNumClasses ? kind_name(static_cast<ObjectKind>(i)) : "background";
    for (int j = 0; j < ConfusionMatrix::kSize; ++j) out += "," + std::to_string(cm.counts[i][j]);
    out += "\n";
  }
  return out;
}

inline ConfusionMatrix parse_confusion(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  ConfusionMatrix cm;
  for (int i = 0; i < ConfusionMatrix::kSize; ++i) {
    if (!std::getline(in, line)) fail(ErrorKind::missing_input, origin + ": truncated confusion matrix");
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    for (int j = 0; j < ConfusionMatrix::kSize; ++j) {
      if (!std::getline(ss, cell, ',')) fail(ErrorKind::missing_input, origin + ": short confusion row");
      cm.counts[i][j] = parse_int(origin, trim(cell));
    }
  }
  return cm;
}

// ---------------------------------------------------------- impairment grid

struct RunCase {
  std::string scenario;
  double delay_ms = 0.0;  // per direction
  double loss_pct = 0.0;
  LoopConfig loop;
};

/// Baseline with the configured links, then each delay with no loss, then
/// each loss rate with no delay. Delay and loss apply to both directions.
inline std::vector<RunCase> run_cases(const ExperimentConfig& cfg) {
  std::vector<RunCase> out;
  RunCase base{"baseline", cfg.loop.uplink.delay_ms, cfg.loop.uplink.loss_prob * 100.0, cfg.loop};
  out.push_back(base);
  for (double d : cfg.grid.delays_ms) {
    RunCase c{"delay_" + format_double(d) + "ms", d, 0.0, cfg.loop};
    c.loop.uplink.delay_ms = c.loop.downlink.delay_ms = d;
    c.loop.uplink.loss_prob = c.loop.downlink.loss_prob = 0.0;
    out.push_back(c);
  }
  for (double l : cfg.grid.losses_pct) {
    RunCase c{"loss_" + format_double(l) + "pct", 0.0, l, cfg.loop};
    c.loop.uplink.delay_ms = c.loop.downlink.delay_ms = 0.0;
    c.loop.uplink.loss_prob = c.loop.downlink.loss_prob = l / 100.0;
    out.push_back(c);
  }
  return out;
}

struct RunOutcome {
  RunCase c;
  EpisodeLog log;
  ComplianceReport compliance;
  PrecisionRecall online;  // detections on the frames the cloud processed
};

inline PrecisionRecall online_precision_recall(const EpisodeLog& log) {
  long tp = 0, fp = 0, fn = 0;
  for (const auto& f : log.frames) {
    tp += f.tp;
    fp += f.fp;
    fn += f.fn;
  }
  return precision_recall_from_counts(tp, fp, fn);
}

inline RunOutcome run_case(const ExperimentConfig& cfg, const RunCase& c, const TrackSpec& track,
                           const ModelParams& theta) {
  RunOutcome o{c, run_episode(c.loop, track, theta), {}, {}};
  o.compliance = compliance(o.log, track, cfg.compliance);
  o.online = online_precision_recall(o.log);
  return o;
}

inline MetricsRow run_row(const RunOutcome& o) {
  MetricsRow r;
  r.scenario = o.c.scenario;
  r.attack = attack_name(o.c.loop.attack.kind);
  r.epsilon = o.c.loop.attack.epsilon;
  r.delay_ms = o.c.delay_ms;
  r.loss_pct = o.c.loss_pct;
  r.precision = o.online.precision;
  r.recall = o.online.recall;
  r.lat_rms = o.compliance.lateral_rms;
  r.lap_completed = o.compliance.lap_completed;
  r.stops = std::array<bool, 3>{o.compliance.stops[0].pass, o.compliance.stops[1].pass, o.compliance.stops[2].pass};
  return r;
}

/// (x, y) columns of a ticks.csv.
inline std::vector<std::pair<double, double>> parse_trajectory(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  std::vector<std::pair<double, double>> out;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string t, x, y;
    if (!std::getline(ss, t, ',') || !std::getline(ss, x, ',') || !std::getline(ss, y, ',')) continue;
    out.push_back({parse_double(origin, x), parse_double(origin, y)});
  }
  if (out.empty()) fail(ErrorKind::missing_input, origin + ": empty trajectory");
  return out;
}

// -------------------------------------------------------------------- report

struct ReportInputs {
  std::vector<MetricsRow> eval;
  std::vector<MetricsRow> run;
  std::vector<std::pair<std::string, ConfusionMatrix>> confusions;
  std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>> trajectories;
  std::vector<double> loss_curve;  // empty if training was not run in this directory
};

/// Everything is read before anything is written, so a missing input never
/// leaves partial plots behind.
inline ReportInputs load_report_inputs(const fs::path& dir) {
  ReportInputs in;
  const fs::path eval_csv = dir / "eval" / "metrics.csv", run_csv = dir / "run" / "metrics.csv";
  in.eval = parse_metrics(read_text(eval_csv), eval_csv.string());
  in.run = parse_metrics(read_text(run_csv), run_csv.string());
  if (in.eval.empty()) fail(ErrorKind::missing_input, eval_csv.string() + ": no rows");
  if (in.run.empty()) fail(ErrorKind::missing_input, run_csv.string() + ": no rows");
  for (const auto& r : in.eval) {
    const fs::path p = dir / "eval" / ("confusion_" + r.scenario + ".csv");
    in.confusions.push_back({r.scenario, parse_confusion(read_text(p), p.string())});
  }
  for (const auto& r : in.run) {
    const fs::path p = dir / "run" / r.scenario / "ticks.csv";
    in.trajectories.push_back({r.scenario, parse_trajectory(read_text(p), p.string())});
  }
  if (fs::exists(dir / "loss_curve.csv"))
    in.loss_curve = parse_loss_curve(read_text(dir / "loss_curve.csv"), (dir / "loss_curve.csv").string());
  return in;
}

inline std::string plot_pr_vs_epsilon(const std::vector<MetricsRow>& eval) {
  double p0 = 1.0, r0 = 1.0;
  std::vector<std::string> attacks;
  for (const auto& r : eval) {
    if (r.attack == "none") {
      p0 = r.precision;
      r0 = r.recall;
    } else if (std::find(attacks.begin(), attacks.end(), r.attack) == attacks.end()) {
      attacks.push_back(r.attack);
    }
  }
  std::vector<svg::Series> series;
  for (const auto& a : attacks) {
    svg::Series p{a + " precision", {{0.0, p0}}, nullptr}, rc{a + " recall", {{0.0, r0}}, "6,4"};
    for (const auto& r : eval)
      if (r.attack == a) {
        p.points.push_back({r.epsilon, r.precision});
        rc.points.push_back({r.epsilon, r.recall});
      }
    series.push_back(p);
    series.push_back(rc);
  }
  return svg::line_chart("Detection under attack", series, "epsilon", "score", 0.0, 1.0);
}

inline std::string plot_confusions(const std::vector<std::pair<std::string, ConfusionMatrix>>& cms) {
  const int k = ConfusionMatrix::kSize;
  const double cell = 34, pad = 40, panel_w = 110 + cell * k;
  svg::Document d(pad + panel_w * static_cast<double>(cms.size()), 130 + cell * k);
  d.text(10, 22, "Confusion matrices (rows: true class, columns: predicted; row-normalized)", 14);
  const char* abbrev[] = {"veh", "stop", "light", "inter", "bg"};
  for (std::size_t m = 0; m < cms.size(); ++m) {
    const double x0 = pad + 70 + panel_w * static_cast<double>(m), y0 = 80;
    d.text(x0 + cell * k / 2, 50, cms[m].first, 12, "middle");
    for (int j = 0; j < k; ++j) d.text(x0 + cell * (j + 0.5), y0 - 6, abbrev[j], 9, "middle");
    for (int i = 0; i < k; ++i) {
      d.text(x0 - 4, y0 + cell * (i + 0.6), abbrev[i], 9, "end");
      const long row = cms[m].second.row_sum(i);
      for (int j = 0; j < k; ++j) {
        const long v = cms[m].second.counts[i][j];
        const double frac = row > 0 ? static_cast<double>(v) / static_cast<double>(row) : 0.0;
        const int shade = static_cast<int>(255 - 200 * frac);
        char fill[16];
        std::snprintf(fill, sizeof fill, "#%02x%02xff", shade, shade);
        d.rect(x0 + cell * j, y0 + cell * i, cell, cell, fill, "#999");
        d.text(x0 + cell * (j + 0.5), y0 + cell * (i + 0.6), std::to_string(v), 9, "middle",
               frac > 0.6 ? "#fff" : "#000");
      }
    }
  }
  return d.str();
}

inline std::string plot_trajectories(
    const TrackSpec& track, const std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>>& trajs) {
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  auto extend = [&](double x, double y) {
    xmin = std::min(xmin, x), xmax = std::max(xmax, x), ymin = std::min(ymin, y), ymax = std::max(ymax, y);
  };
  for (const auto& p : track.centerline()) extend(p.x, p.y);
  for (const auto& [name, pts] : trajs)
    for (const auto& [x, y] : pts) extend(x, y);
  const double margin = 0.15;
  xmin -= margin, xmax += margin, ymin -= margin, ymax += margin;
  const double scale = std::min(560.0 / (xmax - xmin), 420.0 / (ymax - ymin));
  svg::Document d(60 + scale * (xmax - xmin) + 190, 70 + scale * (ymax - ymin));
  auto px = [&](double x) { return 30 + (x - xmin) * scale; };
  auto py = [&](double y) { return 50 + (ymax - y) * scale; };
  d.text(30, 24, "Vehicle trajectories by network condition", 14);
  std::vector<std::pair<double, double>> center;
  for (const auto& p : track.centerline()) center.push_back({px(p.x), py(p.y)});
  if (!center.empty()) center.push_back(center.front());
  d.polyline(center, "#bbb", 6.0);
  for (double s : track.stop_arc_s()) {
    const auto p = track.pose_at(s).position;
    d.circle(px(p.x), py(p.y), 4, "#d62728");
  }
  const double legend_x = 50 + scale * (xmax - xmin);
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    std::vector<std::pair<double, double>> pts;
    const auto& src = trajs[i].second;
    const std::size_t stride = std::max<std::size_t>(1, src.size() / 2000);
    for (std::size_t k = 0; k < src.size(); k += stride) pts.push_back({px(src[k].first), py(src[k].second)});
    d.polyline(pts, svg::palette(i), 1.2);
    d.line(legend_x, 60 + 18 * i, legend_x + 22, 60 + 18 * i, svg::palette(i), 2.0);
    d.text(legend_x + 28, 64 + 18 * i, trajs[i].first, 11);
  }
  return d.str();
}

inline std::string plot_loss_curve(const std::vector<double>& curve) {
  svg::Series s{"training loss", {}, nullptr};
  double top = 0.0;
  for (std::size_t e = 0; e < curve.size(); ++e) {
    s.points.push_back({static_cast<double>(e), curve[e]});
    top = std::max(top, curve[e]);
  }
  return svg::line_chart("Training loss", {s}, "epoch", "mean loss", 0.0, top > 0 ? top * 1.05 : 1.0);
}

inline std::string compliance_table(const std::vector<MetricsRow>& run) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-16s %9s %7s %7s %7s %5s %11s %9s %9s\n", "scenario", "delay_ms", "loss_%",
                "stop1", "stop2", "stop3", "lap", "lat_rms_m", "precision");
  out += buf;
  for (const auto& r : run) {
    auto mark = [&](int k) { return r.stops && (*r.stops)[static_cast<std::size_t>(k)] ? "pass" : "FAIL"; };
    std::snprintf(buf, sizeof buf, "%-16s %9.0f %7.1f %7s %7s %5s %11s %9.4f %9.3f\n", r.scenario.c_str(),
                  r.delay_ms, r.loss_pct, mark(0), mark(1), mark(2),
                  r.lap_completed && *r.lap_completed ? "completed" : "incomplete", r.lat_rms.value_or(0.0),
                  r.precision);
    out += buf;
  }
  return out;
}

/// Writes report/{pr_vs_epsilon,confusion,trajectories[,loss_curve]}.svg and
/// report/compliance.txt under `dir`. Returns the files written.
inline std::vector<fs::path> write_report(const fs::path& dir, const TrackSpec& track) {
  const ReportInputs in = load_report_inputs(dir);
  std::vector<std::pair<std::string, std::string>> files;
  files.push_back({"pr_vs_epsilon.svg", plot_pr_vs_epsilon(in.eval)});
  files.push_back({"confusion.svg", plot_confusions(in.confusions)});
  files.push_back({"trajectories.svg", plot_trajectories(track, in.trajectories)});
  if (!in.loss_curve.empty()) files.push_back({"loss_curve.svg", plot_loss_curve(in.loss_curve)});
  files.push_back({"compliance.txt", compliance_table(in.run)});
  std::vector<fs::path> written;
  for (const auto& [name, text] : files) {
    write_text(dir / "report" / name, text);
    written.push_back(dir / "report" / name);
  }
  return written;
}

}  // namespace advloop
