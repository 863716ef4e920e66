#include <cstdlib>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include <gtest/gtest.h>

#include "advloop/cli/pipeline.hpp"
#include "support.hpp"

using namespace advloop;
using namespace advloop::testing;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::io;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ADVLOOP_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write_config(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

const char* kSmallConfig =
    "render.n = 40\n"
    "model.epochs = 2\n"
    "loop.duration = 2\n";

std::size_t count_files(const fs::path& dir, const std::string& ext) {
  std::size_t n = 0;
  if (!fs::is_directory(dir)) return 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.path().extension() == ext;
  return n;
}

}  // namespace

TEST(Config, UnknownKeyRejected) {
  EXPECT_EQ(kind_of([] { config_from_text("model.epoch = 3\n"); }), ErrorKind::invalid_config);
  EXPECT_EQ(kind_of([] { config_from_text("render.n = ten\n"); }), ErrorKind::invalid_config);
  EXPECT_EQ(kind_of([] { config_from_text("eval.attacks = fgsm,cw\n"); }), ErrorKind::invalid_config);
}

TEST(Config, DumpRoundTrips) {
  const auto cfg = config_from_text("model.epochs = 7\nnet.uplink.delay_ms = 120\nattack.kind = pgd\nattack.epsilon = 0.02\n");
  EXPECT_EQ(cfg.train.epochs, 7);
  EXPECT_EQ(cfg.loop.uplink.delay_ms, 120);
  EXPECT_EQ(cfg.loop.attack.kind, AttackKind::pgd);
  const auto text = dump_config(cfg);
  EXPECT_EQ(dump_config(config_from_text(text)), text);
}

TEST(Config, NegativeImpactTimeDisablesScenario) {
  EXPECT_FALSE(config_from_text("net.scenario.impact_s = -1\nnet.scenario.loss_prob = 1\n").loop.scenario);
  const auto on = config_from_text("net.scenario.impact_s = 30\nnet.scenario.loss_prob = 1\n");
  ASSERT_TRUE(on.loop.scenario);
  EXPECT_EQ(on.loop.scenario->impact_time(), 30);
  EXPECT_EQ(on.loop.scenario->impact_condition.loss_prob, 1);
}

TEST(Config, SeedOverrideReachesEverySeed) {
  auto cfg = config_from_text("");
  cfg.override_seed(99);
  EXPECT_EQ(cfg.dataset.seed, 99u);
  EXPECT_EQ(cfg.train.seed, 99u);
  EXPECT_EQ(cfg.loop.seed, 99u);
  EXPECT_EQ(cfg.eval.seed, 99u);
  EXPECT_EQ(cfg.loop.uplink.seed, 99u);
  EXPECT_EQ(cfg.loop.downlink.seed, 100u);
}

TEST(Grid, DefaultEvalHasSevenCases) {
  const auto cases = eval_cases(config_from_text(""));
  const double eps[] = {0.01, 0.02, 0.04};
  ASSERT_EQ(cases.size(), 7u);
  EXPECT_EQ(cases[0].scenario, "clean");
  EXPECT_EQ(cases[0].attack.kind, AttackKind::none);
  for (std::size_t i = 1; i < 7; ++i) {
    EXPECT_EQ(cases[i].attack.kind, i <= 3 ? AttackKind::fgsm : AttackKind::pgd);
    EXPECT_EQ(cases[i].attack.epsilon, eps[(i - 1) % 3]);
    EXPECT_EQ(cases[i].attack.step_size, 0.01);
    EXPECT_EQ(cases[i].attack.iterations, 10);
  }
}

TEST(Grid, DefaultRunHasSevenEpisodes) {
  const auto cases = run_cases(config_from_text(""));
  ASSERT_EQ(cases.size(), 7u);
  EXPECT_EQ(cases[0].scenario, "baseline");
  EXPECT_EQ(cases[1].scenario, "delay_100ms");
  EXPECT_EQ(cases[3].scenario, "delay_250ms");
  EXPECT_EQ(cases[4].scenario, "loss_0.5pct");
  const double delays[] = {100, 150, 250}, losses[] = {0.5, 2, 5};
  for (int i = 0; i < 3; ++i) {
    const auto& d = cases[static_cast<std::size_t>(1 + i)];
    EXPECT_EQ(d.loop.uplink.delay_ms, delays[i]);
    EXPECT_EQ(d.loop.downlink.delay_ms, delays[i]);
    EXPECT_EQ(d.loop.uplink.loss_prob, 0.0);
    const auto& l = cases[static_cast<std::size_t>(4 + i)];
    EXPECT_DOUBLE_EQ(l.loop.uplink.loss_prob, losses[i] / 100);
    EXPECT_DOUBLE_EQ(l.loop.downlink.loss_prob, losses[i] / 100);
    EXPECT_EQ(l.loop.uplink.delay_ms, 0.0);
  }
}

TEST(Config, NumbersPrintShortestRoundTrip) {
  EXPECT_EQ(format_double(100), "100");
  EXPECT_EQ(format_double(0.02), "0.02");
  EXPECT_EQ(format_double(-1), "-1");
  EXPECT_EQ(std::stod(format_double(0.1 + 0.2)), 0.1 + 0.2);
  EXPECT_EQ(format_double_list({0.5, 2, 5}), "0.5,2,5");
}

TEST(MetricsCsv, RoundTrip) {
  MetricsRow a;
  a.scenario = "pgd_eps0.02";
  a.attack = "pgd";
  a.epsilon = 0.02;
  a.precision = 0.5;
  a.recall = 0.25;
  MetricsRow b;
  b.scenario = "delay_250ms";
  b.delay_ms = 250;
  b.precision = 0.75;
  b.recall = 1;
  b.lat_rms = 0.0625;
  b.lap_completed = true;
  b.stops = std::array<bool, 3>{true, false, true};
  const auto text = format_metrics({a, b});
  EXPECT_EQ(text.substr(0, text.find('\n')), kMetricsHeader);
  const auto rows = parse_metrics(text, "m");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].scenario, a.scenario);
  EXPECT_EQ(rows[0].epsilon, 0.02);
  EXPECT_FALSE(rows[0].lat_rms);
  EXPECT_FALSE(rows[0].stops);
  EXPECT_EQ(rows[1].lat_rms, 0.0625);
  EXPECT_EQ(rows[1].stops, b.stops);
  EXPECT_EQ(format_metrics(rows), text);
  EXPECT_EQ(kind_of([] { parse_metrics("a,b\n", "m"); }), ErrorKind::missing_input);
}

TEST(ConfusionCsv, RoundTrip) {
  ConfusionMatrix cm;
  for (int i = 0; i < ConfusionMatrix::kSize; ++i)
    for (int j = 0; j < ConfusionMatrix::kSize; ++j) cm.counts[i][j] = 10 * i + j;
  EXPECT_EQ(parse_confusion(format_confusion(cm), "c"), cm);
}

TEST(LossCurve, WindowViolations) {
  EXPECT_EQ(loss_window_violations({5, 4, 3, 2, 1, 0.5}), 0);
  EXPECT_EQ(loss_window_violations({1, 2, 1, 1, 1.5}), 1);
  EXPECT_EQ(loss_window_violations({1, 1, 1}), 0);
  const std::vector<double> c = {1.5, 1.25, 1.125};
  EXPECT_EQ(parse_loss_curve(format_loss_curve(c), "l"), c);
}

TEST(Report, EmptyDirectoryWritesNothing) {
  TempDir dir("report_empty");
  EXPECT_EQ(kind_of([&] { write_report(dir.path(), make_rect_track()); }), ErrorKind::missing_input);
  EXPECT_FALSE(fs::exists(dir.path() / "report"));
}

TEST(Binary, ExitCodes) {
  TempDir dir("cli_codes");
  const auto out = dir.path().string();
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("eval --bogus-flag"), 2);
  write_config(dir.path() / "bad.txt", "model.epoch = 3\n");
  EXPECT_EQ(run_cli("gen-data --config " + (dir.path() / "bad.txt").string() + " --out " + out), 2);
  EXPECT_EQ(run_cli("gen-data --config " + (dir.path() / "absent.txt").string() + " --out " + out), 3);
  EXPECT_EQ(run_cli("train --out " + out), 3);
  EXPECT_EQ(run_cli("eval --out " + out), 3);
  EXPECT_EQ(run_cli("report --out " + out), 3);
  EXPECT_FALSE(fs::exists(dir.path() / "report"));
  save_checkpoint({init_params(DetectorConfig{}, 1), false}, dir.path() / "model.adnn");
  EXPECT_EQ(run_cli("run --out " + out), 4);
  EXPECT_EQ(run_cli("drive --connect 127.0.0.1:1 --out " + out), 6);
}

TEST(Binary, SmallPipelineEndToEnd) {
  TempDir dir("cli_pipeline");
  const auto cfg = (dir.path() / "cfg.txt").string();
  write_config(cfg, kSmallConfig);
  for (const char* sub : {"gen-data", "train", "eval", "run", "report"})
    ASSERT_EQ(run_cli(std::string(sub) + " --config " + cfg + " --out " + dir.path().string()), 0) << sub;
  const auto eval = parse_metrics(read_text(dir.path() / "eval" / "metrics.csv"), "eval");
  EXPECT_EQ(eval.size(), 7u);
  EXPECT_EQ(count_files(dir.path() / "eval", ".csv"), 8u);
  const auto run = parse_metrics(read_text(dir.path() / "run" / "metrics.csv"), "run");
  ASSERT_EQ(run.size(), 7u);
  for (const auto& r : run) {
    EXPECT_TRUE(fs::is_regular_file(dir.path() / "run" / r.scenario / "ticks.csv")) << r.scenario;
    EXPECT_TRUE(r.lat_rms && r.stops);
  }
  for (const char* f : {"pr_vs_epsilon.svg", "confusion.svg", "trajectories.svg", "loss_curve.svg", "compliance.txt"})
    EXPECT_TRUE(fs::is_regular_file(dir.path() / "report" / f)) << f;

  // Same config and inputs give byte-identical CSVs.
  const auto eval_before = read_text(dir.path() / "eval" / "metrics.csv");
  const auto run_before = read_text(dir.path() / "run" / "metrics.csv");
  ASSERT_EQ(run_cli("eval --config " + cfg + " --out " + dir.path().string()), 0);
  ASSERT_EQ(run_cli("run --config " + cfg + " --out " + dir.path().string()), 0);
  EXPECT_EQ(read_text(dir.path() / "eval" / "metrics.csv"), eval_before);
  EXPECT_EQ(read_text(dir.path() / "run" / "metrics.csv"), run_before);
}
