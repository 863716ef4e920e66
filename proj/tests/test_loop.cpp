#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "advloop/loop/episode.hpp"
#include "support.hpp"

using namespace advloop;
using namespace advloop::testing;

namespace {

LoopConfig short_loop(double seconds = 4.0) {
  LoopConfig c;
  c.episode_duration = seconds;
  return c;
}

const ModelParams& model() {
  static const ModelParams m = init_params(DetectorConfig{}, 123);
  return m;
}

}  // namespace

TEST(StaleFilter, OlderArrivalDiscarded) {
  const auto a = stale_command_filter({{0.1, 0, 3}, {0.2, 0, 2}}, {});
  EXPECT_EQ(a.seq, 3u);
  EXPECT_EQ(a.v, 0.1);
}

TEST(StaleFilter, InOrderEachApplied) {
  StaleCommandFilter f;
  for (std::uint32_t s = 1; s <= 3; ++s) {
    EXPECT_TRUE(f.offer({0.1 * s, 0, s}));
    EXPECT_EQ(f.applied.seq, s);
  }
}

TEST(StaleFilter, DuplicateIgnored) {
  StaleCommandFilter f;
  EXPECT_TRUE(f.offer({0.1, 0.0, 5}));
  EXPECT_FALSE(f.offer({0.9, 0.0, 5}));
  EXPECT_EQ(f.applied.v, 0.1);
}

TEST(RunEpisode, DownlinkTotalLossNeverMoves) {
  auto cfg = short_loop(3.0);
  cfg.downlink.loss_prob = 1.0;
  const auto t = make_rect_track();
  const auto log = run_episode(cfg, t, model());
  const auto start = start_state(t, cfg.start_arc);
  ASSERT_EQ(log.ticks.size(), 300u);
  for (const auto& r : log.ticks) {
    EXPECT_EQ(r.v, 0.0);
    EXPECT_EQ(r.omega, 0.0);
    EXPECT_EQ(r.cmd_seq, 0u);
    EXPECT_EQ(r.state.x, start.x);
    EXPECT_EQ(r.state.y, start.y);
  }
}

TEST(RunEpisode, UplinkDelayShowsInCommandAge) {
  auto cfg = short_loop(3.0);
  cfg.uplink.delay_ms = 250;
  const auto log = run_episode(cfg, make_rect_track(), model());
  double min_age = 1e9;
  for (const auto& r : log.ticks) {
    // Frame k (1-based) is captured at (k - 1) * 50 ms and its command lands 250 ms later.
    const long ms = std::lround(r.time * 1000);
    const std::uint32_t expect = ms < 250 ? 0u : static_cast<std::uint32_t>((ms - 250) / 50 + 1);
    ASSERT_EQ(r.cmd_seq, expect) << "t=" << r.time;
    if (expect == 0) continue;
    const double age = static_cast<double>(ms - static_cast<long>(expect - 1) * 50);
    EXPECT_EQ(r.cmd_age_ms, age);
    min_age = std::min(min_age, r.cmd_age_ms);
  }
  EXPECT_EQ(min_age, 250.0);
  EXPECT_GE(min_age / (cfg.frame_period * 1000), 5.0);
}

TEST(RunEpisode, Deterministic) {
  auto cfg = short_loop(4.0);
  cfg.uplink = {100, 30, 0.1, 5};
  cfg.downlink = {50, 10, 0.05, 6};
  cfg.attack = {AttackKind::fgsm, 0.02};
  const auto t = make_rect_track();
  TempDir dir("episode");
  save_episode(run_episode(cfg, t, model()), dir.path() / "a");
  save_episode(run_episode(cfg, t, model()), dir.path() / "b");
  for (const char* f : {"ticks.csv", "frames.csv", "events.txt"})
    EXPECT_EQ(read_file(dir.path() / "a" / f), read_file(dir.path() / "b" / f)) << f;
  const auto a = run_episode(cfg, t, model()), b = run_episode(cfg, t, model());
  ASSERT_EQ(a.ticks.size(), b.ticks.size());
  for (std::size_t i = 0; i < a.ticks.size(); ++i) {
    EXPECT_EQ(a.ticks[i].state, b.ticks[i].state);
    EXPECT_EQ(a.ticks[i].cmd_seq, b.ticks[i].cmd_seq);
  }
}

TEST(RunEpisode, FrameAccountingMatchesChannelOracle) {
  auto cfg = short_loop(5.0);
  cfg.uplink = {0, 0, 0.2, 77};
  const auto log = run_episode(cfg, make_rect_track(), model());
  ASSERT_EQ(log.frames.size(), static_cast<std::size_t>(std::floor(5.0 / 0.05)));
  std::mt19937_64 oracle(77);
  int dropped = 0;
  for (const auto& f : log.frames) {
    const bool drop = static_cast<double>(oracle() >> 11) * 0x1.0p-53 < 0.2;
    oracle();
    EXPECT_EQ(f.dropped, drop) << f.seq;
    dropped += drop;
    if (drop) {
      EXPECT_EQ(f.t_arrive, -1.0);
    }
  }
  EXPECT_GT(dropped, 0);
}

TEST(RunEpisode, CommandsRespectDownlinkDelay) {
  auto cfg = short_loop(4.0);
  cfg.uplink = {30, 10, 0, 1};
  cfg.downlink = {100, 20, 0, 2};
  const auto log = run_episode(cfg, make_rect_track(), model());
  std::uint32_t prev = 0;
  for (const auto& r : log.ticks) {
    if (r.cmd_seq == prev) continue;
    prev = r.cmd_seq;
    const double sent = log.frames[r.cmd_seq - 1].t_arrive;
    ASSERT_GE(sent, 0.0);
    EXPECT_GE(r.time - sent, 0.080 - 1e-9) << "seq " << r.cmd_seq;
  }
  EXPECT_GT(prev, 0u);
}

TEST(RunEpisode, HoldLastBetweenArrivals) {
  auto cfg = short_loop(4.0);
  cfg.uplink = {80, 40, 0.3, 3};
  cfg.downlink = {80, 40, 0.3, 4};
  const auto log = run_episode(cfg, make_rect_track(), model());
  for (std::size_t i = 1; i < log.ticks.size(); ++i) {
    const auto &a = log.ticks[i - 1], &b = log.ticks[i];
    EXPECT_GE(b.cmd_seq, a.cmd_seq);
    if (a.cmd_seq == b.cmd_seq) {
      EXPECT_EQ(a.v, b.v);
      EXPECT_EQ(a.omega, b.omega);
    }
  }
}

TEST(RunEpisode, ImpactStageSwitchesLinks) {
  auto cfg = short_loop(4.0);
  AdversaryScenario sc;
  sc.stages = {{StageKind::reconnaissance, 0.5, "scan"}, {StageKind::impact, 2.0, "cut"}};
  sc.impact_condition = {0, 0, 1.0, 0};
  cfg.scenario = sc;
  const auto log = run_episode(cfg, make_rect_track(), model());
  std::uint32_t before = 0;
  for (const auto& r : log.ticks) {
    if (r.time < 2.0 - 1e-9) before = r.cmd_seq;
    else EXPECT_EQ(r.cmd_seq, before) << r.time;
  }
  EXPECT_EQ(before, 40u);
  int stages = 0;
  for (const auto& e : log.events) stages += e.kind == "stage";
  EXPECT_EQ(stages, 2);
}

TEST(RunEpisode, RejectsBadConfig) {
  const auto t = make_rect_track();
  auto cfg = short_loop();
  cfg.frame_period = 0.055;
  EXPECT_THROW(run_episode(cfg, t, model()), Error);
  cfg = short_loop();
  cfg.transport = Transport::tcp;
  EXPECT_THROW(run_episode(cfg, t, model()), Error);
  cfg = short_loop();
  cfg.uplink.loss_prob = 2;
  EXPECT_THROW(run_episode(cfg, t, model()), Error);
}

TEST(CloudNode, IgnoresStaleFrames) {
  LoopConfig cfg;
  CloudNode node(model(), cfg);
  const auto img = random_image(1);
  EXPECT_TRUE(node.process(5, 0, img, {}));
  EXPECT_FALSE(node.process(4, 0, img, {}));
  EXPECT_FALSE(node.process(5, 0, img, {}));
  const auto r = node.process(6, 50000, img, {});
  ASSERT_TRUE(r);
  EXPECT_EQ(r->command.seq, 6u);
}

TEST(SaveEpisode, WritesThreeFiles) {
  TempDir dir("save");
  const auto log = run_episode(short_loop(1.0), make_rect_track(), model());
  save_episode(log, dir.path());
  const auto ticks = read_file(dir.path() / "ticks.csv");
  EXPECT_EQ(std::count(ticks.begin(), ticks.end(), '\n'), 101);
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "frames.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "events.txt"));
}
