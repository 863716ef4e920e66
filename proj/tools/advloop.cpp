// advloop: dataset generation, training, attack evaluation, closed-loop runs,
// reporting, and the two halves of the TCP loop (serve = cloud, drive = vehicle).

#include <chrono>
#include <cstdio>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "advloop/cli/pipeline.hpp"
#include "advloop/netchan/tcp.hpp"

using namespace advloop;

namespace {

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::invalid_config: return 2;
    case ErrorKind::missing_input: return 3;
    case ErrorKind::untrained_model: return 4;
    case ErrorKind::network: return 6;
    case ErrorKind::invalid_argument:
    case ErrorKind::numerical:
    case ErrorKind::io: return 5;
  }
  return 5;
}

struct Options {
  std::string config;
  std::string out = "results";
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
  std::string bind = "127.0.0.1:7878";
  std::string connect = "127.0.0.1:7878";
  double accept_timeout = 60.0;
};

ExperimentConfig load(const Options& o) {
  ExperimentConfig cfg = o.config.empty() ? config_from_text("") : load_config(o.config);
  if (o.seed) cfg.override_seed(*o.seed);
  return cfg;
}

fs::path checkpoint_path(const Options& o) { return o.checkpoint.empty() ? fs::path(o.out) / "model.adnn" : fs::path(o.checkpoint); }

int cmd_gen_data(const Options& o) {
  const auto cfg = load(o);
  const auto track = cfg.make_track();
  const auto split = gen_dataset(cfg.dataset.n, cfg.dataset.train_fraction, cfg.dataset.seed, track, cfg.render,
                                 cfg.sampling);
  save_dataset(split, fs::path(o.out) / "data");
  write_text(fs::path(o.out) / "config.txt", dump_config(cfg));
  std::printf("wrote %zu train + %zu test frames to %s\n", split.train.size(), split.test.size(),
              (fs::path(o.out) / "data").c_str());
  return 0;
}

int cmd_train(const Options& o) {
  const auto cfg = load(o);
  const Dataset data = load_split(fs::path(o.out) / "data" / "train");
  const auto result = train(data, cfg.train, [&](int epoch, double loss) {
    std::printf("epoch %3d  loss %.6f\n", epoch, loss);
    std::fflush(stdout);
  });
  if (!result.params.all_finite()) fail(ErrorKind::numerical, "training produced non-finite parameters");
  save_checkpoint({result.params, true}, checkpoint_path(o));
  write_text(fs::path(o.out) / "loss_curve.csv", format_loss_curve(result.loss_curve));
  std::printf("checkpoint %s\n", checkpoint_path(o).c_str());
  return 0;
}

int cmd_eval(const Options& o) {
  const auto cfg = load(o);
  const ModelParams theta = load_trained(checkpoint_path(o));
  const Dataset test = load_split(fs::path(o.out) / "data" / "test");
  const fs::path dir = fs::path(o.out) / "eval";
  std::vector<MetricsRow> rows;
  std::vector<std::pair<std::string, std::string>> confusions;
  run_eval_grid(cfg, theta, test, [&](const EvalOutcome& e) {
    rows.push_back(eval_row(e));
    confusions.push_back({"confusion_" + e.c.scenario + ".csv", format_confusion(e.report.confusion)});
    std::printf("%-14s precision %.3f  recall %.3f\n", e.c.scenario.c_str(), e.report.pr.precision,
                e.report.pr.recall);
    std::fflush(stdout);
  });
  for (const auto& [name, text] : confusions) write_text(dir / name, text);
  write_text(dir / "metrics.csv", format_metrics(rows));
  return 0;
}

int cmd_run(const Options& o) {
  const auto cfg = load(o);
  const ModelParams theta = load_trained(checkpoint_path(o));
  const auto track = cfg.make_track();
  const fs::path dir = fs::path(o.out) / "run";
  std::vector<MetricsRow> rows;
  for (const auto& c : run_cases(cfg)) {
    const RunOutcome r = run_case(cfg, c, track, theta);
    if (r.log.aborted) fail(ErrorKind::numerical, c.scenario + ": " + r.log.abort_reason);
    save_episode(r.log, dir / c.scenario);
    rows.push_back(run_row(r));
    std::printf("%-14s stops %d%d%d  lap %s  lat_rms %.4f m\n", c.scenario.c_str(), r.compliance.stops[0].pass,
                r.compliance.stops[1].pass, r.compliance.stops[2].pass, r.compliance.lap_completed ? "yes" : "no",
                r.compliance.lateral_rms);
    std::fflush(stdout);
  }
  write_text(dir / "metrics.csv", format_metrics(rows));
  return 0;
}

int cmd_report(const Options& o) {
  const auto cfg = load(o);
  for (const auto& p : write_report(fs::path(o.out), cfg.make_track())) std::printf("wrote %s\n", p.c_str());
  return 0;
}

std::int64_t micros_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - t0).count();
}

// Cloud side. Commands pass through a local channel with the configured
// downlink impairment before they reach the socket.
int cmd_serve(const Options& o) {
  const auto cfg = load(o);
  const ModelParams theta = load_trained(checkpoint_path(o));
  TcpServer server(o.bind);
  std::printf("listening on port %u\n", server.port());
  std::fflush(stdout);
  auto link = server.accept(std::chrono::milliseconds(static_cast<long>(o.accept_timeout * 1000)));
  if (!link) fail(ErrorKind::network, "no vehicle connected within the accept timeout");
  CloudNode cloud(theta, cfg.loop);
  Channel down(cfg.loop.downlink);
  const auto t0 = std::chrono::steady_clock::now();
  long processed = 0;
  while (link->up()) {
    std::vector<WireMessage> inbox;
    if (auto m = link->wait(std::chrono::milliseconds(2))) inbox.push_back(std::move(*m));
    for (auto& m : link->poll()) inbox.push_back(std::move(m));
    const std::int64_t now = micros_since(t0);
    for (const auto& m : inbox) {
      if (m.type != MessageType::frame) continue;
      const auto payload = decode_frame_payload(m.payload);
      const auto res = cloud.process(m.seq, static_cast<std::int64_t>(m.timestamp_us), payload.image,
                                     payload.labels.value_or(LabelSet{}));
      if (!res) continue;
      ++processed;
      down.send({MessageType::command, m.seq, m.timestamp_us, encode_command_payload(res->command)}, now);
    }
    for (auto& c : down.poll(micros_since(t0))) link->send(c);
  }
  for (const auto& e : link->take_events()) std::printf("link %s: %s\n", e.kind == LinkEventKind::up ? "up" : "down", e.reason.c_str());
  std::printf("processed %ld frames\n", processed);
  return 0;
}

// Vehicle side, paced by the wall clock. Frames pass through a local channel
// with the configured uplink impairment before they reach the socket.
int cmd_drive(const Options& o) {
  const auto cfg = load(o);
  const auto track = cfg.make_track();
  const LoopConfig& lc = cfg.loop;
  auto link = TcpLink::connect(o.connect);
  Channel up(lc.uplink);
  StaleCommandFilter filter;
  EpisodeLog log;
  std::map<std::uint32_t, std::int64_t> capture_us;
  VehicleState state = start_state(track, lc.start_arc);
  const std::int64_t tick = lc.tick_us();
  const auto t0 = std::chrono::steady_clock::now();
  std::uint32_t next_seq = 1;
  bool link_lost = false;
  for (long k = 0; k < lc.total_ticks(); ++k) {
    std::this_thread::sleep_until(t0 + std::chrono::microseconds(k * tick));
    const std::int64_t now = k * tick;
    const double t = static_cast<double>(now) * 1e-6;
    if (k % lc.ticks_per_frame() == 0) {
      const std::uint32_t seq = next_seq++;
      const auto frame = render_frame(loop_scene(track, t), track, state, lc.render, derive_seed(lc.seed, seq));
      capture_us[seq] = now;
      const auto rec = up.send({MessageType::frame, seq, static_cast<std::uint64_t>(now),
                                encode_frame_payload(frame.image, &frame.labels)},
                               now);
      log.frames.push_back({seq, t, -1.0, rec.dropped, false, 0, std::nan("")});
    }
    for (auto& m : up.poll(now)) link->send(m);
    for (auto& m : link->poll())
      if (m.type == MessageType::command) filter.offer(decode_command_payload(m.payload, m.seq));
    for (const auto& e : link->take_events()) {
      log.events.push_back({t, e.kind == LinkEventKind::up ? "link_up" : "link_down", e.reason});
      if (e.kind == LinkEventKind::down) link_lost = true;
    }
    if (link_lost) break;
    const ControlCommand& cmd = filter.applied;
    const double age = cmd.seq == 0 ? -1.0 : static_cast<double>(now - capture_us.at(cmd.seq)) * 1e-3;
    log.ticks.push_back({t, state, cmd.v, cmd.omega, cmd.seq, age});
    state = step_kinematics(state, cmd, lc.tick_dt);
  }
  link->close();
  save_episode(log, fs::path(o.out) / "drive");
  const auto c = compliance(log, track, cfg.compliance);
  std::printf("stops %d%d%d  lap %s  lat_rms %.4f m\n", c.stops[0].pass, c.stops[1].pass, c.stops[2].pass,
              c.lap_completed ? "yes" : "no", c.lateral_rms);
  if (link_lost) fail(ErrorKind::network, "link to the cloud went down during the episode");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"advloop: adversarial perception and network impairment testbed"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "key = value experiment config");
    sub->add_option("--out", o.out, "results directory")->capture_default_str();
    sub->add_option("--seed", o.seed, "overrides every seed in the config");
  };
  auto with_checkpoint = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", o.checkpoint, "model checkpoint (default <out>/model.adnn)");
  };
  std::map<CLI::App*, std::function<int(const Options&)>> handlers;
  auto add = [&](const char* name, const char* help, std::function<int(const Options&)> fn) {
    auto* sub = app.add_subcommand(name, help);
    common(sub);
    handlers[sub] = std::move(fn);
    return sub;
  };
  add("gen-data", "render the labeled dataset into <out>/data", cmd_gen_data);
  with_checkpoint(add("train", "train the detector on <out>/data/train", cmd_train));
  with_checkpoint(add("eval", "precision/recall under the attack grid", cmd_eval));
  with_checkpoint(add("run", "closed-loop episodes over the network impairment grid", cmd_run));
  add("report", "plots and compliance table from <out>", cmd_report);
  auto* serve = add("serve", "cloud side of the TCP loop", cmd_serve);
  with_checkpoint(serve);
  serve->add_option("--bind", o.bind, "host:port to listen on")->capture_default_str();
  serve->add_option("--accept-timeout", o.accept_timeout, "seconds to wait for the vehicle")->capture_default_str();
  auto* drive = add("drive", "vehicle side of the TCP loop", cmd_drive);
  drive->add_option("--connect", o.connect, "cloud host:port")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  try {
    for (auto& [sub, fn] : handlers)
      if (sub->parsed()) return fn(o);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 5;
  }
  return 2;
}
