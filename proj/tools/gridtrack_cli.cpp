// gridtrack command line: station service, camera node, and the offline calibrate / simulate /
// evaluate / predict workflows.

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "gridtrack/gridtrack.hpp"

using namespace gridtrack;
namespace fs = std::filesystem;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("gridtrack");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("%H:%M:%S.%e %^%l%$ %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("GRIDTRACK_LOG")) {
    const auto lvl = spdlog::level::from_str(env);
    if (lvl == spdlog::level::off && std::string_view(env) != "off") {
      spdlog::warn("GRIDTRACK_LOG={} is not a log level, using info", env);
    } else {
      spdlog::set_level(lvl);
    }
  }
}

void write_json(const std::string& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << j.dump(2) << '\n';
}

Track merged(const std::vector<TrackLogRow>& rows, std::optional<PointSource> source,
             MergeMode mode = MergeMode::concat) {
  return merge_camera_tracks(tracks_by_camera(rows, source), mode);
}

std::string trial_name(int i) { return (i < 10 ? "trial0" : "trial") + std::to_string(i); }

// --- serve ---

struct ServeArgs {
  std::string config;
  std::optional<std::uint16_t> port;
  double duration_s{0.0};
};

int serve(const ServeArgs& a) {
  auto cfg = load_station_config(a.config);
  if (a.port) cfg.listen.port = *a.port;
  if (!cfg.output_dir.empty()) fs::create_directories(cfg.output_dir);
  GroundStation station(cfg);
  station.start();
  spdlog::info("listening on {}:{} ({}, {} cameras)", cfg.listen.host, station.port(),
               cfg.mode == TransportMode::reqrep ? "reqrep" : "pubsub", cfg.camera_models.size());
  if (auto fp = station.feed_port()) spdlog::info("live feed on 127.0.0.1:{}", *fp);

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const auto start = std::chrono::steady_clock::now();
  std::uint64_t last_processed = 0;
  while (!g_stop) {
    std::this_thread::sleep_for(std::chrono::milliseconds(200));
    const auto c = station.counters();
    if (c.frames_processed != last_processed) {
      spdlog::debug("processed {} frames, {} points", c.frames_processed, c.points);
      last_processed = c.frames_processed;
    }
    if (a.duration_s > 0.0 &&
        std::chrono::steady_clock::now() - start >= std::chrono::duration<double>(a.duration_s)) {
      break;
    }
  }
  station.stop();

  const auto c = station.counters();
  spdlog::info("frames: {} received, {} processed, {} malformed, {} unknown camera, {} stale", c.frames_received,
               c.frames_processed, c.malformed, c.unknown_camera, c.stale_seq);
  spdlog::info("points: {} tracked, {} no anchor, {} outside calibration", c.points, c.no_anchor,
               c.dropped_out_of_calibration);
  for (const auto& [id, ts] : station.processed_timestamps()) {
    if (ts.size() >= 2 && ts.back() > ts.front()) spdlog::info("{}: {:.3f} fps", id, fps_stats(ts));
  }
  const auto track = station.final_track();
  if (!cfg.output_dir.empty() && !track.empty()) {
    const auto path = (fs::path(cfg.output_dir) / ("final_" + cfg.trial + ".csv")).string();
    write_track_log(path, cfg.trial, track);
    spdlog::info("wrote {} ({} points)", path, track.size());
  }
  return 0;
}

// --- camera-node ---

struct NodeArgs {
  std::string connect;
  std::string cam_id;
  std::string source;
  std::string file;
  std::string scenario;
  int trial{0};
  std::string mode{"reqrep"};
  double time_scale{1.0};
  int rep_timeout_ms{static_cast<int>(kDefaultRepTimeout.count())};
};

int camera_node(const NodeArgs& a) {
  std::vector<FrameMessage> frames;
  if (a.source == "kp17-file") {
    if (a.file.empty()) throw UsageError("--source kp17-file needs --file");
    frames = read_frame_file(a.file);
    for (auto& f : frames) f.header.camera_id = a.cam_id;
  } else {
    if (a.scenario.empty()) throw UsageError("--source synthetic needs --scenario");
    const auto sc = load_scenario(a.scenario);
    auto cam = std::find_if(sc.cameras.begin(), sc.cameras.end(),
                            [&](const CameraModel& m) { return m.camera_id() == a.cam_id; });
    if (cam == sc.cameras.end()) throw ConfigError("scenario has no camera '" + a.cam_id + "'");
    auto rng = trial_rng(sc.rng_seed, a.trial, 2 + static_cast<std::uint32_t>(cam - sc.cameras.begin()));
    frames = render_keypoints(gen_trajectory(sc, a.trial), *cam, sc.pixel_noise_px, rng);
  }
  spdlog::info("{}: replaying {} frames to {}", a.cam_id, frames.size(), a.connect);

  CameraNodeOptions opt{net::parse_endpoint(a.connect)};
  opt.mode = a.mode == "pubsub" ? TransportMode::pubsub : TransportMode::reqrep;
  opt.rep_timeout = net::Millis{a.rep_timeout_ms};
  CameraNode node(opt);
  CameraNodeStats stats;
  std::exception_ptr err;
  std::thread sender([&] {
    try {
      stats = node.run();
    } catch (...) {
      err = std::current_exception();
      node.mailbox().close();
    }
  });
  replay_paced(node.mailbox(), frames, a.time_scale);
  sender.join();
  if (err) std::rethrow_exception(err);
  spdlog::info("{}: sent {}, acknowledged {}, timed out {}", a.cam_id, stats.sent, stats.acked, stats.timeouts);
  return 0;
}

// --- calibrate ---

struct CalibrateArgs {
  std::string samples;
  std::string out;
  int degree{3};
  int lateral_degree{3};
  std::string cam_id{"cam0"};
  int image_w{640};
  int image_h{480};
  double world_x{0.0};
  double world_y{0.0};
  double yaw{0.0};
  std::optional<double> principal_col;
  std::string width_unit{"m"};
};

int calibrate_cmd(const CalibrateArgs& a) {
  const auto samples = read_calibration_csv(a.samples, a.width_unit == "in" ? WidthUnit::inches : WidthUnit::meters);
  CalibrationOptions opt;
  opt.camera_id = a.cam_id;
  opt.image_w = a.image_w;
  opt.image_h = a.image_h;
  opt.depth_degree = a.degree;
  opt.lateral_degree = a.lateral_degree;
  opt.principal_col = a.principal_col;
  opt.world_pos = {a.world_x, a.world_y};
  opt.yaw_deg = a.yaw;
  const auto r = calibrate(samples, opt);
  for (const auto& w : r.model.warnings()) spdlog::warn("{}", w);
  save_camera_model(r.model, a.out);
  std::cout << "depth residual rms: " << csv::format(r.depth.residual_rms) << " m (degree " << a.degree << ", "
            << samples.size() << " samples)\n";
  std::cout << "lateral residual rms: " << csv::format(r.lateral.residual_rms) << " m/px (degree " << a.lateral_degree
            << ")\n";
  std::cout << "valid rows: [" << r.model.valid_rows().v_min << ", " << r.model.valid_rows().v_max << "]\n";
  spdlog::info("wrote {}", a.out);
  return 0;
}

// --- simulate ---

struct SimulateArgs {
  std::string scenario;
  int trials{1};
  std::string out;
  std::string xy;
  std::string dump_dir;
  std::optional<std::uint64_t> seed;
  std::optional<double> sigma;
};

int simulate(const SimulateArgs& a) {
  auto sc = load_scenario(a.scenario);
  if (a.seed) sc.rng_seed = *a.seed;
  if (a.sigma) sc.pixel_noise_px = *a.sigma;
  sc.validate();
  if (!a.dump_dir.empty()) fs::create_directories(a.dump_dir);

  std::vector<TrialReport> reports;
  std::vector<std::pair<Track, std::vector<TruthSample>>> xy;
  for (int i = 0; i < a.trials; ++i) {
    auto r = run_trial(sc, i, a.dump_dir);
    const auto& acc = r.report.accuracy;
    spdlog::info("{}: mean {:.4f} m, sd {:.4f} m over {} points ({} unmatched), {:.3f} fps", trial_name(i), acc.mean_m,
                 acc.sd_m, acc.n_matched, acc.n_unmatched, r.report.fps);
    if (!a.dump_dir.empty()) {
      const fs::path dir = a.dump_dir;
      write_truth_csv((dir / ("gt_" + trial_name(i) + ".csv")).string(), r.truth.select(sc.truth));
      for (const auto& [id, frames] : r.streams) {
        write_frame_file((dir / ("frames_" + id + "_" + trial_name(i) + ".bin")).string(), frames);
      }
    }
    if (!a.xy.empty()) xy.emplace_back(r.track, r.truth.select(sc.truth));
    reports.push_back(std::move(r.report));
  }
  const auto report = aggregate_trials(std::move(reports));
  write_json(a.out, report_to_json(report));
  if (!a.xy.empty()) write_xy_file(a.xy, xy);
  std::cout << "error M=" << csv::format(report.mean_m) << " SD=" << csv::format(report.sd_m)
            << " min=" << csv::format(report.min_m) << " max=" << csv::format(report.max_m) << " m; fps M="
            << csv::format(report.fps_mean) << " SD=" << csv::format(report.fps_sd) << " (" << report.n_trials
            << " trials)\n";
  return 0;
}

// --- evaluate ---

struct EvaluateArgs {
  std::string est;
  std::string truth;
  double window_ms{kMatchWindowUs / 1000.0};
  std::string camera;
  bool iqr{false};
  std::string merge{"concat"};
};

int evaluate(const EvaluateArgs& a) {
  auto rows = read_track_log(a.est);
  if (!a.camera.empty()) {
    std::erase_if(rows, [&](const TrackLogRow& r) { return r.point.camera_id != a.camera; });
  }
  auto track = merged(rows, PointSource::pose, parse_merge_mode(a.merge));
  if (a.iqr) track = iqr_filter(track);
  const auto truth = read_truth_csv(a.truth);
  const auto acc =
      evaluate_accuracy(track, truth, static_cast<TimestampUs>(std::llround(a.window_ms * 1000.0)));
  nlohmann::ordered_json j;
  j["mean_m"] = acc.mean_m;
  j["sd_m"] = acc.sd_m;
  j["min_m"] = acc.min_m;
  j["max_m"] = acc.max_m;
  j["n_matched"] = acc.n_matched;
  j["n_unmatched"] = acc.n_unmatched;
  std::cout << j.dump(2) << '\n';
  return 0;
}

// --- predict-fit / predict-eval ---

struct PredictArgs {
  std::string track;
  std::string model;
  std::string out;
  std::string log;
  int lags{kDefaultLagOrder};
  double dt{kPredictionStepS};
  bool with_robot{false};
};

// Evacuee from pose-derived rows, robot from bbox-derived rows, on a common grid.
std::pair<UniformSeries, std::optional<UniformSeries>> series_from_log(const std::string& path, double dt,
                                                                       bool robot) {
  const auto rows = read_track_log(path);
  const auto evac = resample_uniform(merged(rows, PointSource::pose), dt);
  if (!robot) return {evac, std::nullopt};
  const auto r = merged(rows, PointSource::bbox);
  if (r.empty()) throw InsufficientDataError(path + " has no bbox rows for the robot");
  return {evac, resample_like(r, evac)};
}

int predict_fit(const PredictArgs& a) {
  const auto [evac, robot] = series_from_log(a.track, a.dt, a.with_robot);
  const auto m = robot ? fit_ar(evac.pos, robot->pos, a.lags, a.dt) : fit_ar(evac.pos, a.lags, a.dt);
  write_json(a.out, ar_model_to_json(m));
  std::cout << "fit rmse: " << csv::format(m.fit_rmse_m) << " m over " << evac.pos.size() << " steps of "
            << csv::format(a.dt) << " s (p=" << a.lags << (robot ? ", with robot" : "") << ")\n";
  return 0;
}

int predict_eval(const PredictArgs& a) {
  std::ifstream in(a.model);
  if (!in) throw ConfigError("cannot open " + a.model);
  const auto m = ar_model_from_json(nlohmann::json::parse(in));
  const auto [evac, robot] = series_from_log(a.track, m.dt_s, m.uses_robot());
  const auto eval = evaluate_predictions(m, evac, robot);
  if (!a.log.empty()) write_prediction_log(a.log, eval);
  nlohmann::ordered_json j;
  j["rmse_m"] = eval.rmse_m;
  j["n"] = eval.rows.size();
  std::cout << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-camera floor-position tracking: station, camera nodes, calibration, simulation"};
  app.require_subcommand(1);

  ServeArgs serve_a;
  auto* serve_cmd = app.add_subcommand("serve", "Run the ground station");
  serve_cmd->add_option("--config", serve_a.config, "Station config JSON")->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--port", serve_a.port, "Override the listen port");
  serve_cmd->add_option("--duration", serve_a.duration_s, "Stop after this many seconds (default: until SIGINT)")
      ->check(CLI::NonNegativeNumber);

  NodeArgs node_a;
  auto* node_cmd = app.add_subcommand("camera-node", "Stream kp17 frames to a station");
  node_cmd->add_option("--connect", node_a.connect, "Station HOST:PORT")->required();
  node_cmd->add_option("--cam-id", node_a.cam_id, "Camera id")->required();
  node_cmd->add_option("--source", node_a.source, "kp17-file or synthetic")
      ->required()
      ->check(CLI::IsMember({"kp17-file", "synthetic"}));
  node_cmd->add_option("--file", node_a.file, "Recorded frame stream")->check(CLI::ExistingFile);
  node_cmd->add_option("--scenario", node_a.scenario, "Scenario JSON for the synthetic source")
      ->check(CLI::ExistingFile);
  node_cmd->add_option("--trial", node_a.trial, "Trial index for the synthetic source")->check(CLI::NonNegativeNumber);
  node_cmd->add_option("--mode", node_a.mode, "reqrep or pubsub")->check(CLI::IsMember({"reqrep", "pubsub"}));
  node_cmd->add_option("--time-scale", node_a.time_scale, "Wall seconds per capture second")
      ->check(CLI::NonNegativeNumber);
  node_cmd->add_option("--rep-timeout-ms", node_a.rep_timeout_ms, "REP timeout before reconnecting")
      ->check(CLI::PositiveNumber);

  CalibrateArgs cal_a;
  auto* cal_cmd = app.add_subcommand("calibrate", "Fit a camera's ground-plane model");
  cal_cmd->add_option("--samples", cal_a.samples, "Calibration CSV")->required()->check(CLI::ExistingFile);
  cal_cmd->add_option("--out", cal_a.out, "Camera model JSON to write")->required();
  cal_cmd->add_option("--degree", cal_a.degree, "Depth polynomial degree")->check(CLI::Range(0, 8));
  cal_cmd->add_option("--lateral-degree", cal_a.lateral_degree, "Lateral scale degree")->check(CLI::Range(0, 8));
  cal_cmd->add_option("--cam-id", cal_a.cam_id, "Camera id");
  cal_cmd->add_option("--image-w", cal_a.image_w)->check(CLI::PositiveNumber);
  cal_cmd->add_option("--image-h", cal_a.image_h)->check(CLI::PositiveNumber);
  cal_cmd->add_option("--world-x", cal_a.world_x, "Camera floor position x (m)");
  cal_cmd->add_option("--world-y", cal_a.world_y, "Camera floor position y (m)");
  cal_cmd->add_option("--yaw", cal_a.yaw, "Heading in degrees, counter-clockwise from +y");
  cal_cmd->add_option("--principal-col", cal_a.principal_col, "Optical-axis column (default: image center)");
  cal_cmd->add_option("--width-unit", cal_a.width_unit, "Unit of object_width_m: m or in")
      ->check(CLI::IsMember({"m", "in"}));

  SimulateArgs sim_a;
  auto* sim_cmd = app.add_subcommand("simulate", "Run simulated trials end to end and score them");
  sim_cmd->add_option("--scenario", sim_a.scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
  sim_cmd->add_option("--trials", sim_a.trials)->check(CLI::PositiveNumber);
  sim_cmd->add_option("--out", sim_a.out, "Report JSON to write")->required();
  sim_cmd->add_option("--xy", sim_a.xy, "gnuplot file of estimated and true tracks");
  sim_cmd->add_option("--dump-dir", sim_a.dump_dir, "Write track logs, truth CSVs and frame streams here");
  sim_cmd->add_option("--seed", sim_a.seed, "Override rng_seed");
  sim_cmd->add_option("--sigma", sim_a.sigma, "Override pixel_noise_px")->check(CLI::NonNegativeNumber);

  EvaluateArgs eval_a;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score a track log against ground truth");
  eval_cmd->add_option("--est", eval_a.est, "Track log CSV")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--truth", eval_a.truth, "Ground truth CSV (ts_us,x_m,y_m)")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--window-ms", eval_a.window_ms, "Timestamp matching window")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--camera", eval_a.camera, "Only this camera's rows");
  eval_cmd->add_flag("--iqr", eval_a.iqr, "Apply the 1.5 IQR outlier filter first");
  eval_cmd->add_option("--merge", eval_a.merge, "concat or window-average")
      ->check(CLI::IsMember({"concat", "window-average"}));

  PredictArgs fit_a;
  auto* fit_cmd = app.add_subcommand("predict-fit", "Fit the AR position predictor to a track log");
  fit_cmd->add_option("--track", fit_a.track, "Track log CSV")->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--lags", fit_a.lags, "Lag order p")->check(CLI::Range(1, 64));
  fit_cmd->add_option("--dt", fit_a.dt, "Resample step in seconds")->check(CLI::PositiveNumber);
  fit_cmd->add_option("--out", fit_a.out, "Model JSON to write")->required();
  fit_cmd->add_flag("--with-robot", fit_a.with_robot, "Use bbox-derived rows as the robot's track");

  PredictArgs pe_a;
  auto* pe_cmd = app.add_subcommand("predict-eval", "One-step prediction error of a fitted model");
  pe_cmd->add_option("--model", pe_a.model, "Model JSON")->required()->check(CLI::ExistingFile);
  pe_cmd->add_option("--track", pe_a.track, "Track log CSV")->required()->check(CLI::ExistingFile);
  pe_cmd->add_option("--log", pe_a.log, "Write per-step predictions to this CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  setup_logging();
  try {
    if (*serve_cmd) return serve(serve_a);
    if (*node_cmd) return camera_node(node_a);
    if (*cal_cmd) return calibrate_cmd(cal_a);
    if (*sim_cmd) return simulate(sim_a);
    if (*eval_cmd) return evaluate(eval_a);
    if (*fit_cmd) return predict_fit(fit_a);
    if (*pe_cmd) return predict_eval(pe_a);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const nlohmann::json::exception& e) {
    spdlog::error("{}", e.what());
    return kExitRuntime;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
