#pragma once

#include <algorithm>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "csv.hpp"
#include "geometry_io.hpp"
#include "mailbox.hpp"
#include "reqrep.hpp"
#include "station.hpp"
#include "stats.hpp"

namespace gridtrack {

inline constexpr double kGridPitchM = 24.0 * kMetersPerInch;  // 2 ft cells
inline constexpr TimestampUs kMatchWindowUs = 200'000;

struct Waypoint {
  WorldPoint pos;
  double speed_mps{1.0};  // speed on the leg arriving here
  double dwell_s{0.0};
};

// lockstep: each camera advances a virtual clock by the detector latency per REP, so the set of
// delivered frames is a pure function of the scenario. wall: frames are replayed in (scaled)
// real time and the station's sleep alone does the throttling.
enum class SimClock { lockstep, wall };
enum class TruthMode { continuous, cell };

struct ScenarioConfig {
  double room_w{3.6576};
  double room_h{3.6576};
  double grid_pitch_m{kGridPitchM};
  std::vector<CameraModel> cameras;
  std::vector<Waypoint> trajectory;  // empty: random cell-to-cell walk per trial
  int random_waypoints{5};
  double walk_speed_mps{1.0};
  double dwell_s{1.0};
  double pixel_noise_px{0.0};
  double detector_latency_ms{0.0};
  double capture_fps{30.0};
  double trial_duration_s{0.0};  // 0: until the last waypoint's dwell ends
  std::uint64_t rng_seed{1};
  SimClock clock{SimClock::lockstep};
  double time_scale{1.0};  // wall seconds per simulated second
  TransportMode mode{TransportMode::reqrep};
  bool iqr{true};
  MergeMode merge{MergeMode::concat};
  TruthMode truth{TruthMode::continuous};

  void validate() const {
    if (!(room_w > 0.0 && room_h > 0.0)) throw ConfigError("room dimensions must be positive");
    if (!(grid_pitch_m > 0.0)) throw ConfigError("grid_pitch_m must be positive");
    if (cameras.empty()) throw ConfigError("scenario has no cameras");
    std::set<std::string> ids;
    for (const auto& c : cameras) {
      if (!ids.insert(c.camera_id()).second) throw ConfigError("duplicate camera '" + c.camera_id() + "'");
    }
    if (!(pixel_noise_px >= 0.0)) throw ConfigError("pixel_noise_px must be >= 0");
    if (!(detector_latency_ms >= 0.0)) throw ConfigError("detector_latency_ms must be >= 0");
    if (!(capture_fps > 0.0 && capture_fps <= 1000.0)) throw ConfigError("capture_fps must be in (0, 1000]");
    if (!(trial_duration_s >= 0.0)) throw ConfigError("trial_duration_s must be >= 0");
    if (!(time_scale >= 0.0)) throw ConfigError("time_scale must be >= 0");
    if (trajectory.empty() && random_waypoints < 1) throw ConfigError("random_waypoints must be >= 1");
    if (!(walk_speed_mps > 0.0) || !(dwell_s >= 0.0)) throw ConfigError("bad random walk speed or dwell");
    if (clock == SimClock::lockstep && mode != TransportMode::reqrep) {
      throw ConfigError("the lockstep clock needs reqrep transport");
    }
  }
};

inline nlohmann::ordered_json scenario_to_json(const ScenarioConfig& c) {
  nlohmann::ordered_json j;
  j["room_w"] = c.room_w;
  j["room_h"] = c.room_h;
  j["grid_pitch_m"] = c.grid_pitch_m;
  j["cameras"] = nlohmann::ordered_json::array();
  for (const auto& m : c.cameras) j["cameras"].push_back(camera_model_to_json(m));
  j["trajectory"] = nlohmann::ordered_json::array();
  for (const auto& w : c.trajectory) {
    j["trajectory"].push_back({{"x", w.pos.x}, {"y", w.pos.y}, {"speed_mps", w.speed_mps}, {"dwell_s", w.dwell_s}});
  }
  j["random_waypoints"] = c.random_waypoints;
  j["walk_speed_mps"] = c.walk_speed_mps;
  j["dwell_s"] = c.dwell_s;
  j["pixel_noise_px"] = c.pixel_noise_px;
  j["detector_latency_ms"] = c.detector_latency_ms;
  j["capture_fps"] = c.capture_fps;
  j["trial_duration_s"] = c.trial_duration_s;
  j["rng_seed"] = c.rng_seed;
  j["clock"] = c.clock == SimClock::lockstep ? "lockstep" : "wall";
  j["time_scale"] = c.time_scale;
  j["mode"] = c.mode == TransportMode::reqrep ? "reqrep" : "pubsub";
  j["iqr"] = c.iqr;
  j["merge"] = c.merge == MergeMode::concat ? "concat" : "window-average";
  j["truth"] = c.truth == TruthMode::continuous ? "continuous" : "cell";
  return j;
}

// Cameras are inline model objects or paths to model files (relative to `base`).
inline ScenarioConfig scenario_from_json(const nlohmann::json& j, const std::filesystem::path& base = {}) {
  auto pick = [&](const char* key, std::string_view a, std::string_view b, const char* fallback) {
    const auto s = j.value(key, std::string(fallback));
    if (s != a && s != b) throw ConfigError(std::string(key) + " must be " + std::string(a) + " or " + std::string(b));
    return s == a;
  };
  try {
    ScenarioConfig c;
    c.room_w = j.at("room_w").get<double>();
    c.room_h = j.at("room_h").get<double>();
    c.grid_pitch_m = j.value("grid_pitch_m", kGridPitchM);
    for (const auto& cam : j.at("cameras")) {
      if (cam.is_string()) {
        std::filesystem::path p = cam.get<std::string>();
        if (p.is_relative() && !base.empty()) p = base / p;
        c.cameras.push_back(load_camera_model(p.string()));
      } else {
        c.cameras.push_back(camera_model_from_json(cam));
      }
    }
    for (const auto& w : j.value("trajectory", nlohmann::json::array())) {
      c.trajectory.push_back({{w.at("x").get<double>(), w.at("y").get<double>()},
                              w.value("speed_mps", 1.0),
                              w.value("dwell_s", 0.0)});
    }
    c.random_waypoints = j.value("random_waypoints", c.random_waypoints);
    c.walk_speed_mps = j.value("walk_speed_mps", c.walk_speed_mps);
    c.dwell_s = j.value("dwell_s", c.dwell_s);
    c.pixel_noise_px = j.value("pixel_noise_px", 0.0);
    c.detector_latency_ms = j.value("detector_latency_ms", 0.0);
    c.capture_fps = j.value("capture_fps", c.capture_fps);
    c.trial_duration_s = j.value("trial_duration_s", 0.0);
    c.rng_seed = j.value("rng_seed", c.rng_seed);
    c.clock = pick("clock", "lockstep", "wall", "lockstep") ? SimClock::lockstep : SimClock::wall;
    c.time_scale = j.value("time_scale", 1.0);
    c.mode = pick("mode", "reqrep", "pubsub", "reqrep") ? TransportMode::reqrep : TransportMode::pubsub;
    c.iqr = j.value("iqr", true);
    c.merge = parse_merge_mode(j.value("merge", std::string("concat")));
    c.truth = pick("truth", "continuous", "cell", "continuous") ? TruthMode::continuous : TruthMode::cell;
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad scenario: ") + e.what());
  }
}

inline ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return scenario_from_json(nlohmann::json::parse(in), std::filesystem::path(path).parent_path());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

struct TruthSample {
  TimestampUs ts_us{0};
  WorldPoint pos;
};

struct GroundTruthTrack {
  std::vector<TruthSample> samples;
  std::vector<TruthSample> cells;  // same instants, snapped to the containing cell's center

  const std::vector<TruthSample>& select(TruthMode m) const { return m == TruthMode::cell ? cells : samples; }
};

inline WorldPoint cell_center(WorldPoint p, double pitch) {
  return {pitch * (std::floor(p.x / pitch) + 0.5), pitch * (std::floor(p.y / pitch) + 0.5)};
}

inline std::mt19937_64 trial_rng(std::uint64_t seed, int trial, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(trial), stream};
  return std::mt19937_64(seq);
}

// The scenario's fixed trajectory, or a seeded walk between random cell centers.
inline std::vector<Waypoint> trial_waypoints(const ScenarioConfig& c, int trial) {
  if (!c.trajectory.empty()) return c.trajectory;
  const auto nx = static_cast<int>(std::floor(c.room_w / c.grid_pitch_m));
  const auto ny = static_cast<int>(std::floor(c.room_h / c.grid_pitch_m));
  if (nx < 1 || ny < 1) throw ConfigError("room smaller than one grid cell");
  auto rng = trial_rng(c.rng_seed, trial, 0);
  std::uniform_int_distribution<int> cx(0, nx - 1), cy(0, ny - 1);
  std::vector<Waypoint> out;
  for (int i = 0; i < c.random_waypoints; ++i) {
    const WorldPoint p{c.grid_pitch_m * (cx(rng) + 0.5), c.grid_pitch_m * (cy(rng) + 0.5)};
    out.push_back({p, c.walk_speed_mps, c.dwell_s});
  }
  return out;
}

namespace detail {

struct Leg {
  double t0, t1;
  WorldPoint from, to;
};

inline WorldPoint position_at(const std::vector<Leg>& legs, double t) {
  auto it = std::upper_bound(legs.begin(), legs.end(), t, [](double x, const Leg& l) { return x < l.t1; });
  if (it == legs.end()) return legs.back().to;
  if (t <= it->t0 || it->t1 == it->t0) return it->from;
  const double a = (t - it->t0) / (it->t1 - it->t0);
  return {it->from.x + a * (it->to.x - it->from.x), it->from.y + a * (it->to.y - it->from.y)};
}

}  // namespace detail

// Constant-speed piecewise-linear walk with dwells, sampled at the capture instants k / fps.
inline GroundTruthTrack gen_trajectory(const ScenarioConfig& c, int trial = 0) {
  const auto wps = trial_waypoints(c, trial);
  if (wps.empty()) throw ConfigError("trajectory has no waypoints");
  for (const auto& w : wps) {
    if (!(w.pos.x >= 0.0 && w.pos.x <= c.room_w && w.pos.y >= 0.0 && w.pos.y <= c.room_h)) {
      throw ConfigError("waypoint (" + csv::format(w.pos.x) + ", " + csv::format(w.pos.y) + ") is outside the room");
    }
    if (!(w.dwell_s >= 0.0)) throw ConfigError("negative dwell");
  }

  std::vector<detail::Leg> legs;
  double t = 0.0;
  legs.push_back({t, t + wps[0].dwell_s, wps[0].pos, wps[0].pos});
  t += wps[0].dwell_s;
  for (std::size_t i = 1; i < wps.size(); ++i) {
    const double d = distance(wps[i - 1].pos, wps[i].pos);
    if (d > 0.0) {
      if (!(wps[i].speed_mps > 0.0)) throw ConfigError("waypoint speed must be positive");
      legs.push_back({t, t + d / wps[i].speed_mps, wps[i - 1].pos, wps[i].pos});
      t += d / wps[i].speed_mps;
    }
    legs.push_back({t, t + wps[i].dwell_s, wps[i].pos, wps[i].pos});
    t += wps[i].dwell_s;
  }

  const double total = c.trial_duration_s > 0.0 ? c.trial_duration_s : t;
  const auto n = static_cast<std::size_t>(std::floor(total * c.capture_fps + 1e-9)) + 1;
  GroundTruthTrack g;
  g.samples.reserve(n);
  g.cells.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double tk = static_cast<double>(k) / c.capture_fps;
    const auto ts = static_cast<TimestampUs>(std::llround(tk * 1e6));
    const auto p = detail::position_at(legs, tk);
    g.samples.push_back({ts, p});
    g.cells.push_back({ts, cell_center(p, c.grid_pitch_m)});
  }
  return g;
}

namespace detail {

// Pixel offsets of the non-ankle COCO keypoints from the ankle anchor (standing figure).
inline constexpr std::array<std::array<double, 2>, 15> kBodyTemplate{{
    {0, -170},   // nose
    {-4, -174},  // left eye
    {4, -174},   // right eye
    {-9, -170},  // left ear
    {9, -170},   // right ear
    {-22, -140}, // left shoulder
    {22, -140},  // right shoulder
    {-28, -105}, // left elbow
    {28, -105},  // right elbow
    {-30, -72},  // left wrist
    {30, -72},   // right wrist
    {-12, -80},  // left hip
    {12, -80},   // right hip
    {-10, -40},  // left knee
    {10, -40},   // right knee
}};

}  // namespace detail

inline constexpr float kRenderedAnkleConfidence = 0.95F;
inline constexpr float kRenderedBodyConfidence = 0.5F;

inline PoseDetection render_person(PixelPoint anchor, double sigma_px, std::mt19937_64& rng) {
  PoseDetection d;
  for (std::size_t i = 0; i < detail::kBodyTemplate.size(); ++i) {
    d.keypoints[i] = {static_cast<float>(anchor.u + detail::kBodyTemplate[i][0]),
                      static_cast<float>(anchor.v + detail::kBodyTemplate[i][1]), kRenderedBodyConfidence};
  }
  std::normal_distribution<double> noise(0.0, 1.0);
  for (auto k : {Coco::left_ankle, Coco::right_ankle}) {
    const double du = sigma_px > 0.0 ? sigma_px * noise(rng) : 0.0;
    const double dv = sigma_px > 0.0 ? sigma_px * noise(rng) : 0.0;
    d[k] = {static_cast<float>(anchor.u + du), static_cast<float>(anchor.v + dv), kRenderedAnkleConfidence};
  }
  return d;
}

// One kp17 frame per truth sample (seq starting at 1). Samples the camera cannot see give
// zero-person frames.
inline std::vector<FrameMessage> render_keypoints(const GroundTruthTrack& truth, const CameraModel& camera,
                                                  double sigma_px, std::mt19937_64& rng) {
  if (!camera.depth_monotone()) {
    throw UnsupportedModelError("camera '" + camera.camera_id() + "' cannot be inverted for rendering");
  }
  if (!(sigma_px >= 0.0)) throw ConfigError("pixel noise must be >= 0");
  std::vector<FrameMessage> frames;
  frames.reserve(truth.samples.size());
  std::uint64_t seq = 0;
  for (const auto& s : truth.samples) {
    std::vector<PoseDetection> people;
    if (auto px = world_to_pixel(camera, s.pos)) people.push_back(render_person(*px, sigma_px, rng));
    frames.push_back(make_kp17_message(camera.camera_id(), ++seq, s.ts_us, people, camera.image_w(), camera.image_h()));
  }
  return frames;
}

struct TrialAccuracy {
  double mean_m{0.0};
  double sd_m{0.0};
  double min_m{0.0};
  double max_m{0.0};
  std::size_t n_matched{0};
  std::size_t n_unmatched{0};
};

// Matches each estimate to the nearest-in-time truth sample within the window; estimates with
// no truth inside the window are counted and skipped.
inline TrialAccuracy evaluate_accuracy(const Track& estimated, std::span<const TruthSample> truth,
                                       TimestampUs window_us = kMatchWindowUs) {
  if (estimated.empty() || truth.empty()) throw EvaluationError("estimated and truth tracks must be non-empty");
  for (std::size_t i = 1; i < truth.size(); ++i) {
    if (truth[i].ts_us <= truth[i - 1].ts_us) throw EvaluationError("truth timestamps must be strictly increasing");
  }
  std::vector<double> errors;
  errors.reserve(estimated.size());
  TrialAccuracy a;
  for (const auto& p : estimated.points) {
    auto it = std::lower_bound(truth.begin(), truth.end(), p.ts_us,
                               [](const TruthSample& s, TimestampUs t) { return s.ts_us < t; });
    const TruthSample* best = nullptr;
    if (it != truth.end()) best = &*it;
    if (it != truth.begin()) {
      const auto& prev = *std::prev(it);
      if (!best || p.ts_us - prev.ts_us <= best->ts_us - p.ts_us) best = &prev;
    }
    if (std::llabs(best->ts_us - p.ts_us) > window_us) {
      ++a.n_unmatched;
      continue;
    }
    errors.push_back(distance(p.pos, best->pos));
  }
  if (errors.empty()) throw EvaluationError("no estimate lies within the matching window of a truth sample");
  const auto s = summarize(errors);
  a.mean_m = s.mean;
  a.sd_m = s.sd;
  a.min_m = s.min;
  a.max_m = s.max;
  a.n_matched = s.n;
  return a;
}

struct TrialReport {
  int trial{0};
  TrialAccuracy accuracy;
  double fps{0.0};  // mean over cameras of per-camera delivery rate
  std::map<std::string, double> fps_by_camera;
  StationCounters counters;
};

struct AccuracyReport {
  double mean_m{0.0};  // mean of per-trial means
  double sd_m{0.0};    // sample SD of per-trial means
  double min_m{0.0};   // smallest per-trial mean
  double max_m{0.0};   // largest per-trial mean
  double fps_mean{0.0};
  double fps_sd{0.0};
  std::size_t n_trials{0};
  std::vector<TrialReport> per_trial;
};

inline AccuracyReport aggregate_trials(std::vector<TrialReport> trials) {
  if (trials.empty()) throw EvaluationError("no trials to aggregate");
  std::vector<double> means, fps;
  for (const auto& t : trials) {
    means.push_back(t.accuracy.mean_m);
    fps.push_back(t.fps);
  }
  const auto m = summarize(means);
  const auto f = summarize(fps);
  AccuracyReport r;
  r.mean_m = m.mean;
  r.sd_m = m.sd;
  r.min_m = m.min;
  r.max_m = m.max;
  r.fps_mean = f.mean;
  r.fps_sd = f.sd;
  r.n_trials = trials.size();
  r.per_trial = std::move(trials);
  return r;
}

inline nlohmann::ordered_json report_to_json(const AccuracyReport& r) {
  nlohmann::ordered_json j;
  j["mean_m"] = r.mean_m;
  j["sd_m"] = r.sd_m;
  j["min_m"] = r.min_m;
  j["max_m"] = r.max_m;
  j["fps_mean"] = r.fps_mean;
  j["fps_sd"] = r.fps_sd;
  j["n_trials"] = r.n_trials;
  j["per_trial"] = nlohmann::ordered_json::array();
  for (const auto& t : r.per_trial) {
    nlohmann::ordered_json e;
    e["trial"] = t.trial;
    e["mean_m"] = t.accuracy.mean_m;
    e["sd_m"] = t.accuracy.sd_m;
    e["min_m"] = t.accuracy.min_m;
    e["max_m"] = t.accuracy.max_m;
    e["n_matched"] = t.accuracy.n_matched;
    e["n_unmatched"] = t.accuracy.n_unmatched;
    e["fps"] = t.fps;
    e["fps_by_camera"] = t.fps_by_camera;
    e["frames_processed"] = t.counters.frames_processed;
    e["dropped_out_of_calibration"] = t.counters.dropped_out_of_calibration;
    j["per_trial"].push_back(std::move(e));
  }
  return j;
}

inline constexpr std::string_view kTruthCsvHeader = "ts_us,x_m,y_m";

inline void write_truth_csv(const std::string& path, std::span<const TruthSample> samples) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << kTruthCsvHeader << '\n';
  for (const auto& s : samples) out << s.ts_us << ',' << csv::format(s.pos.x) << ',' << csv::format(s.pos.y) << '\n';
}

inline std::vector<TruthSample> read_truth_csv(const std::string& path) {
  const auto lines = csv::read_lines(path);
  if (lines.empty() || csv::trim(lines[0]) != kTruthCsvHeader) {
    throw ConfigError(path + ": expected header '" + std::string(kTruthCsvHeader) + "'");
  }
  std::vector<TruthSample> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (csv::trim(lines[i]).empty()) continue;
    const auto f = csv::split(lines[i]);
    if (f.size() != 3) throw ConfigError(path + ":" + std::to_string(i + 1) + ": expected 3 fields");
    out.push_back({csv::parse<TimestampUs>(f[0], "ts_us"), {csv::parse<double>(f[1], "x_m"), csv::parse<double>(f[2], "y_m")}});
  }
  return out;
}

// gnuplot data file: blocks separated by two blank lines, so `index 2*i` is trial i's estimate
// and `index 2*i+1` its truth.
inline void write_xy_file(const std::string& path, const std::vector<std::pair<Track, std::vector<TruthSample>>>& trials) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  for (std::size_t i = 0; i < trials.size(); ++i) {
    out << "# trial " << i << " estimated\n";
    for (const auto& p : trials[i].first.points) out << csv::format(p.pos.x) << ' ' << csv::format(p.pos.y) << '\n';
    out << "\n\n# trial " << i << " truth\n";
    for (const auto& s : trials[i].second) out << csv::format(s.pos.x) << ' ' << csv::format(s.pos.y) << '\n';
    out << "\n\n";
  }
}

struct TrialResult {
  GroundTruthTrack truth;
  std::map<std::string, std::vector<FrameMessage>> streams;  // rendered frames per camera
  std::map<std::string, Track> camera_tracks;
  Track track;  // merged, IQR-filtered when enabled
  TrialReport report;
};

namespace detail {

// Sends the newest frame whose capture time has passed on a virtual clock that advances by
// `latency_us` per completed request.
inline void drive_lockstep(const net::Endpoint& station, std::span<const FrameMessage> frames, TimestampUs latency_us) {
  if (frames.empty()) return;
  ReqClient client(station);
  client.connect();
  TimestampUs now = frames.front().header.ts_us;
  std::size_t next = 0;  // first frame not yet eligible to send
  while (next < frames.size()) {
    auto newest = std::upper_bound(frames.begin() + static_cast<std::ptrdiff_t>(next), frames.end(), now,
                                   [](TimestampUs t, const FrameMessage& f) { return t < f.header.ts_us; });
    if (newest == frames.begin() + static_cast<std::ptrdiff_t>(next)) {
      now = frames[next].header.ts_us;  // idle until the next capture
      continue;
    }
    const auto& f = *std::prev(newest);
    if (!client.request(f)) throw TransportError("no reply for " + f.header.camera_id + " seq " + std::to_string(f.header.seq));
    next = static_cast<std::size_t>(newest - frames.begin());
    now += latency_us;
  }
}

}  // namespace detail

// One trial end to end: render every camera's stream, run the real station on a loopback port,
// drive one camera node per camera against it, then score the station's track.
// With `log_dir` set, the station's track log is written there as track_trialNN.csv.
inline TrialResult run_trial(const ScenarioConfig& c, int trial, const std::string& log_dir = {}) {
  c.validate();
  TrialResult r;
  r.truth = gen_trajectory(c, trial);

  auto rng = trial_rng(c.rng_seed, trial, 1);
  auto& streams = r.streams;
  std::map<std::string, CameraModel> models;
  for (const auto& cam : c.cameras) {
    streams.emplace(cam.camera_id(), render_keypoints(r.truth, cam, c.pixel_noise_px, rng));
    models.emplace(cam.camera_id(), cam);
  }

  StationConfig sc;
  sc.listen = {"127.0.0.1", 0};
  sc.mode = c.mode;
  sc.iqr = c.iqr;
  sc.merge = c.merge;
  sc.output_dir = log_dir;
  sc.trial = (trial < 10 ? "trial0" : "trial") + std::to_string(trial);
  sc.processing_delay_ms = c.detector_latency_ms * c.time_scale;
  GroundStation station(sc, models);
  station.start();
  const net::Endpoint ep{"127.0.0.1", station.port()};

  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(streams.size());
  std::size_t slot = 0;
  for (const auto& [id, frames] : streams) {
    threads.emplace_back([&, &frames = frames, err = &errors[slot++]] {
      try {
        if (c.clock == SimClock::lockstep) {
          detail::drive_lockstep(ep, frames, static_cast<TimestampUs>(std::llround(c.detector_latency_ms * 1000.0)));
          return;
        }
        CameraNode node(CameraNodeOptions{ep, c.mode});
        std::thread sender([&] { node.run(); });
        replay_paced(node.mailbox(), frames, c.time_scale);
        sender.join();
      } catch (...) {
        *err = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  if (c.mode == TransportMode::pubsub) {
    // Published frames may still be queued; the newest of each stream is always processed.
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(5);
    auto caught_up = [&] {
      const auto done = station.processed_timestamps();
      for (const auto& [id, frames] : streams) {
        auto it = done.find(id);
        if (it == done.end() || it->second.empty() || it->second.back() != frames.back().header.ts_us) return false;
      }
      return true;
    };
    while (!caught_up() && std::chrono::steady_clock::now() < deadline) {
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
  }
  station.stop();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  r.camera_tracks = station.tracks();
  r.track = station.final_track();
  r.report.trial = trial;
  r.report.counters = station.counters();
  r.report.accuracy = evaluate_accuracy(r.track, r.truth.select(c.truth));
  double fps_sum = 0.0;
  for (const auto& [id, ts] : station.processed_timestamps()) {
    if (ts.size() < 2 || ts.back() == ts.front()) continue;
    r.report.fps_by_camera[id] = fps_stats(ts);
    fps_sum += r.report.fps_by_camera[id];
  }
  if (!r.report.fps_by_camera.empty()) r.report.fps = fps_sum / static_cast<double>(r.report.fps_by_camera.size());
  return r;
}

}  // namespace gridtrack
