// Acceptance gate. Each criterion prints one [PASS]/[FAIL] line; the exit status is the number
// of failures.

#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "fixtures.hpp"
#include "gridtrack/gridtrack.hpp"
#include "oracles/oracles.hpp"
#include "oracles/reqrep_clock.hpp"

using namespace gridtrack;
using namespace std::chrono_literals;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s << std::setprecision(prec) << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ScenarioConfig room_scenario() {
  ScenarioConfig c;
  c.room_w = c.room_h = fixtures::kRoomSide;
  c.cameras = fixtures::room_cameras();
  c.capture_fps = 30.0;
  c.detector_latency_ms = 300.0;
  c.clock = SimClock::lockstep;
  c.time_scale = 0.0;
  c.rng_seed = 20240;
  return c;
}

double pipeline_mean_error(ScenarioConfig c, double sigma, int trials) {
  c.pixel_noise_px = sigma;
  std::vector<TrialReport> reports;
  for (int i = 0; i < trials; ++i) reports.push_back(run_trial(c, i).report);
  return aggregate_trials(std::move(reports)).mean_m;
}

// --- 1 ---

Outcome zero_noise_end_to_end() {
  const auto t0 = std::chrono::steady_clock::now();
  auto c = room_scenario();
  c.pixel_noise_px = 0.0;
  const auto r = run_trial(c, 0);
  const double secs = seconds_since(t0);
  const auto& a = r.report.accuracy;
  return {a.mean_m < 1e-6 && secs < 10.0 && r.camera_tracks.size() == 2,
          "mean " + fmt(a.mean_m) + " m (< 1e-6) over " + std::to_string(a.n_matched) + " points, " + fmt(secs, 3) +
              " s (< 10)"};
}

// --- 2 ---

// Mean world error of a noisy left-ankle anchor, by direct projection through the oracle camera
// at the frames a 300 ms REQ/REP receiver would take.
double monte_carlo_mean_error(const ScenarioConfig& c, double sigma, int trials, int draws_total) {
  std::mt19937_64 rng(777);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<oracle::Cam> cams;
  for (const auto& m : c.cameras) cams.push_back(fixtures::to_oracle(m));
  double sum_of_means = 0.0;
  for (int t = 0; t < trials; ++t) {
    const auto truth = gen_trajectory(c, t).samples;
    const auto sched = oracle::reqrep_schedule(c.capture_fps, static_cast<std::int64_t>(c.detector_latency_ms * 1000),
                                               truth.back().ts_us);
    struct Pair {
      const oracle::Cam* cam;
      double u, v, x, y;
    };
    std::vector<Pair> pairs;
    for (const auto& d : sched) {
      const auto& s = truth.at(d.seq);
      for (const auto& cam : cams) {
        if (auto px = oracle::world_to_pixel(cam, s.pos.x, s.pos.y)) pairs.push_back({&cam, px->first, px->second, s.pos.x, s.pos.y});
      }
    }
    std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
    double sum = 0.0;
    int kept = 0;
    while (kept < draws_total / trials) {
      const auto& p = pairs[pick(rng)];
      const double u = p.u + sigma * n01(rng);
      const double v = p.v + sigma * n01(rng);
      if (v < p.cam->vmin || v > p.cam->vmax || u < 0 || u >= p.cam->image_w) continue;  // station drops these
      const auto [x, y] = oracle::pixel_to_world(*p.cam, u, v);
      sum += std::hypot(x - p.x, y - p.y);
      ++kept;
    }
    sum_of_means += sum / kept;
  }
  return sum_of_means / trials;
}

Outcome noise_scaled_end_to_end() {
  const auto t0 = std::chrono::steady_clock::now();
  auto c = room_scenario();
  c.iqr = false;  // compared against unfiltered projection error
  const int trials = 20;
  std::map<double, double> err;
  for (double s : {0.0, 1.0, 2.0, 4.0}) err[s] = pipeline_mean_error(c, s, trials);
  const double mc = monte_carlo_mean_error(c, 2.0, trials, 100000);
  const double secs = seconds_since(t0);
  const double rel = std::fabs(err[2.0] - mc) / mc;
  const bool monotone = err[0.0] <= err[1.0] && err[1.0] <= err[2.0] && err[2.0] <= err[4.0];
  return {rel <= 0.10 && monotone && secs < 120.0,
          "sigma=2: pipeline " + fmt(err[2.0]) + " m vs oracle " + fmt(mc) + " m (rel " + fmt(rel, 3) +
              " <= 0.10); by sigma 0/1/2/4: " + fmt(err[0.0], 3) + " " + fmt(err[1.0], 3) + " " + fmt(err[2.0], 3) + " " +
              fmt(err[4.0], 3) + (monotone ? " monotone" : " NOT monotone") + ", " + fmt(secs, 3) + " s (< 120)"};
}

// --- 3 ---

Outcome fps_throttling() {
  const auto t0 = std::chrono::steady_clock::now();
  auto c = room_scenario();
  c.trajectory = {{{1.8, 1.8}, 1.0, 10.0}};
  c.clock = SimClock::wall;
  c.time_scale = 1.0;  // real 300 ms sleep per frame at the station
  const auto r = run_trial(c, 0);
  const double secs = seconds_since(t0);
  bool ok = r.report.fps_by_camera.size() == 2 && secs < 60.0;
  std::string detail;
  for (const auto& [id, fps] : r.report.fps_by_camera) {
    ok = ok && fps >= 3.13 && fps <= 3.53;
    detail += id + " " + fmt(fps) + " fps, ";
  }
  return {ok, detail + "band [3.13, 3.53], " + fmt(secs, 3) + " s (< 60)"};
}

// --- 4 ---

Outcome iqr_oracle() {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> len(1, 300);
  std::normal_distribution<double> body(0.0, 1.0);
  std::uniform_real_distribution<double> wild(-60.0, 60.0);
  std::bernoulli_distribution outlier(0.05), coarse(0.3);
  int mismatches = 0;
  std::size_t removed = 0;
  for (int s = 0; s < 1000; ++s) {
    const int n = len(rng);
    const bool round = coarse(rng);  // coarse values force ties at the quartiles
    Track t;
    std::vector<double> xs, ys;
    for (int i = 0; i < n; ++i) {
      double x = outlier(rng) ? wild(rng) : body(rng);
      double y = outlier(rng) ? wild(rng) : 3.0 + body(rng);
      if (round) {
        x = std::round(x * 2) / 2;
        y = std::round(y * 2) / 2;
      }
      xs.push_back(x);
      ys.push_back(y);
      t.push({static_cast<TimestampUs>(i), {x, y}, "cam", 0, PointSource::pose});
    }
    const auto kept = iqr_filter(t);
    const auto want = oracle::iqr_keep(xs, ys);
    bool same = kept.size() == want.size();
    for (std::size_t i = 0; same && i < want.size(); ++i) {
      const auto& p = kept.points[i];
      same = p.ts_us == static_cast<TimestampUs>(want[i]) && p.pos.x == xs[want[i]] && p.pos.y == ys[want[i]];
    }
    mismatches += same ? 0 : 1;
    removed += t.size() - kept.size();
  }
  return {mismatches == 0, std::to_string(mismatches) + " of 1000 series differ from brute force (" +
                               std::to_string(removed) + " points removed in total)"};
}

// --- 5 ---

Outcome geometry_round_trip() {
  std::mt19937_64 rng(5);
  double worst_round = 0.0, worst_oracle = 0.0, worst_resid = 0.0;
  std::size_t points = 0, missing = 0;
  const int models = 10;
  for (int k = 0; k < models; ++k) {
    const auto m = fixtures::random_model(rng);
    const auto oc = fixtures::to_oracle(m);
    std::uniform_real_distribution<double> u(0.5, m.image_w() - 0.5), v(oc.vmin, oc.vmax);
    for (int i = 0; i < 10000; ++i) {
      const double pu = u(rng), pv = v(rng);
      const auto [x, y] = oracle::pixel_to_world(oc, pu, pv);
      const auto lib = pixel_to_world(m, pu, pv);
      worst_oracle = std::max(worst_oracle, std::hypot(lib.x - x, lib.y - y));
      const auto px = world_to_pixel(m, {x, y});
      ++points;
      if (!px) {
        ++missing;
        continue;
      }
      const auto back = pixel_to_world(m, *px);
      worst_round = std::max(worst_round, std::hypot(back.x - x, back.y - y));
    }

    // Residuals of a noisy calibration fit against a normal-equations solve (rows centered for
    // the oracle's conditioning; fitted values do not depend on the shift).
    std::normal_distribution<double> noise(0.0, 0.05);
    std::vector<double> rows, depth, centered;
    for (const auto& s : fixtures::pinhole_samples(500.0, 2.5, 60.0, oc.vmin, oc.vmax, 24)) {
      rows.push_back(s.row_px);
      depth.push_back(s.depth_m + noise(rng));
    }
    double mean = 0.0;
    for (double r : rows) mean += r / static_cast<double>(rows.size());
    for (double r : rows) centered.push_back(r - mean);
    const auto fit = fit_polynomial(rows, depth, 3);
    const auto ref = oracle::normal_equations_fit(centered, depth, 3);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double r_lib = poly_eval(fit.coeffs, rows[i]) - depth[i];
      const double r_ref = static_cast<double>(oracle::poly(ref, centered[i])) - depth[i];
      worst_resid = std::max(worst_resid, std::fabs(r_lib - r_ref));
    }
  }
  return {worst_round < 1e-6 && worst_oracle < 1e-6 && worst_resid < 1e-9 && missing == 0,
          std::to_string(points) + " points on " + std::to_string(models) + " models: round trip max " +
              fmt(worst_round, 3) + " m (< 1e-6), vs oracle " + fmt(worst_oracle, 3) + " m, " +
              std::to_string(missing) + " not invertible; fit residuals vs normal equations max " +
              fmt(worst_resid, 3) + " (< 1e-9)"};
}

// --- 6 ---

Outcome ar_recovery() {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> coef(-0.45, 0.45), drive(-2.0, 2.0);
  double worst = 0.0;
  for (int rep = 0; rep < 10; ++rep) {
    Eigen::Vector2d c;
    Eigen::Matrix2d A1, A2, B1, B2;
    while (true) {
      c = {coef(rng), coef(rng)};
      for (auto* m : {&A1, &A2, &B1, &B2}) *m << coef(rng), coef(rng), coef(rng), coef(rng);
      Eigen::Matrix4d comp = Eigen::Matrix4d::Zero();
      comp.block<2, 2>(0, 0) = A1;
      comp.block<2, 2>(0, 2) = A2;
      comp.block<2, 2>(2, 0) = Eigen::Matrix2d::Identity();
      if (comp.eigenvalues().cwiseAbs().maxCoeff() < 0.95) break;
    }
    std::vector<WorldPoint> robot, evac{{0.2, -0.3}, {0.1, 0.4}};
    const std::size_t n = 400;
    for (std::size_t i = 0; i < n; ++i) robot.push_back({drive(rng), drive(rng)});
    for (std::size_t t = 1; t + 1 < n; ++t) {
      const Eigen::Vector2d z = c + A1 * Eigen::Vector2d(evac[t].x, evac[t].y) +
                                A2 * Eigen::Vector2d(evac[t - 1].x, evac[t - 1].y) +
                                B1 * Eigen::Vector2d(robot[t].x, robot[t].y) +
                                B2 * Eigen::Vector2d(robot[t - 1].x, robot[t - 1].y);
      evac.push_back({z.x(), z.y()});
    }
    const auto m = fit_ar(evac, robot, 2);
    worst = std::max({worst, (m.c - c).cwiseAbs().maxCoeff(), (m.A[0] - A1).cwiseAbs().maxCoeff(),
                      (m.A[1] - A2).cwiseAbs().maxCoeff(), (m.B[0] - B1).cwiseAbs().maxCoeff(),
                      (m.B[1] - B2).cwiseAbs().maxCoeff()});
  }

  // Constant-velocity walk logged at 10 Hz, resampled to the 0.25 s grid, fit with p = 4 on the
  // first 30 steps, then rolled out over the next 16 and overlaid on the truth.
  Track walk;
  const WorldPoint start{0.5, 3.0};
  const WorldPoint vel{0.8, -0.35};  // m/s
  for (int i = 0; i <= 120; ++i) {
    const double t = 0.1 * i;
    walk.push({static_cast<TimestampUs>(i) * 100000, {start.x + vel.x * t, start.y + vel.y * t}, "cam", 0,
               PointSource::pose});
  }
  const auto series = resample_uniform(walk);
  const std::size_t fit_n = 30, horizon = 16;
  const std::span<const WorldPoint> hist(series.pos.data(), fit_n);
  const auto model = fit_ar(hist, kDefaultLagOrder);
  const auto roll = rollout(model, hist, {}, horizon);
  double sq = 0.0;
  for (std::size_t k = 0; k < horizon; ++k) {
    const double t = series.dt_us * static_cast<double>(fit_n + k) / 1e6;
    sq += std::pow(roll[k].x - (start.x + vel.x * t), 2) + std::pow(roll[k].y - (start.y + vel.y * t), 2);
  }
  const double rmse = std::sqrt(sq / horizon);
  return {worst < 1e-6 && rmse < 1e-9, "AR(2)+robot max coefficient error " + fmt(worst, 3) +
                                           " (< 1e-6); constant-velocity rollout rmse " + fmt(rmse, 3) + " m (< 1e-9)"};
}

// --- 7 ---

FrameMessage random_message(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> enc(0, 2), dim(0, 48), persons(0, 4), byte(0, 255), idlen(1, 64);
  std::uniform_int_distribution<std::uint64_t> seq;
  std::uniform_int_distribution<std::int64_t> ts(0, std::int64_t{1} << 52);
  std::uniform_real_distribution<float> coord(-1000.0F, 1000.0F), conf(0.0F, 1.0F);
  FrameMessage m;
  std::string id;
  const int n = idlen(rng);
  for (int i = 0; i < n; ++i) id.push_back(static_cast<char>(0x21 + byte(rng) % 94));
  m.header = {id, seq(rng), ts(rng), dim(rng), dim(rng), static_cast<Encoding>(enc(rng))};
  if (m.header.encoding == Encoding::kp17) {
    std::vector<PoseDetection> d(static_cast<std::size_t>(persons(rng)));
    for (auto& p : d) {
      for (auto& k : p.keypoints) k = {coord(rng), coord(rng), conf(rng)};
    }
    m.payload = encode_kp17(d);
    return m;
  }
  m.payload.resize(m.header.encoding == Encoding::raw8 ? static_cast<std::size_t>(m.header.width * m.header.height)
                                                       : static_cast<std::size_t>(dim(rng)));
  for (auto& b : m.payload) b = static_cast<std::byte>(byte(rng));
  return m;
}

Outcome transport_conformance() {
  std::vector<std::string> problems;

  // Codec: encode/decode identity, and every proper prefix rejected.
  std::mt19937_64 rng(7);
  int codec_bad = 0, prefix_accepted = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto m = random_message(rng);
    const auto bytes = encode_frame(m);
    const auto back = decode_frame(bytes);
    if (!(back == m) || encode_frame(back) != bytes) ++codec_bad;
    std::uniform_int_distribution<std::size_t> cut(0, bytes.size() - 1);
    try {
      decode_frame(std::span(bytes).first(cut(rng)));
      ++prefix_accepted;
    } catch (const Error&) {
    }
  }
  if (codec_bad || prefix_accepted) {
    problems.push_back(std::to_string(codec_bad) + " round-trip failures, " + std::to_string(prefix_accepted) +
                       " truncations accepted");
  }

  // Live REQ/REP: a 30 fps sender against a 60 ms receiver.
  std::mutex mu;
  std::vector<std::uint64_t> received;
  std::atomic<int> in_flight{0}, max_in_flight{0};
  SessionServer server({"127.0.0.1", 0}, TransportMode::reqrep,
                       {[&](FrameMessage&& m) {
                          const int now = ++in_flight;
                          int prev = max_in_flight.load();
                          while (now > prev && !max_in_flight.compare_exchange_weak(prev, now)) {
                          }
                          {
                            std::lock_guard lock(mu);
                            received.push_back(m.header.seq);
                          }
                          std::this_thread::sleep_for(60ms);
                          --in_flight;
                        },
                        {}});
  server.start();
  CameraNode node(CameraNodeOptions{{"127.0.0.1", server.port()}});
  std::vector<FrameMessage> frames;
  for (std::uint64_t k = 1; k <= 60; ++k) {
    frames.push_back(make_kp17_message("cam0", k, static_cast<TimestampUs>(k) * 33333, std::vector<PoseDetection>{}));
  }
  std::thread capture([&] { replay_paced(node.mailbox(), frames); });
  const auto stats = node.run();
  capture.join();
  server.stop();
  bool increasing = !received.empty();
  for (std::size_t i = 1; i < received.size(); ++i) increasing = increasing && received[i] > received[i - 1];
  const auto ss = server.stats();
  if (!increasing) problems.push_back("received seqs not strictly increasing");
  if (received != stats.sent_seqs) problems.push_back("received seqs differ from sent seqs");
  if (stats.acked != stats.sent || ss.reps != ss.framed) problems.push_back("REP count differs from message count");
  if (max_in_flight.load() != 1) problems.push_back("more than one message in flight on a session");

  // A second send before the REP is refused on the client side.
  bool violation = false;
  {
    net::Listener listener({"127.0.0.1", 0});
    ReqClient client({"127.0.0.1", listener.port()});
    client.connect();
    auto peer = listener.accept(1000ms);
    client.send(frames[0]);
    try {
      client.send(frames[1]);
    } catch (const ProtocolViolationError&) {
      violation = true;
    }
  }
  if (!violation) problems.push_back("second outstanding send was not refused");

  // Conflation against a max-seq scan over the arrival log.
  std::uniform_int_distribution<std::uint64_t> seq(0, 3000);
  std::uniform_int_distribution<int> sender(0, 3);
  int conflation_bad = 0;
  for (int round = 0; round < 20; ++round) {
    ConflationMap map;
    std::vector<std::pair<std::string, std::uint64_t>> arrivals;
    for (int i = 0; i < 2000; ++i) {
      arrivals.emplace_back("cam" + std::to_string(sender(rng)), seq(rng));
      map.offer(make_kp17_message(arrivals.back().first, arrivals.back().second, 0, std::vector<PoseDetection>{}));
    }
    std::map<std::string, std::uint64_t> want;
    for (const auto& [cam, s] : arrivals) {
      bool newer = true;
      for (const auto& [cam2, s2] : arrivals) newer = newer && !(cam2 == cam && s2 > s);
      if (newer) want[cam] = s;
    }
    conflation_bad += map.seq_snapshot() == want ? 0 : 1;
  }
  if (conflation_bad) problems.push_back(std::to_string(conflation_bad) + " conflation rounds differ from max-seq scan");

  std::string detail = "10000 fuzzed messages; " + std::to_string(received.size()) + " of 60 frames delivered in order with " +
                       std::to_string(ss.reps) + " REPs; 20 conflation rounds";
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty(), detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"zero-noise end-to-end", zero_noise_end_to_end},
      {"noise-scaled end-to-end", noise_scaled_end_to_end},
      {"fps throttling", fps_throttling},
      {"iqr oracle", iqr_oracle},
      {"geometry round trip", geometry_round_trip},
      {"ar recovery", ar_recovery},
      {"transport conformance", transport_conformance},
  };
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << name << ": " << o.detail << std::endl;
    failures += o.pass ? 0 : 1;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures;
}
