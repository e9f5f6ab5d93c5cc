#pragma once

#include <cmath>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "csv.hpp"
#include "error.hpp"
#include "tracking.hpp"
#include "types.hpp"

namespace gridtrack {

inline constexpr double kPredictionStepS = 0.25;
inline constexpr int kDefaultLagOrder = 4;

// Positions on a uniform time grid: t0_us + i * dt_us.
struct UniformSeries {
  TimestampUs t0_us{0};
  TimestampUs dt_us{0};
  std::vector<WorldPoint> pos;

  TimestampUs time_at(std::size_t i) const { return t0_us + static_cast<TimestampUs>(i) * dt_us; }
};

namespace detail {

inline WorldPoint interpolate_at(const Track& track, TimestampUs t) {
  const auto& pts = track.points;
  auto hi = std::lower_bound(pts.begin(), pts.end(), t, [](const TrackPoint& p, TimestampUs v) { return p.ts_us < v; });
  if (hi == pts.begin()) return pts.front().pos;
  if (hi == pts.end()) return pts.back().pos;
  if (hi->ts_us == t) return hi->pos;
  const auto lo = std::prev(hi);
  const double w = static_cast<double>(t - lo->ts_us) / static_cast<double>(hi->ts_us - lo->ts_us);
  return {lo->pos.x + w * (hi->pos.x - lo->pos.x), lo->pos.y + w * (hi->pos.y - lo->pos.y)};
}

}  // namespace detail

// Linear interpolation of a track onto the grid t_first, t_first + dt, ... <= t_last.
inline UniformSeries resample_uniform(const Track& track, double dt_s = kPredictionStepS) {
  if (!(dt_s > 0.0)) throw InsufficientDataError("resample step must be positive");
  const auto dt_us = static_cast<TimestampUs>(std::llround(dt_s * 1e6));
  if (track.size() < 2) throw InsufficientDataError("track too short to resample");
  const TimestampUs t0 = track.points.front().ts_us;
  const TimestampUs t1 = track.points.back().ts_us;
  if (t1 - t0 < 2 * dt_us) throw InsufficientDataError("track spans less than two resample steps");
  UniformSeries out{t0, dt_us, {}};
  for (TimestampUs t = t0; t <= t1; t += dt_us) out.pos.push_back(detail::interpolate_at(track, t));
  return out;
}

// Samples a track at the grid of `like`, holding end values outside the track's span.
inline UniformSeries resample_like(const Track& track, const UniformSeries& like) {
  if (track.empty()) throw InsufficientDataError("empty track");
  UniformSeries out{like.t0_us, like.dt_us, {}};
  out.pos.reserve(like.pos.size());
  for (std::size_t i = 0; i < like.pos.size(); ++i) out.pos.push_back(detail::interpolate_at(track, like.time_at(i)));
  return out;
}

/// Vector autoregressive one-step predictor on a uniform grid:
///   z[t+1] = c + sum_i A_i z[t-i+1] + sum_i B_i r[t-i+1]
/// z is the evacuee position, r the robot position (B all zero when fit without a robot).
struct ARModel {
  int p{1};
  double dt_s{kPredictionStepS};
  Eigen::Vector2d c{Eigen::Vector2d::Zero()};
  std::vector<Eigen::Matrix2d> A;
  std::vector<Eigen::Matrix2d> B;
  double fit_rmse_m{0.0};

  bool uses_robot() const {
    for (const auto& b : B) {
      if (!b.isZero(0.0)) return true;
    }
    return false;
  }
};

inline std::size_t min_ar_samples(int p) { return static_cast<std::size_t>(4 * p + 10); }

namespace detail {

inline Eigen::Vector2d vec(const WorldPoint& p) { return {p.x, p.y}; }

// Regressor for predicting index t+1 from the lags ending at t.
inline void fill_regressor(Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row, std::span<const WorldPoint> evac,
                           std::span<const WorldPoint> robot, std::size_t t, int p) {
  row(0) = 1.0;
  for (int i = 0; i < p; ++i) {
    row(1 + 2 * i) = evac[t - i].x;
    row(2 + 2 * i) = evac[t - i].y;
  }
  if (!robot.empty()) {
    const int base = 1 + 2 * p;
    for (int i = 0; i < p; ++i) {
      row(base + 2 * i) = robot[t - i].x;
      row(base + 1 + 2 * i) = robot[t - i].y;
    }
  }
}

}  // namespace detail

// Ordinary least squares; rank-deficient regressors get the minimum-norm solution.
inline ARModel fit_ar(std::span<const WorldPoint> evac, std::span<const WorldPoint> robot, int p,
                      double dt_s = kPredictionStepS) {
  if (p < 1) throw InsufficientDataError("lag order must be >= 1");
  if (evac.size() < min_ar_samples(p)) {
    throw InsufficientDataError("AR(" + std::to_string(p) + ") needs at least " + std::to_string(min_ar_samples(p)) +
                                " samples, got " + std::to_string(evac.size()));
  }
  if (!robot.empty() && robot.size() != evac.size()) throw InsufficientDataError("robot series length differs");

  const auto n = evac.size();
  const auto rows = static_cast<Eigen::Index>(n - static_cast<std::size_t>(p));
  const Eigen::Index cols = 1 + 2 * p + (robot.empty() ? 0 : 2 * p);
  Eigen::MatrixXd X(rows, cols);
  Eigen::MatrixXd Y(rows, 2);
  for (std::size_t t = static_cast<std::size_t>(p) - 1; t + 1 < n; ++t) {
    const auto r = static_cast<Eigen::Index>(t + 1 - static_cast<std::size_t>(p));
    detail::fill_regressor(X.row(r), evac, robot, t, p);
    Y(r, 0) = evac[t + 1].x;
    Y(r, 1) = evac[t + 1].y;
  }
  const Eigen::MatrixXd theta = X.completeOrthogonalDecomposition().solve(Y);

  ARModel m;
  m.p = p;
  m.dt_s = dt_s;
  m.c = theta.row(0).transpose();
  for (int i = 0; i < p; ++i) {
    m.A.push_back(theta.block(1 + 2 * i, 0, 2, 2).transpose());
    m.B.push_back(robot.empty() ? Eigen::Matrix2d::Zero() : Eigen::Matrix2d(theta.block(1 + 2 * p + 2 * i, 0, 2, 2).transpose()));
  }
  const Eigen::MatrixXd resid = X * theta - Y;
  m.fit_rmse_m = std::sqrt(resid.squaredNorm() / static_cast<double>(rows));
  return m;
}

inline ARModel fit_ar(std::span<const WorldPoint> evac, int p, double dt_s = kPredictionStepS) {
  return fit_ar(evac, {}, p, dt_s);
}

// One step ahead from windows whose last element is the current sample.
inline WorldPoint predict_next(const ARModel& m, std::span<const WorldPoint> evac_window,
                               std::span<const WorldPoint> robot_window = {}) {
  const auto p = static_cast<std::size_t>(m.p);
  if (evac_window.size() < p) throw InsufficientDataError("evacuee window shorter than lag order");
  if (m.uses_robot() && robot_window.size() < p) throw InsufficientDataError("robot window shorter than lag order");
  Eigen::Vector2d z = m.c;
  const auto te = evac_window.size() - 1;
  for (std::size_t i = 0; i < p; ++i) z += m.A[i] * detail::vec(evac_window[te - i]);
  if (m.uses_robot()) {
    const auto tr = robot_window.size() - 1;
    for (std::size_t i = 0; i < p; ++i) z += m.B[i] * detail::vec(robot_window[tr - i]);
  }
  return {z.x(), z.y()};
}

// k steps, feeding predictions back in. Future robot positions come from `robot_future` when
// given; past its end the last known robot position is held.
inline std::vector<WorldPoint> rollout(const ARModel& m, std::span<const WorldPoint> evac_window,
                                       std::span<const WorldPoint> robot_window, std::size_t k,
                                       std::span<const WorldPoint> robot_future = {}) {
  std::vector<WorldPoint> evac(evac_window.begin(), evac_window.end());
  std::vector<WorldPoint> robot(robot_window.begin(), robot_window.end());
  std::vector<WorldPoint> out;
  out.reserve(k);
  for (std::size_t step = 0; step < k; ++step) {
    const auto next = predict_next(m, evac, robot);
    out.push_back(next);
    evac.push_back(next);
    if (!robot.empty()) robot.push_back(step < robot_future.size() ? robot_future[step] : robot.back());
  }
  return out;
}

struct PredictionRow {
  TimestampUs ts_us{0};
  WorldPoint predicted;
  WorldPoint actual;
};

struct PredictionEval {
  std::vector<PredictionRow> rows;
  double rmse_m{0.0};
};

// One-step predictions across a series, each from the true history up to the previous sample.
inline PredictionEval evaluate_predictions(const ARModel& m, const UniformSeries& evac,
                                           const std::optional<UniformSeries>& robot = std::nullopt) {
  const auto p = static_cast<std::size_t>(m.p);
  if (evac.pos.size() <= p) throw InsufficientDataError("series shorter than lag order + 1");
  std::span<const WorldPoint> all_robot;
  if (robot) all_robot = robot->pos;
  PredictionEval out;
  double sq = 0.0;
  for (std::size_t t = p - 1; t + 1 < evac.pos.size(); ++t) {
    const auto ew = std::span(evac.pos).first(t + 1);
    const auto rw = all_robot.empty() ? all_robot : all_robot.first(t + 1);
    const auto pred = predict_next(m, ew, rw);
    const auto& actual = evac.pos[t + 1];
    out.rows.push_back({evac.time_at(t + 1), pred, actual});
    sq += (pred.x - actual.x) * (pred.x - actual.x) + (pred.y - actual.y) * (pred.y - actual.y);
  }
  out.rmse_m = std::sqrt(sq / static_cast<double>(out.rows.size()));
  return out;
}

inline nlohmann::ordered_json ar_model_to_json(const ARModel& m) {
  auto mat = [](const Eigen::Matrix2d& a) {
    return nlohmann::ordered_json::array({{a(0, 0), a(0, 1)}, {a(1, 0), a(1, 1)}});
  };
  nlohmann::ordered_json j;
  j["p"] = m.p;
  j["dt_s"] = m.dt_s;
  j["c"] = {m.c.x(), m.c.y()};
  j["A"] = nlohmann::ordered_json::array();
  j["B"] = nlohmann::ordered_json::array();
  for (const auto& a : m.A) j["A"].push_back(mat(a));
  for (const auto& b : m.B) j["B"].push_back(mat(b));
  j["fit_rmse_m"] = m.fit_rmse_m;
  return j;
}

inline ARModel ar_model_from_json(const nlohmann::json& j) {
  try {
    ARModel m;
    m.p = j.at("p").get<int>();
    m.dt_s = j.at("dt_s").get<double>();
    const auto c = j.at("c").get<std::vector<double>>();
    if (m.p < 1 || c.size() != 2) throw ConfigError("bad AR model shape");
    m.c = {c[0], c[1]};
    auto read = [&](const char* key) {
      std::vector<Eigen::Matrix2d> out;
      const auto arr = j.at(key).get<std::vector<std::vector<std::vector<double>>>>();
      if (arr.size() != static_cast<std::size_t>(m.p)) throw ConfigError(std::string(key) + " needs p matrices");
      for (const auto& a : arr) {
        if (a.size() != 2 || a[0].size() != 2 || a[1].size() != 2) throw ConfigError("AR matrices must be 2x2");
        Eigen::Matrix2d mat;
        mat << a[0][0], a[0][1], a[1][0], a[1][1];
        out.push_back(mat);
      }
      return out;
    };
    m.A = read("A");
    m.B = read("B");
    m.fit_rmse_m = j.value("fit_rmse_m", 0.0);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad AR model: ") + e.what());
  }
}

inline constexpr std::string_view kPredictionLogHeader = "ts_us,pred_x_m,pred_y_m,actual_x_m,actual_y_m";

inline void write_prediction_log(const std::string& path, const PredictionEval& eval) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << kPredictionLogHeader << '\n';
  for (const auto& r : eval.rows) {
    out << r.ts_us << ',' << csv::format(r.predicted.x) << ',' << csv::format(r.predicted.y) << ','
        << csv::format(r.actual.x) << ',' << csv::format(r.actual.y) << '\n';
  }
}

}  // namespace gridtrack
