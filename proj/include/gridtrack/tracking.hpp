#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "frame_codec.hpp"
#include "geometry.hpp"
#include "types.hpp"

namespace gridtrack {

enum class PointSource { pose, bbox };

inline std::string_view to_string(PointSource s) { return s == PointSource::pose ? "pose" : "bbox"; }

inline PointSource parse_point_source(std::string_view s) {
  if (s == "pose") return PointSource::pose;
  if (s == "bbox") return PointSource::bbox;
  throw ConfigError("unknown point source '" + std::string(s) + "'");
}

struct TrackPoint {
  TimestampUs ts_us{0};
  WorldPoint pos;
  std::string camera_id;
  int person_tag{0};
  PointSource source{PointSource::pose};

  friend bool operator==(const TrackPoint&, const TrackPoint&) = default;
};

// Points ordered by non-decreasing timestamp.
struct Track {
  std::vector<TrackPoint> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  // Keeps ordering; an out-of-order point is placed after every point with ts <= its own.
  void push(TrackPoint p) {
    if (points.empty() || points.back().ts_us <= p.ts_us) {
      points.push_back(std::move(p));
      return;
    }
    auto at = std::upper_bound(points.begin(), points.end(), p.ts_us,
                               [](TimestampUs t, const TrackPoint& q) { return t < q.ts_us; });
    points.insert(at, std::move(p));
  }

  std::vector<TimestampUs> timestamps() const {
    std::vector<TimestampUs> ts;
    ts.reserve(points.size());
    for (const auto& p : points) ts.push_back(p.ts_us);
    return ts;
  }
};

// Converts one anchor pixel to a track point, or nullopt when the pixel is outside the
// camera's calibrated rows or image columns.
inline std::optional<TrackPoint> ingest_detection(const CameraModel& model, const FrameHeader& header, PixelPoint anchor,
                                                  int person_tag = 0, PointSource source = PointSource::pose) {
  try {
    return TrackPoint{header.ts_us, pixel_to_world(model, anchor), header.camera_id, person_tag, source};
  } catch (const OutOfCalibrationError&) {
    return std::nullopt;
  }
}

struct IngestCounters {
  std::uint64_t ingested{0};
  std::uint64_t dropped_out_of_calibration{0};
};

/// Shared per-camera track state. ingest() may be called from any number of session threads;
/// writes are appends under one lock and readers get copies.
class Tracker {
 public:
  explicit Tracker(std::map<std::string, CameraModel> models) : models_(std::move(models)) {}

  bool knows(const std::string& camera_id) const { return models_.contains(camera_id); }

  const CameraModel& model(const std::string& camera_id) const {
    auto it = models_.find(camera_id);
    if (it == models_.end()) throw ConfigError("no camera model for '" + camera_id + "'");
    return it->second;
  }

  std::optional<TrackPoint> ingest(const FrameHeader& header, PixelPoint anchor, int person_tag = 0,
                                   PointSource source = PointSource::pose) {
    auto point = ingest_detection(model(header.camera_id), header, anchor, person_tag, source);
    std::lock_guard lock(mu_);
    if (!point) {
      ++counters_.dropped_out_of_calibration;
      return std::nullopt;
    }
    ++counters_.ingested;
    tracks_[point->camera_id].push(*point);
    auto& latest = latest_[point->person_tag];
    if (!latest || latest->ts_us <= point->ts_us) latest = *point;
    return point;
  }

  std::map<std::string, Track> snapshot() const {
    std::lock_guard lock(mu_);
    return tracks_;
  }

  std::optional<TrackPoint> latest(int person_tag = 0) const {
    std::lock_guard lock(mu_);
    auto it = latest_.find(person_tag);
    if (it == latest_.end()) return std::nullopt;
    return it->second;
  }

  IngestCounters counters() const {
    std::lock_guard lock(mu_);
    return counters_;
  }

 private:
  std::map<std::string, CameraModel> models_;
  mutable std::mutex mu_;
  std::map<std::string, Track> tracks_;
  std::map<int, std::optional<TrackPoint>> latest_;
  IngestCounters counters_;
};

// Quantile of sorted values by linear interpolation at position p * (n - 1).
inline double quantile_linear(std::span<const double> sorted, double p) {
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= sorted.size()) return sorted[lo];
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

struct IqrBounds {
  double lo{0.0};
  double hi{0.0};

  bool contains(double v) const { return v >= lo && v <= hi; }
};

inline IqrBounds iqr_bounds(std::vector<double> values, double k) {
  std::sort(values.begin(), values.end());
  const double q1 = quantile_linear(values, 0.25);
  const double q3 = quantile_linear(values, 0.75);
  const double iqr = q3 - q1;
  return {q1 - k * iqr, q3 + k * iqr};
}

inline constexpr double kIqrFactor = 1.5;

// Drops points whose x or y falls outside [Q1 - k*IQR, Q3 + k*IQR] computed per axis over the
// whole track. One pass; tracks shorter than 4 points are returned as-is.
inline Track iqr_filter(const Track& track, double k = kIqrFactor) {
  if (track.size() < 4) return track;
  std::vector<double> xs;
  std::vector<double> ys;
  xs.reserve(track.size());
  ys.reserve(track.size());
  for (const auto& p : track.points) {
    xs.push_back(p.pos.x);
    ys.push_back(p.pos.y);
  }
  const auto bx = iqr_bounds(std::move(xs), k);
  const auto by = iqr_bounds(std::move(ys), k);
  Track out;
  for (const auto& p : track.points) {
    if (bx.contains(p.pos.x) && by.contains(p.pos.y)) out.points.push_back(p);
  }
  return out;
}

enum class MergeMode { concat, window_average };

inline MergeMode parse_merge_mode(std::string_view s) {
  if (s == "concat") return MergeMode::concat;
  if (s == "window-average") return MergeMode::window_average;
  throw ConfigError("unknown merge mode '" + std::string(s) + "'");
}

inline constexpr TimestampUs kMergeWindowUs = 150'000;

/// Merges per-camera tracks into one. concat: every point, stably sorted by time.
/// window_average: additionally, a point is grouped with at most one point from each other
/// camera within the window after it; a group spanning two or more cameras becomes its centroid
/// stamped with the earliest time.
inline Track merge_camera_tracks(std::span<const Track> tracks, MergeMode mode = MergeMode::concat,
                                 TimestampUs window_us = kMergeWindowUs) {
  Track all;
  for (const auto& t : tracks) all.points.insert(all.points.end(), t.points.begin(), t.points.end());
  std::stable_sort(all.points.begin(), all.points.end(),
                   [](const TrackPoint& a, const TrackPoint& b) { return a.ts_us < b.ts_us; });
  if (mode == MergeMode::concat) return all;

  const auto n = all.points.size();
  std::vector<bool> used(n, false);
  Track out;
  for (std::size_t i = 0; i < n; ++i) {
    if (used[i]) continue;
    used[i] = true;
    const auto& first = all.points[i];
    std::vector<std::size_t> group{i};
    std::vector<std::string_view> cams{first.camera_id};
    for (std::size_t j = i + 1; j < n && all.points[j].ts_us - first.ts_us <= window_us; ++j) {
      const auto& q = all.points[j];
      if (used[j] || q.person_tag != first.person_tag) continue;
      if (std::find(cams.begin(), cams.end(), q.camera_id) != cams.end()) continue;
      cams.push_back(q.camera_id);
      group.push_back(j);
    }
    if (group.size() == 1) {
      out.points.push_back(first);
      continue;
    }
    TrackPoint merged = first;
    double sx = 0.0;
    double sy = 0.0;
    std::string id;
    for (std::size_t g : group) {
      used[g] = true;
      sx += all.points[g].pos.x;
      sy += all.points[g].pos.y;
      if (!id.empty()) id += '+';
      id += all.points[g].camera_id;
    }
    merged.pos = {sx / static_cast<double>(group.size()), sy / static_cast<double>(group.size())};
    merged.camera_id = std::move(id);
    out.points.push_back(std::move(merged));
  }
  return out;
}

inline Track merge_camera_tracks(const std::map<std::string, Track>& tracks, MergeMode mode = MergeMode::concat,
                                 TimestampUs window_us = kMergeWindowUs) {
  std::vector<Track> v;
  v.reserve(tracks.size());
  for (const auto& [_, t] : tracks) v.push_back(t);
  return merge_camera_tracks(v, mode, window_us);
}

// Processed frames per second over one trial: (N - 1) / (t_last - t_first).
inline double fps_stats(std::span<const TimestampUs> timestamps) {
  if (timestamps.size() < 2) throw EvaluationError("fps needs at least 2 timestamps");
  const auto [lo, hi] = std::minmax_element(timestamps.begin(), timestamps.end());
  const double span_s = static_cast<double>(*hi - *lo) / 1e6;
  if (!(span_s > 0.0)) throw EvaluationError("fps undefined over a zero-length interval");
  return static_cast<double>(timestamps.size() - 1) / span_s;
}

}  // namespace gridtrack
