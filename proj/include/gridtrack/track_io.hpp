#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include "csv.hpp"
#include "tracking.hpp"

namespace gridtrack {

inline constexpr std::string_view kTrackLogHeader = "trial,camera_id,ts_us,person_tag,x_m,y_m,source";

inline std::string track_log_row(const std::string& trial, const TrackPoint& p) {
  std::string row;
  row.reserve(96);
  row += trial;
  row += ',';
  row += p.camera_id;
  row += ',';
  row += std::to_string(p.ts_us);
  row += ',';
  row += std::to_string(p.person_tag);
  row += ',';
  row += csv::format(p.pos.x);
  row += ',';
  row += csv::format(p.pos.y);
  row += ',';
  row += to_string(p.source);
  return row;
}

/// Incremental track log. Rows go to "<path>.part" and are flushed one by one, so a crash loses
/// at most the row being written; finalize() renames the file into place.
class TrackLogWriter {
 public:
  TrackLogWriter(std::filesystem::path path, std::string trial)
      : path_(std::move(path)), part_(path_.string() + ".part"), trial_(std::move(trial)) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    out_.open(part_, std::ios::trunc);
    if (!out_) throw ConfigError("cannot write " + part_.string());
    out_ << kTrackLogHeader << '\n' << std::flush;
  }

  TrackLogWriter(const TrackLogWriter&) = delete;
  TrackLogWriter& operator=(const TrackLogWriter&) = delete;

  ~TrackLogWriter() {
    try {
      finalize();
    } catch (...) {
    }
  }

  void append(const TrackPoint& p) {
    std::lock_guard lock(mu_);
    if (finalized_) throw ConfigError("track log already finalized");
    out_ << track_log_row(trial_, p) << '\n' << std::flush;
    ++rows_;
  }

  void finalize() {
    std::lock_guard lock(mu_);
    if (finalized_) return;
    finalized_ = true;
    out_.close();
    std::filesystem::rename(part_, path_);
  }

  std::size_t rows() const {
    std::lock_guard lock(mu_);
    return rows_;
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::filesystem::path part_;
  std::string trial_;
  mutable std::mutex mu_;
  std::ofstream out_;
  std::size_t rows_{0};
  bool finalized_{false};
};

struct TrackLogRow {
  std::string trial;
  TrackPoint point;
};

inline std::vector<TrackLogRow> read_track_log(const std::string& path) {
  const auto lines = csv::read_lines(path);
  if (lines.empty() || csv::trim(lines.front()) != kTrackLogHeader) {
    throw ConfigError(path + ": expected header '" + std::string(kTrackLogHeader) + "'");
  }
  std::vector<TrackLogRow> rows;
  rows.reserve(lines.size() - 1);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = csv::split(lines[i]);
    if (f.size() != 7) throw ConfigError(path + ": line " + std::to_string(i + 1) + " needs 7 fields");
    TrackLogRow r;
    r.trial = std::string(csv::trim(f[0]));
    r.point.camera_id = std::string(csv::trim(f[1]));
    r.point.ts_us = csv::parse<std::int64_t>(f[2], "ts_us");
    r.point.person_tag = csv::parse<int>(f[3], "person_tag");
    r.point.pos = {csv::parse<double>(f[4], "x_m"), csv::parse<double>(f[5], "y_m")};
    r.point.source = parse_point_source(csv::trim(f[6]));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline void write_track_log(const std::string& path, const std::string& trial, const Track& track) {
  TrackLogWriter w(path, trial);
  for (const auto& p : track.points) w.append(p);
  w.finalize();
}

// Groups log rows into per-camera tracks, optionally restricted to one source.
inline std::map<std::string, Track> tracks_by_camera(const std::vector<TrackLogRow>& rows,
                                                     std::optional<PointSource> only = std::nullopt) {
  std::map<std::string, Track> out;
  for (const auto& r : rows) {
    if (only && r.point.source != *only) continue;
    out[r.point.camera_id].push(r.point);
  }
  return out;
}

}  // namespace gridtrack
