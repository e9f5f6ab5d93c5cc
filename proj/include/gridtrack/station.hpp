#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "frame_codec.hpp"
#include "geometry_io.hpp"
#include "pose.hpp"
#include "pubsub.hpp"
#include "session_server.hpp"
#include "track_io.hpp"
#include "tracking.hpp"

namespace gridtrack {

struct StationConfig {
  net::Endpoint listen{"0.0.0.0", kDefaultPort};
  std::map<std::string, std::string> camera_models;  // camera_id -> model file
  TransportMode mode{TransportMode::reqrep};
  bool iqr{true};
  MergeMode merge{MergeMode::concat};
  float conf_threshold{kDefaultAnchorConfidence};
  std::string output_dir;  // empty: no track log
  std::string trial{"trial"};
  double processing_delay_ms{0.0};
  std::optional<std::uint16_t> feed_port;
};

// Relative model paths resolve against the config file's directory.
inline StationConfig station_config_from_json(const nlohmann::json& j, const std::filesystem::path& base = {}) {
  try {
    StationConfig c;
    c.listen.host = j.value("listen", std::string("0.0.0.0"));
    c.listen.port = j.value("port", kDefaultPort);
    for (const auto& [id, path] : j.at("cameras").items()) {
      std::filesystem::path p = path.get<std::string>();
      if (p.is_relative() && !base.empty()) p = base / p;
      c.camera_models.emplace(id, p.string());
    }
    const auto mode = j.value("mode", std::string("reqrep"));
    if (mode == "reqrep") {
      c.mode = TransportMode::reqrep;
    } else if (mode == "pubsub") {
      c.mode = TransportMode::pubsub;
    } else {
      throw ConfigError("mode must be reqrep or pubsub");
    }
    c.iqr = j.value("iqr", true);
    c.merge = parse_merge_mode(j.value("merge", std::string("concat")));
    c.conf_threshold = j.value("conf_threshold", kDefaultAnchorConfidence);
    if (c.conf_threshold < 0.0F || c.conf_threshold > 1.0F) throw ConfigError("conf_threshold must be in [0, 1]");
    c.output_dir = j.value("output_dir", std::string("out"));
    c.trial = j.value("trial", std::string("trial"));
    c.processing_delay_ms = j.value("processing_delay_ms", 0.0);
    if (j.contains("feed_port")) c.feed_port = j["feed_port"].get<std::uint16_t>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad station config: ") + e.what());
  }
}

inline StationConfig load_station_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return station_config_from_json(nlohmann::json::parse(in), std::filesystem::path(path).parent_path());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline std::map<std::string, CameraModel> load_camera_models(const StationConfig& c) {
  std::map<std::string, CameraModel> out;
  for (const auto& [id, path] : c.camera_models) {
    auto m = load_camera_model(path);
    if (m.camera_id() != id) throw ConfigError("model " + path + " is for camera '" + m.camera_id() + "', not '" + id + "'");
    out.emplace(id, std::move(m));
  }
  return out;
}

inline nlohmann::ordered_json track_point_to_json(const TrackPoint& p) {
  nlohmann::ordered_json j;
  j["ts_us"] = p.ts_us;
  j["camera_id"] = p.camera_id;
  j["person_tag"] = p.person_tag;
  j["x_m"] = p.pos.x;
  j["y_m"] = p.pos.y;
  j["source"] = std::string(to_string(p.source));
  return j;
}

// Line-delimited JSON broadcast of live track points on a local socket.
class SnapshotFeed {
 public:
  explicit SnapshotFeed(std::uint16_t port) : listener_({"127.0.0.1", port}) {
    running_ = true;
    acceptor_ = std::thread([this] {
      while (running_) {
        if (auto s = listener_.accept(net::Millis{50})) {
          std::lock_guard lock(mu_);
          clients_.push_back(std::move(*s));
        }
      }
    });
  }
  SnapshotFeed(const SnapshotFeed&) = delete;
  SnapshotFeed& operator=(const SnapshotFeed&) = delete;
  ~SnapshotFeed() {
    running_ = false;
    if (acceptor_.joinable()) acceptor_.join();
  }

  std::uint16_t port() const { return listener_.port(); }

  std::size_t clients() const {
    std::lock_guard lock(mu_);
    return clients_.size();
  }

  void publish(const TrackPoint& p) {
    const auto line = track_point_to_json(p).dump() + "\n";
    const auto* data = reinterpret_cast<const std::byte*>(line.data());
    std::lock_guard lock(mu_);
    for (auto it = clients_.begin(); it != clients_.end();) {
      try {
        it->send_all(std::span(data, line.size()));
        ++it;
      } catch (const TransportError&) {
        it = clients_.erase(it);
      }
    }
  }

 private:
  net::Listener listener_;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  mutable std::mutex mu_;
  std::list<net::Socket> clients_;
};

struct StationCounters {
  std::uint64_t frames_received{0};
  std::uint64_t frames_processed{0};
  std::uint64_t malformed{0};
  std::uint64_t unknown_camera{0};
  std::uint64_t stale_seq{0};
  std::uint64_t unsupported_encoding{0};
  std::uint64_t no_anchor{0};
  std::uint64_t dropped_out_of_calibration{0};
  std::uint64_t points{0};
  std::uint64_t reps{0};
};

/// The ground station: receives camera sessions, turns each kp17 frame into world-space track
/// points, logs them and keeps the newest point per person.
///
/// Under REQ/REP each session is processed sequentially and its REP goes out only after the
/// frame is fully processed (including the configured processing delay), which is what paces
/// the camera nodes. Sessions run concurrently. Under PUB/SUB arrivals are conflated per camera
/// and a worker per camera processes the newest one.
class GroundStation {
 public:
  GroundStation(StationConfig config, std::map<std::string, CameraModel> models)
      : config_(std::move(config)), tracker_(std::move(models)) {}

  explicit GroundStation(const StationConfig& config) : GroundStation(config, load_camera_models(config)) {}

  GroundStation(const GroundStation&) = delete;
  GroundStation& operator=(const GroundStation&) = delete;
  ~GroundStation() { stop(); }

  void start() {
    if (!config_.output_dir.empty()) {
      log_ = std::make_unique<TrackLogWriter>(std::filesystem::path(config_.output_dir) / ("track_" + config_.trial + ".csv"),
                                              config_.trial);
    }
    if (config_.feed_port) feed_ = std::make_unique<SnapshotFeed>(*config_.feed_port);
    running_ = true;
    SessionHandlers handlers;
    handlers.on_malformed = [this](const Error&) {
      std::lock_guard lock(mu_);
      ++counters_.frames_received;
      ++counters_.malformed;
    };
    if (config_.mode == TransportMode::reqrep) {
      handlers.on_message = [this](FrameMessage&& m) { process(m); };
    } else {
      handlers.on_message = [this](FrameMessage&& m) { conflate(std::move(m)); };
    }
    server_ = std::make_unique<SessionServer>(config_.listen, config_.mode, std::move(handlers));
    server_->start();
  }

  // Stops accepting, joins every session and worker, and finalizes the track log.
  void stop() {
    if (!running_.exchange(false)) return;
    server_->stop();
    {
      std::lock_guard lock(workers_mu_);
      for (auto& w : workers_) w.join();
      workers_.clear();
    }
    feed_.reset();
    if (log_) log_->finalize();
  }

  std::uint16_t port() const { return server_ ? server_->port() : 0; }
  std::optional<std::uint16_t> feed_port() const {
    return feed_ ? std::optional<std::uint16_t>(feed_->port()) : std::nullopt;
  }
  const StationConfig& config() const { return config_; }

  // Handles one decoded frame; safe to call concurrently for different cameras.
  void process(const FrameMessage& m) {
    const auto& h = m.header;
    {
      std::lock_guard lock(mu_);
      ++counters_.frames_received;
      if (!tracker_.knows(h.camera_id)) {
        ++counters_.unknown_camera;
        return;
      }
      auto [it, fresh] = last_seq_.try_emplace(h.camera_id, h.seq);
      if (!fresh) {
        if (h.seq <= it->second) {
          ++counters_.stale_seq;
          return;
        }
        it->second = h.seq;
      }
    }

    std::uint64_t no_anchor = 0;
    std::uint64_t dropped = 0;
    std::uint64_t points = 0;
    bool malformed = false;
    bool unsupported = false;
    if (h.encoding == Encoding::kp17) {
      try {
        for (const auto& d : decode_kp17(m.payload)) {
          const auto anchor = anchor_pixel_from_pose(d, config_.conf_threshold);
          if (!anchor) {
            ++no_anchor;
            continue;
          }
          auto p = tracker_.ingest(h, *anchor, d.person_tag, PointSource::pose);
          if (!p) {
            ++dropped;
            continue;
          }
          ++points;
          if (log_) log_->append(*p);
          if (feed_) feed_->publish(*p);
        }
      } catch (const MalformedPayloadError&) {
        malformed = true;
      }
    } else {
      unsupported = true;  // image payloads need a detector; none runs in-process
    }
    if (config_.processing_delay_ms > 0.0) {
      std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(config_.processing_delay_ms));
    }
    const auto now = std::chrono::steady_clock::now();
    std::lock_guard lock(mu_);
    ++counters_.frames_processed;
    counters_.no_anchor += no_anchor;
    counters_.dropped_out_of_calibration += dropped;
    counters_.points += points;
    counters_.malformed += malformed ? 1 : 0;
    counters_.unsupported_encoding += unsupported ? 1 : 0;
    processed_ts_[h.camera_id].push_back(h.ts_us);
    processed_wall_[h.camera_id].push_back(
        std::chrono::duration_cast<std::chrono::microseconds>(now.time_since_epoch()).count());
  }

  std::optional<TrackPoint> latest(int person_tag = 0) const { return tracker_.latest(person_tag); }

  std::map<std::string, Track> tracks() const { return tracker_.snapshot(); }

  // Per-camera tracks merged by the configured mode, then IQR-filtered when enabled.
  Track final_track() const {
    auto merged = merge_camera_tracks(tracker_.snapshot(), config_.merge);
    return config_.iqr ? iqr_filter(merged) : merged;
  }

  // Capture timestamps of processed frames, per camera.
  std::map<std::string, std::vector<TimestampUs>> processed_timestamps() const {
    std::lock_guard lock(mu_);
    return processed_ts_;
  }

  // Station-side completion times (steady clock, microseconds), per camera.
  std::map<std::string, std::vector<TimestampUs>> processed_wall_times() const {
    std::lock_guard lock(mu_);
    return processed_wall_;
  }

  StationCounters counters() const {
    std::lock_guard lock(mu_);
    auto c = counters_;
    if (server_) c.reps = server_->stats().reps;
    return c;
  }

 private:
  void conflate(FrameMessage&& m) {
    const auto id = m.header.camera_id;
    conflation_.offer(std::move(m));
    std::lock_guard lock(workers_mu_);
    if (!worker_cams_.insert(id).second) return;
    workers_.emplace_back([this, id] {
      std::optional<std::uint64_t> done;
      while (running_) {
        auto next = conflation_.wait_newer(id, done, net::Millis{50});
        if (!next) continue;
        done = next->header.seq;
        process(*next);
      }
    });
  }

  StationConfig config_;
  Tracker tracker_;
  std::unique_ptr<SessionServer> server_;
  std::unique_ptr<TrackLogWriter> log_;
  std::unique_ptr<SnapshotFeed> feed_;
  std::atomic<bool> running_{false};

  mutable std::mutex mu_;
  StationCounters counters_;
  std::map<std::string, std::uint64_t> last_seq_;
  std::map<std::string, std::vector<TimestampUs>> processed_ts_;
  std::map<std::string, std::vector<TimestampUs>> processed_wall_;

  ConflationMap conflation_;
  std::mutex workers_mu_;
  std::set<std::string> worker_cams_;
  std::vector<std::thread> workers_;
};

}  // namespace gridtrack
