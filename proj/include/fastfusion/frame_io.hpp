#pragma once

// TUM RGB-D sequence reading (rgb.txt / depth.txt / IMU text files), TUM
// trajectory files, and the per-sequence metadata file.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "fastfusion/png_io.hpp"
#include "fastfusion/sensor_types.hpp"

namespace fastfusion {

namespace fs = std::filesystem;

struct StampedPose {
  double timestamp = 0.0;
  Pose pose;
};

// ---------------------------------------------------------------------------
// Text tables

/// Non-comment, non-blank lines split into whitespace-separated tokens.
struct TextRow {
  int line = 0;
  std::vector<std::string> tokens;
};

inline std::vector<TextRow> read_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile("missing file " + path.string());
  std::vector<TextRow> rows;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    TextRow row{number, {}};
    std::string tok;
    while (ss >> tok) row.tokens.push_back(tok);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline double parse_number(const std::string& tok, const fs::path& file, int line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw MalformedLine(file.string(), line, "expected a number, got '" + tok + "'");
  }
}

// ---------------------------------------------------------------------------
// Trajectories

inline std::string format_tum_line(const StampedPose& sp, int precision = 6) {
  Eigen::Quaterniond q = sp.pose.quaternion();
  if (q.w() < 0) q.coeffs() = -q.coeffs();
  const Vec3& t = sp.pose.translation();
  char buf[256];
  std::snprintf(buf, sizeof buf, "%.*f %.*f %.*f %.*f %.*f %.*f %.*f %.*f\n", precision, sp.timestamp, precision,
                t.x(), precision, t.y(), precision, t.z(), precision, q.x(), precision, q.y(), precision, q.z(),
                precision, q.w());
  return buf;
}

inline void write_tum_trajectory(const fs::path& path, const std::vector<StampedPose>& poses, int precision = 6) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw SequenceError("cannot write trajectory " + path.string());
  for (const auto& sp : poses) {
    if (!sp.pose.is_valid(1e-6)) throw InvalidArgument("refusing to write a non-rigid pose");
    out << format_tum_line(sp, precision);
  }
}

inline std::vector<StampedPose> read_tum_trajectory(const fs::path& path) {
  std::vector<StampedPose> out;
  for (const auto& row : read_table(path)) {
    if (row.tokens.size() != 8) throw MalformedLine(path.string(), row.line, "expected 8 columns");
    double v[8];
    for (int i = 0; i < 8; ++i) v[i] = parse_number(row.tokens[i], path, row.line);
    Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
    if (q.norm() < 1e-9) throw MalformedLine(path.string(), row.line, "zero quaternion");
    q.normalize();
    out.push_back({v[0], Pose(q.toRotationMatrix(), Vec3(v[1], v[2], v[3]))});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sequence metadata (sequence.json)

struct SequenceMetadata {
  std::string name;
  SequenceConfig config;
  Vec3 initial_velocity = Vec3::Zero();  // IMU-origin velocity in the first camera frame
  std::string motion = "unknown";        // "slow" | "fast" | "unknown"
  double peak_angular_velocity = 0.0;
  double peak_linear_velocity = 0.0;
};

namespace json_util {
using nlohmann::json;

inline Vec3 vec3(const json& j) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("expected a 3-vector, got " + j.dump());
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}
inline json to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

/// {"rotation": 3x3 row-major | "quaternion": [qx,qy,qz,qw], "translation": [x,y,z]}
inline Pose pose(const json& j) {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() == "rotation") {
      if (!it->is_array() || it->size() != 9) throw ConfigError("rotation must have 9 entries");
      for (int i = 0; i < 9; ++i) R(i / 3, i % 3) = (*it)[i].get<double>();
    } else if (it.key() == "quaternion") {
      if (!it->is_array() || it->size() != 4) throw ConfigError("quaternion must have 4 entries");
      Eigen::Quaterniond q((*it)[3].get<double>(), (*it)[0].get<double>(), (*it)[1].get<double>(),
                           (*it)[2].get<double>());
      R = q.normalized().toRotationMatrix();
    } else if (it.key() == "translation") {
      t = vec3(*it);
    } else {
      throw ConfigError("unknown pose key '" + it.key() + "'");
    }
  }
  Pose p(R, t);
  if (!p.is_valid(1e-6)) throw ConfigError("pose rotation is not orthonormal");
  return p;
}
inline json to_json(const Pose& p) {
  json r = json::array();
  for (int i = 0; i < 9; ++i) r.push_back(p.rotation()(i / 3, i % 3));
  return {{"rotation", r}, {"translation", to_json(p.translation())}};
}

inline CameraIntrinsics intrinsics(const json& j) {
  CameraIntrinsics k;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& key = it.key();
    if (key == "fx") k.fx = it->get<double>();
    else if (key == "fy") k.fy = it->get<double>();
    else if (key == "cx") k.cx = it->get<double>();
    else if (key == "cy") k.cy = it->get<double>();
    else if (key == "width") k.width = it->get<int>();
    else if (key == "height") k.height = it->get<int>();
    else if (key == "depth_scale") k.depth_scale = it->get<double>();
    else throw ConfigError("unknown camera key '" + key + "'");
  }
  if (!k.valid()) throw ConfigError("invalid camera intrinsics");
  return k;
}
inline json to_json(const CameraIntrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy},
          {"width", k.width}, {"height", k.height}, {"depth_scale", k.depth_scale}};
}
}  // namespace json_util

inline nlohmann::json to_json(const SequenceMetadata& m) {
  using namespace json_util;
  return {{"name", m.name},
          {"camera", json_util::to_json(m.config.intrinsics)},
          {"imu_extrinsic", json_util::to_json(m.config.imu_extrinsic)},
          {"gravity_world", json_util::to_json(m.config.gravity_world)},
          {"imu_rate", m.config.imu_rate},
          {"camera_rate", m.config.camera_rate},
          {"initial_velocity", json_util::to_json(m.initial_velocity)},
          {"motion", m.motion},
          {"peak_angular_velocity", m.peak_angular_velocity},
          {"peak_linear_velocity", m.peak_linear_velocity}};
}

inline SequenceMetadata read_sequence_metadata(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile("missing sequence metadata " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SequenceError(path.string() + ": " + e.what());
  }
  SequenceMetadata m;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& key = it.key();
      if (key == "name") m.name = it->get<std::string>();
      else if (key == "camera") m.config.intrinsics = json_util::intrinsics(*it);
      else if (key == "imu_extrinsic") m.config.imu_extrinsic = json_util::pose(*it);
      else if (key == "gravity_world") m.config.gravity_world = json_util::vec3(*it);
      else if (key == "imu_rate") m.config.imu_rate = it->get<double>();
      else if (key == "camera_rate") m.config.camera_rate = it->get<double>();
      else if (key == "initial_velocity") m.initial_velocity = json_util::vec3(*it);
      else if (key == "motion") m.motion = it->get<std::string>();
      else if (key == "peak_angular_velocity") m.peak_angular_velocity = it->get<double>();
      else if (key == "peak_linear_velocity") m.peak_linear_velocity = it->get<double>();
      else throw ConfigError("unknown sequence metadata key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw SequenceError(path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw SequenceError(path.string() + ": " + e.what());
  }
  return m;
}

// ---------------------------------------------------------------------------
// Images

/// 8/16-bit gray, RGB or RGBA to grayscale in [0, 255] (Rec.601 luminance).
inline GrayImage load_intensity(const fs::path& path) {
  const png::RawImage raw = png::read(path.string());
  GrayImage img(raw.width, raw.height, 0.0f);
  const double scale = raw.bit_depth == 16 ? 1.0 / 257.0 : 1.0;
  for (int v = 0; v < raw.height; ++v) {
    for (int u = 0; u < raw.width; ++u) {
      double g = 0.0;
      if (raw.channels >= 3)
        g = 0.299 * raw.at(u, v, 0) + 0.587 * raw.at(u, v, 1) + 0.114 * raw.at(u, v, 2);
      else
        g = raw.at(u, v, 0);
      img(u, v) = static_cast<float>(g * scale);
    }
  }
  return img;
}

inline DepthImage load_depth(const fs::path& path, double depth_scale) {
  const png::RawImage raw = png::read(path.string());
  if (raw.channels != 1) throw SequenceError("depth image must be single-channel: " + path.string());
  DepthImage img(raw.width, raw.height, 0.0f);
  for (int v = 0; v < raw.height; ++v)
    for (int u = 0; u < raw.width; ++u) img(u, v) = static_cast<float>(raw.at(u, v, 0) / depth_scale);
  return img;
}

inline void save_intensity(const fs::path& path, const GrayImage& img) {
  std::vector<std::uint16_t> s(img.size());
  for (std::size_t i = 0; i < s.size(); ++i)
    s[i] = static_cast<std::uint16_t>(std::clamp(std::lround(img.data()[i]), 0L, 255L));
  png::write_gray(path.string(), img.width(), img.height(), 8, s);
}

inline void save_depth(const fs::path& path, const DepthImage& img, double depth_scale) {
  std::vector<std::uint16_t> s(img.size());
  for (std::size_t i = 0; i < s.size(); ++i)
    s[i] = static_cast<std::uint16_t>(std::clamp(std::lround(img.data()[i] * depth_scale), 0L, 65535L));
  png::write_gray(path.string(), img.width(), img.height(), 16, s);
}

// ---------------------------------------------------------------------------
// Sequence reader

struct ReaderOptions {
  double depth_scale = 5000.0;
  double association_window = 0.02;  // seconds
  bool require_imu = true;
  int expected_width = 0;  // 0 = do not check
  int expected_height = 0;
};

using SequenceEvent = std::variant<Frame, ImuSample>;

/// Single-pass iterator over a TUM-layout directory. Frames are decoded when
/// they are reached; IMU samples at the same timestamp as a frame come first.
class SequenceReader {
 public:
  SequenceReader(const fs::path& dir, ReaderOptions opt = {}) : dir_(dir), opt_(opt) {
    if (!fs::is_directory(dir)) throw MissingFile("sequence directory not found: " + dir.string());
    const auto rgb = read_list(dir / "rgb.txt");
    const auto depth = read_list(dir / "depth.txt");
    associate(rgb, depth);
    read_imu();
    build_schedule();
  }

  std::optional<SequenceEvent> next() {
    if (cursor_ >= schedule_.size()) return std::nullopt;
    const Entry e = schedule_[cursor_++];
    if (e.is_frame) return SequenceEvent{load_frame(frames_[e.index])};
    return SequenceEvent{imu_[e.index]};
  }

  const std::vector<std::string>& warnings() const { return warnings_; }
  std::size_t frame_count() const { return frames_.size(); }
  std::size_t imu_count() const { return imu_.size(); }
  const std::vector<ImuSample>& imu_samples() const { return imu_; }

 private:
  struct ListEntry {
    double t;
    std::string file;
  };
  struct FrameFiles {
    double t;
    std::string rgb, depth;
  };
  struct Entry {
    double t;
    bool is_frame;
    std::size_t index;
  };

  std::vector<ListEntry> read_list(const fs::path& p) {
    std::vector<ListEntry> out;
    for (const auto& row : read_table(p)) {
      if (row.tokens.size() < 2) throw MalformedLine(p.string(), row.line, "expected 'timestamp filename'");
      out.push_back({parse_number(row.tokens[0], p, row.line), row.tokens[1]});
    }
    return out;
  }

  // Nearest-timestamp association; each depth image is used at most once.
  void associate(const std::vector<ListEntry>& rgb, std::vector<ListEntry> depth) {
    std::sort(depth.begin(), depth.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
    std::vector<bool> used(depth.size(), false);
    for (const auto& r : rgb) {
      auto it = std::lower_bound(depth.begin(), depth.end(), r.t, [](const auto& d, double t) { return d.t < t; });
      std::ptrdiff_t best = -1;
      double best_dt = opt_.association_window;
      for (auto cand : {it - 1, it}) {
        if (cand < depth.begin() || cand >= depth.end()) continue;
        const auto idx = cand - depth.begin();
        const double dt = std::abs(cand->t - r.t);
        if (!used[idx] && dt <= best_dt + 1e-12) {
          best = idx;
          best_dt = dt;
        }
      }
      if (best < 0) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "dropping rgb frame at t=%.6f: no depth within %.0f ms", r.t,
                      opt_.association_window * 1000);
        warnings_.push_back(buf);
        continue;
      }
      used[best] = true;
      frames_.push_back({r.t, r.file, depth[best].file});
    }
    std::sort(frames_.begin(), frames_.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
    for (std::size_t i = 1; i < frames_.size();) {
      if (frames_[i].t <= frames_[i - 1].t) {
        warnings_.push_back("dropping frame with duplicate timestamp");
        frames_.erase(frames_.begin() + static_cast<std::ptrdiff_t>(i));
      } else {
        ++i;
      }
    }
  }

  void read_imu() {
    const fs::path combined = dir_ / "imu.txt";
    const fs::path accel = dir_ / "accelerometer.txt";
    const fs::path gyro = dir_ / "gyroscope.txt";
    if (fs::exists(combined)) {
      for (const auto& row : read_table(combined)) {
        if (row.tokens.size() != 7) throw MalformedLine(combined.string(), row.line, "expected 7 columns");
        double v[7];
        for (int i = 0; i < 7; ++i) v[i] = parse_number(row.tokens[i], combined, row.line);
        imu_.push_back({v[0], Vec3(v[1], v[2], v[3]), Vec3(v[4], v[5], v[6])});
      }
    } else if (fs::exists(accel) && fs::exists(gyro)) {
      auto load4 = [](const fs::path& p) {
        std::vector<std::pair<double, Vec3>> out;
        for (const auto& row : read_table(p)) {
          if (row.tokens.size() != 4) throw MalformedLine(p.string(), row.line, "expected 4 columns");
          out.emplace_back(parse_number(row.tokens[0], p, row.line),
                           Vec3(parse_number(row.tokens[1], p, row.line), parse_number(row.tokens[2], p, row.line),
                                parse_number(row.tokens[3], p, row.line)));
        }
        return out;
      };
      const auto a = load4(accel);
      const auto g = load4(gyro);
      // pair each accelerometer reading with the nearest gyro reading within 5 ms
      std::size_t j = 0;
      for (const auto& [t, acc] : a) {
        while (j + 1 < g.size() && std::abs(g[j + 1].first - t) <= std::abs(g[j].first - t)) ++j;
        if (!g.empty() && std::abs(g[j].first - t) <= 0.005) imu_.push_back({t, acc, g[j].second});
      }
    } else if (opt_.require_imu) {
      throw MissingFile("no IMU data (imu.txt or accelerometer.txt + gyroscope.txt) in " + dir_.string());
    }
    std::stable_sort(imu_.begin(), imu_.end(), [](const auto& x, const auto& y) { return x.timestamp < y.timestamp; });
    for (std::size_t i = 1; i < imu_.size(); ++i)
      if (!(imu_[i].timestamp > imu_[i - 1].timestamp))
        throw NonMonotonicTimestamps("IMU timestamps are not strictly increasing");
  }

  void build_schedule() {
    for (std::size_t i = 0; i < frames_.size(); ++i) schedule_.push_back({frames_[i].t, true, i});
    for (std::size_t i = 0; i < imu_.size(); ++i) schedule_.push_back({imu_[i].timestamp, false, i});
    std::stable_sort(schedule_.begin(), schedule_.end(), [](const Entry& a, const Entry& b) {
      if (a.t != b.t) return a.t < b.t;
      return !a.is_frame && b.is_frame;
    });
  }

  Frame load_frame(const FrameFiles& f) const {
    Frame frame;
    frame.timestamp = f.t;
    frame.intensity = load_intensity(dir_ / f.rgb);
    frame.depth = load_depth(dir_ / f.depth, opt_.depth_scale);
    if (frame.intensity.width() != frame.depth.width() || frame.intensity.height() != frame.depth.height())
      throw SequenceError("rgb/depth size mismatch at t=" + std::to_string(f.t));
    if (opt_.expected_width > 0 &&
        (frame.intensity.width() != opt_.expected_width || frame.intensity.height() != opt_.expected_height))
      throw SequenceError("image size does not match camera intrinsics");
    return frame;
  }

  fs::path dir_;
  ReaderOptions opt_;
  std::vector<FrameFiles> frames_;
  std::vector<ImuSample> imu_;
  std::vector<Entry> schedule_;
  std::vector<std::string> warnings_;
  std::size_t cursor_ = 0;
};

/// Reader configured from the sequence's camera model.
inline SequenceReader load_tum_sequence(const fs::path& dir, const SequenceConfig& config, bool require_imu = true) {
  ReaderOptions opt;
  opt.depth_scale = config.intrinsics.depth_scale;
  opt.require_imu = require_imu;
  opt.expected_width = config.intrinsics.width;
  opt.expected_height = config.intrinsics.height;
  return SequenceReader(dir, opt);
}

}  // namespace fastfusion
