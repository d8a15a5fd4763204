#pragma once

// Pipeline configuration: a strict JSON document. Unknown keys, wrong types
// and out-of-range values raise ConfigError. Relative paths are resolved
// against the directory of the config file.
//
// {
//   "schema_version": 1,
//   "sequence_dir": ".",                 // TUM layout; sequence.json is read when present
//   "groundtruth": "groundtruth.txt",    // optional, enables ATE in the report
//   "max_frames": 0,                     // 0 = all
//   "seed": 0,                           // recorded in the report
//   "sequence": {                        // optional overrides of sequence.json
//     "camera": {"fx", "fy", "cx", "cy", "width", "height", "depth_scale"},
//     "imu_extrinsic": {"rotation": [9] | "quaternion": [x, y, z, w], "translation": [3]},
//     "gravity_world": [3], "imu_rate": 200, "camera_rate": 30,
//     "initial_velocity": [3]
//   },
//   "objective": {"lambda": 0.5, "sigma_photometric": 10, "sigma_geometric": 0.05,
//                 "geometric_gate": 0.1, "min_survivor_fraction": 0.25},
//   "noise": {"rotation": 0.01, "translation": 0.01, "velocity": 0.05,      // per sqrt(second)
//             "no_imu_inflation": 100, "photometric_variance": 1, "geometric_variance": 1,
//             "loss_inflation": 2,
//             "initial_rotation": 1e-4, "initial_translation": 1e-4, "initial_velocity": 0.1},
//   "patches": {"size": 10, "budget": 100, "fast_threshold": 20, "min_spacing": 16,
//               "min_valid_fraction": 0.6, "quality_threshold": 15, "quality_ema": 0.7},
//   "tsdf": {"enabled": true, "origin": [-1.5, -1.5, -0.5], "dims": [150, 150, 150],
//            "voxel_size": 0.02, "truncation": 0.1, "max_weight": 100},
//   "iterations": {"max_iters": 10, "step_tol": 1e-4},
//   "toggles": {"use_imu": true, "use_deformation": true, "use_model_depth": true}
// }

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>

#include "fastfusion/frame_io.hpp"
#include "fastfusion/iekf.hpp"
#include "fastfusion/maintenance.hpp"
#include "fastfusion/tsdf.hpp"

namespace fastfusion {

struct NoiseSettings {
  double rotation = 0.01;      // rad / sqrt(s)
  double translation = 0.01;   // m / sqrt(s)
  double velocity = 0.05;      // m/s / sqrt(s)
  double no_imu_inflation = 100.0;
  double photometric_variance = 1.0;
  double geometric_variance = 1.0;
  double loss_inflation = 2.0;
  double initial_rotation = 1e-4;     // standard deviations of the first state
  double initial_translation = 1e-4;
  double initial_velocity = 0.1;

  NoiseConfig filter_noise(bool use_imu) const {
    NoiseConfig n;
    Vec9 d;
    d << Vec3::Constant(rotation * rotation), Vec3::Constant(translation * translation),
        Vec3::Constant(velocity * velocity);
    n.process_Q = d.asDiagonal();
    if (!use_imu) n.process_Q *= no_imu_inflation;
    n.photometric_variance = photometric_variance;
    n.geometric_variance = geometric_variance;
    n.loss_inflation = loss_inflation;
    return n;
  }

  Mat9 initial_covariance() const {
    Vec9 d;
    d << Vec3::Constant(initial_rotation * initial_rotation), Vec3::Constant(initial_translation * initial_translation),
        Vec3::Constant(initial_velocity * initial_velocity);
    return d.asDiagonal();
  }
};

struct Toggles {
  bool use_imu = true;
  bool use_deformation = true;
  bool use_model_depth = true;
};

struct PipelineConfig {
  std::filesystem::path sequence_dir;
  std::filesystem::path groundtruth;  // empty = none
  int max_frames = 0;
  std::uint64_t seed = 0;
  SequenceConfig sequence;
  double depth_scale = 5000.0;
  Vec3 initial_velocity = Vec3::Zero();  // IMU-origin velocity in the first camera frame
  bool gravity_given = false;            // otherwise estimated from the first accelerometer readings
  ObjectiveOptions objective;
  NoiseSettings noise;
  PatchOptions patches;
  QualityOptions quality;
  bool tsdf_enabled = true;
  TsdfOptions tsdf;
  UpdateControls iterations;
  Toggles toggles;
};

namespace config_detail {

using nlohmann::json;
using Handlers = std::map<std::string, std::function<void(const json&)>>;

inline void visit(const json& j, const std::string& where, const Handlers& handlers) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto h = handlers.find(it.key());
    if (h == handlers.end()) throw ConfigError("unknown key '" + it.key() + "' in " + where);
    try {
      h->second(*it);
    } catch (const json::exception& e) {
      throw ConfigError(where + "." + it.key() + ": " + e.what());
    } catch (const InvalidArgument& e) {
      throw ConfigError(where + "." + it.key() + ": " + e.what());
    }
  }
}

inline double number(const json& j) {
  if (!j.is_number()) throw ConfigError("expected a number, got " + j.dump());
  return j.get<double>();
}
inline double positive(const json& j) {
  const double v = number(j);
  if (!(v > 0)) throw ConfigError("expected a positive number, got " + j.dump());
  return v;
}
inline double non_negative(const json& j) {
  const double v = number(j);
  if (!(v >= 0)) throw ConfigError("expected a non-negative number, got " + j.dump());
  return v;
}
inline int integer(const json& j) {
  if (!j.is_number_integer()) throw ConfigError("expected an integer, got " + j.dump());
  return j.get<int>();
}
inline bool boolean(const json& j) {
  if (!j.is_boolean()) throw ConfigError("expected true or false, got " + j.dump());
  return j.get<bool>();
}
inline std::string string(const json& j) {
  if (!j.is_string()) throw ConfigError("expected a string, got " + j.dump());
  return j.get<std::string>();
}

}  // namespace config_detail

/// Parses a config document. `base_dir` resolves relative paths; when the
/// sequence directory holds sequence.json its values are the defaults for
/// the "sequence" block.
inline PipelineConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  using namespace config_detail;
  PipelineConfig c;
  bool have_version = false;
  const json* sequence_block = nullptr;
  Handlers top{
      {"schema_version",
       [&](const json& v) {
         if (integer(v) != 1) throw ConfigError("unsupported schema_version " + v.dump());
         have_version = true;
       }},
      {"sequence_dir", [&](const json& v) { c.sequence_dir = base_dir / string(v); }},
      {"groundtruth", [&](const json& v) { c.groundtruth = v.is_null() ? std::filesystem::path{} : base_dir / string(v); }},
      {"max_frames",
       [&](const json& v) {
         c.max_frames = integer(v);
         if (c.max_frames < 0) throw ConfigError("max_frames must be >= 0");
       }},
      {"seed",
       [&](const json& v) {
         if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
           throw ConfigError("seed must be a non-negative integer");
         c.seed = v.get<std::uint64_t>();
       }},
      {"sequence", [&](const json& v) { sequence_block = &v; }},
      {"objective",
       [&](const json& v) {
         visit(v, "objective",
               {{"lambda",
                 [&](const json& x) {
                   c.objective.lambda = number(x);
                   if (c.objective.lambda < 0 || c.objective.lambda > 1) throw ConfigError("lambda must lie in [0, 1]");
                 }},
                {"sigma_photometric", [&](const json& x) { c.objective.sigma_photometric = positive(x); }},
                {"sigma_geometric", [&](const json& x) { c.objective.sigma_geometric = positive(x); }},
                {"geometric_gate", [&](const json& x) { c.objective.geometric_gate = positive(x); }},
                {"min_survivor_fraction",
                 [&](const json& x) { c.objective.deform.min_survivor_fraction = non_negative(x); }}});
       }},
      {"noise",
       [&](const json& v) {
         auto& n = c.noise;
         visit(v, "noise",
               {{"rotation", [&](const json& x) { n.rotation = non_negative(x); }},
                {"translation", [&](const json& x) { n.translation = non_negative(x); }},
                {"velocity", [&](const json& x) { n.velocity = non_negative(x); }},
                {"no_imu_inflation", [&](const json& x) { n.no_imu_inflation = positive(x); }},
                {"photometric_variance", [&](const json& x) { n.photometric_variance = positive(x); }},
                {"geometric_variance", [&](const json& x) { n.geometric_variance = positive(x); }},
                {"loss_inflation", [&](const json& x) { n.loss_inflation = positive(x); }},
                {"initial_rotation", [&](const json& x) { n.initial_rotation = non_negative(x); }},
                {"initial_translation", [&](const json& x) { n.initial_translation = non_negative(x); }},
                {"initial_velocity", [&](const json& x) { n.initial_velocity = non_negative(x); }}});
       }},
      {"patches",
       [&](const json& v) {
         auto& p = c.patches;
         visit(v, "patches",
               {{"size",
                 [&](const json& x) {
                   p.size = integer(x);
                   if (p.size < 2) throw ConfigError("patch size must be >= 2");
                 }},
                {"budget",
                 [&](const json& x) {
                   const int b = integer(x);
                   if (b < 1) throw ConfigError("budget must be >= 1");
                   p.budget = static_cast<std::size_t>(b);
                 }},
                {"fast_threshold", [&](const json& x) { p.fast_threshold = non_negative(x); }},
                {"min_spacing", [&](const json& x) { p.min_spacing = non_negative(x); }},
                {"min_valid_fraction",
                 [&](const json& x) {
                   p.min_valid_fraction = non_negative(x);
                   if (p.min_valid_fraction > 1) throw ConfigError("min_valid_fraction must be <= 1");
                 }},
                {"quality_threshold", [&](const json& x) { c.quality.threshold = positive(x); }},
                {"quality_ema",
                 [&](const json& x) {
                   c.quality.ema_factor = non_negative(x);
                   if (c.quality.ema_factor >= 1) throw ConfigError("quality_ema must be < 1");
                 }}});
       }},
      {"tsdf",
       [&](const json& v) {
         auto& t = c.tsdf;
         visit(v, "tsdf",
               {{"enabled", [&](const json& x) { c.tsdf_enabled = boolean(x); }},
                {"origin", [&](const json& x) { t.origin = json_util::vec3(x); }},
                {"dims",
                 [&](const json& x) {
                   if (!x.is_array() || x.size() != 3) throw ConfigError("dims must be three integers");
                   for (int a = 0; a < 3; ++a) {
                     t.dims[a] = integer(x[a]);
                     if (t.dims[a] < 2) throw ConfigError("dims must be >= 2");
                   }
                 }},
                {"voxel_size", [&](const json& x) { t.voxel_size = positive(x); }},
                {"truncation", [&](const json& x) { t.truncation = positive(x); }},
                {"max_weight", [&](const json& x) { t.max_weight = static_cast<float>(positive(x)); }}});
       }},
      {"iterations",
       [&](const json& v) {
         visit(v, "iterations",
               {{"max_iters",
                 [&](const json& x) {
                   c.iterations.max_iters = integer(x);
                   if (c.iterations.max_iters < 1) throw ConfigError("max_iters must be >= 1");
                 }},
                {"step_tol", [&](const json& x) { c.iterations.step_tol = positive(x); }}});
       }},
      {"toggles",
       [&](const json& v) {
         visit(v, "toggles",
               {{"use_imu", [&](const json& x) { c.toggles.use_imu = boolean(x); }},
                {"use_deformation", [&](const json& x) { c.toggles.use_deformation = boolean(x); }},
                {"use_model_depth", [&](const json& x) { c.toggles.use_model_depth = boolean(x); }}});
       }},
  };
  visit(j, "config", top);
  if (!have_version) throw ConfigError("config: missing schema_version");
  if (c.sequence_dir.empty()) throw ConfigError("config: missing sequence_dir");

  if (!std::filesystem::is_directory(c.sequence_dir))
    throw MissingFile("sequence directory not found: " + c.sequence_dir.string());

  // sequence defaults from sequence.json, then explicit overrides
  const auto meta_path = c.sequence_dir / "sequence.json";
  if (std::filesystem::exists(meta_path)) {
    const SequenceMetadata m = read_sequence_metadata(meta_path);
    c.sequence = m.config;
    c.depth_scale = m.config.intrinsics.depth_scale;
    c.initial_velocity = m.initial_velocity;
    c.gravity_given = true;
  }
  if (sequence_block) {
    visit(*sequence_block, "sequence",
          {{"camera",
            [&](const json& x) {
              c.sequence.intrinsics = json_util::intrinsics(x);
              c.depth_scale = c.sequence.intrinsics.depth_scale;
            }},
           {"imu_extrinsic", [&](const json& x) { c.sequence.imu_extrinsic = json_util::pose(x); }},
           {"gravity_world",
            [&](const json& x) {
              c.sequence.gravity_world = json_util::vec3(x);
              c.gravity_given = true;
            }},
           {"imu_rate", [&](const json& x) { c.sequence.imu_rate = positive(x); }},
           {"camera_rate", [&](const json& x) { c.sequence.camera_rate = positive(x); }},
           {"initial_velocity", [&](const json& x) { c.initial_velocity = json_util::vec3(x); }}});
  }
  try {
    c.sequence.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

/// Loads a config file; a directory stands for the config.json inside it.
inline PipelineConfig load_config(std::filesystem::path path) {
  if (std::filesystem::is_directory(path)) path /= "config.json";
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

}  // namespace fastfusion
