#pragma once

// Command-line front end. Exit codes: 0 success, 1 configuration or usage
// error, 2 sequence error.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "fastfusion/config.hpp"
#include "fastfusion/metrics.hpp"
#include "fastfusion/pipeline.hpp"
#include "fastfusion/synthetic_io.hpp"

namespace fastfusion::cli {

enum ExitCode : int { kOk = 0, kConfigError = 1, kSequenceError = 2 };

inline std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

struct TrackEvalRow {
  std::string sequence;
  double aie_rigid = 0.0;
  double aie_deformable = 0.0;
};

/// AIE with deformation off and on for one config.
inline TrackEvalRow track_eval(PipelineConfig cfg, std::ostream* log = nullptr) {
  TrackEvalRow row;
  cfg.toggles.use_deformation = false;
  const RunReport off = run(cfg, {}, log);
  cfg.toggles.use_deformation = true;
  const RunReport on = run(cfg, {}, log);
  row.sequence = on.sequence_name;
  row.aie_rigid = off.aie;
  row.aie_deformable = on.aie;
  return row;
}

inline void print_track_eval(std::ostream& out, const std::vector<TrackEvalRow>& rows) {
  std::size_t w = 8;
  for (const auto& r : rows) w = std::max(w, r.sequence.size());
  auto pad = [](std::string s, std::size_t n) { return s + std::string(n > s.size() ? n - s.size() : 0, ' '); };
  out << pad("sequence", w) << "  " << pad("no_deformation", 14) << "  deformation\n";
  for (const auto& r : rows)
    out << pad(r.sequence, w) << "  " << pad(fixed(r.aie_rigid), 14) << "  " << fixed(r.aie_deformable) << "\n";
}

inline int main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"RGB-D + IMU reconstruction with deformable patch tracking", "fastfusion"};
  app.require_subcommand(1);

  bool no_imu = false, no_deformation = false;
  std::string mesh_out, report_out, trajectory_out = "trajectory.txt";
  std::optional<std::uint64_t> seed;

  std::string config_path;
  auto* run_cmd = app.add_subcommand("run", "track and fuse a sequence");
  run_cmd->add_option("config", config_path, "pipeline config (JSON)")->required();
  run_cmd->add_flag("--no-imu", no_imu, "constant-pose prediction instead of IMU pre-integration");
  run_cmd->add_flag("--no-deformation", no_deformation, "track patches as rigid squares");
  run_cmd->add_option("--mesh-out", mesh_out, "write the fused mesh (binary PLY)");
  run_cmd->add_option("--report-out", report_out, "write the JSON run report");
  run_cmd->add_option("--trajectory-out", trajectory_out, "TUM trajectory output")->capture_default_str();
  run_cmd->add_option("--seed", seed, "seed recorded in the report");

  std::string scene_path, out_dir;
  auto* synth_cmd = app.add_subcommand("synth", "render a synthetic sequence");
  synth_cmd->add_option("scene", scene_path, "scene spec (JSON)")->required();
  synth_cmd->add_option("out_dir", out_dir, "output directory")->required();
  synth_cmd->add_option("--seed", seed, "override the IMU noise seed");

  std::vector<std::string> eval_configs;
  auto* eval_cmd = app.add_subcommand("track-eval", "AIE with and without patch deformation");
  eval_cmd->add_option("config", eval_configs, "pipeline config(s)")->required();
  eval_cmd->add_flag("--no-imu", no_imu, "constant-pose prediction");
  eval_cmd->add_option("--report-out", report_out, "write the table as JSON");

  std::string est_path, gt_path;
  auto* ate_cmd = app.add_subcommand("eval-ate", "absolute trajectory error after rigid alignment");
  ate_cmd->add_option("estimate", est_path, "TUM trajectory")->required();
  ate_cmd->add_option("groundtruth", gt_path, "TUM trajectory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kConfigError;
  }

  try {
    if (*run_cmd) {
      PipelineConfig cfg = load_config(config_path);
      if (no_imu) cfg.toggles.use_imu = false;
      if (no_deformation) cfg.toggles.use_deformation = false;
      if (seed) cfg.seed = *seed;
      const RunReport rep = run(cfg, {trajectory_out, report_out, mesh_out}, &err);
      out << "frames " << rep.frames.size() << "\n";
      out << "aie " << fixed(rep.aie) << "\n";
      if (rep.ate) out << "ate_rmse " << fixed(rep.ate->rmse) << "\n";
      out << "tracking_losses " << rep.tracking_losses << "\n";
      err << "median frame time " << fixed(rep.median_frame_seconds() * 1000.0, 2) << " ms\n";
    } else if (*synth_cmd) {
      synth::SyntheticSpec spec = synth::load_spec(scene_path);
      if (seed) spec.seed = *seed;
      const auto res = synth::generate_sequence(spec, out_dir);
      out << "wrote " << res.frames << " frames, " << res.imu_samples << " IMU samples (" << res.metadata.motion
          << ") to " << out_dir << "\n";
    } else if (*eval_cmd) {
      std::vector<TrackEvalRow> rows;
      for (const auto& c : eval_configs) {
        PipelineConfig cfg = load_config(c);
        if (no_imu) cfg.toggles.use_imu = false;
        rows.push_back(track_eval(cfg, &err));
      }
      print_track_eval(out, rows);
      if (!report_out.empty()) {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& r : rows)
          j.push_back({{"sequence", r.sequence}, {"no_deformation", r.aie_rigid}, {"deformation", r.aie_deformable}});
        std::ofstream(report_out) << j.dump(2) << "\n";
      }
    } else if (*ate_cmd) {
      const auto est = read_tum_trajectory(est_path);
      const auto gt = read_tum_trajectory(gt_path);
      out << fixed(compute_ate(est, gt).rmse) << "\n";
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const Error& e) {
    err << "sequence error: " << e.what() << "\n";
    return kSequenceError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "sequence error: " << e.what() << "\n";
    return kSequenceError;
  }
  return kOk;
}

}  // namespace fastfusion::cli
