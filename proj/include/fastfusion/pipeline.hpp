#pragma once

// End-to-end loop over a sequence: per frame, IMU pre-integration, Kalman
// prediction, iterated update over the patch objective, TSDF fusion, model
// raycast around the tracked patches, and patch culling / refresh.

#include <chrono>
#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fastfusion/config.hpp"
#include "fastfusion/frame_io.hpp"
#include "fastfusion/iekf.hpp"
#include "fastfusion/imu_preint.hpp"
#include "fastfusion/maintenance.hpp"
#include "fastfusion/metrics.hpp"
#include "fastfusion/patch.hpp"
#include "fastfusion/tsdf.hpp"

namespace fastfusion {

struct FrameRecord {
  int index = 0;
  double timestamp = 0.0;
  Pose pose;
  Vec3 velocity = Vec3::Zero();
  IterationReport update;
  bool tracking_lost = false;
  std::size_t patches = 0;   // tracked into this frame
  std::size_t lost = 0;      // left the image or too few survivors
  std::size_t culled = 0;    // removed by the quality test
  std::size_t resquared = 0;
  std::size_t added = 0;
  std::size_t shrink = 0;    // patches with a shrink or extend footprint at the final pose
  std::size_t extend = 0;
  double aie = 0.0;          // mean over this frame's patch records
};

struct RunReport {
  std::string sequence_name;
  std::uint64_t seed = 0;
  Toggles toggles;
  std::vector<FrameRecord> frames;
  std::vector<PatchErrorRecord> patch_errors;
  std::vector<StampedPose> trajectory;
  double aie = 0.0;
  std::optional<AteResult> ate;
  int tracking_losses = 0;
  int divergences = 0;
  std::vector<std::string> warnings;
  std::vector<double> frame_seconds;  // wall time; kept out of the JSON report

  double median_frame_seconds() const {
    if (frame_seconds.empty()) return 0.0;
    std::vector<double> s = frame_seconds;
    std::nth_element(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(s.size() / 2), s.end());
    return s[s.size() / 2];
  }
};

/// [tx, ty, tz, qx, qy, qz, qw]
inline nlohmann::ordered_json pose_array(const Pose& p) {
  const Eigen::Quaterniond q = p.quaternion();
  const Vec3& t = p.translation();
  return nlohmann::ordered_json::array({t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w()});
}

/// Report document. Wall times are left out so identical runs produce
/// identical bytes.
inline nlohmann::ordered_json to_json(const RunReport& r) {
  using json = nlohmann::ordered_json;
  json frames = json::array();
  for (const auto& f : r.frames) {
    frames.push_back({{"index", f.index},
                      {"timestamp", f.timestamp},
                      {"pose", pose_array(f.pose)},
                      {"velocity", json::array({f.velocity.x(), f.velocity.y(), f.velocity.z()})},
                      {"status", to_string(f.update.status)},
                      {"iterations", f.update.iterations_run},
                      {"rows", f.update.rows},
                      {"residual_norm", f.update.final_residual_norm},
                      {"tracking_lost", f.tracking_lost},
                      {"patches", f.patches},
                      {"lost", f.lost},
                      {"culled", f.culled},
                      {"resquared", f.resquared},
                      {"added", f.added},
                      {"shrink", f.shrink},
                      {"extend", f.extend},
                      {"aie", f.aie}});
  }
  json summary = {{"frames", r.frames.size()},
                  {"aie", r.aie},
                  {"patch_records", r.patch_errors.size()},
                  {"tracking_losses", r.tracking_losses},
                  {"divergences", r.divergences},
                  {"ate_rmse", r.ate ? json(r.ate->rmse) : json(nullptr)},
                  {"ate_pairs", r.ate ? r.ate->pairs : 0}};
  return {{"schema_version", 1},
          {"sequence", r.sequence_name},
          {"seed", r.seed},
          {"toggles",
           {{"use_imu", r.toggles.use_imu},
            {"use_deformation", r.toggles.use_deformation},
            {"use_model_depth", r.toggles.use_model_depth}}},
          {"summary", summary},
          {"warnings", r.warnings},
          {"frames", frames}};
}

/// Gravity in the first camera frame from the mean accelerometer reading over
/// the first `window` seconds, assuming the device is at rest.
inline Vec3 estimate_gravity(std::span<const ImuSample> imu, const Pose& imu_extrinsic, double window = 0.5) {
  if (imu.empty()) throw SequenceError("cannot estimate gravity without IMU samples");
  Vec3 acc = Vec3::Zero();
  int n = 0;
  for (const auto& s : imu) {
    if (s.timestamp > imu.front().timestamp + window) break;
    acc += s.accel;
    ++n;
  }
  return -(imu_extrinsic.rotation() * (acc / n));
}

struct RunOutputs {
  std::filesystem::path trajectory;  // empty = not written
  std::filesystem::path report;
  std::filesystem::path mesh;
};

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config, std::ostream* log = nullptr)
      : cfg_(std::move(config)), log_(log), volume_(cfg_.tsdf) {
    cfg_.objective.deformation = cfg_.toggles.use_deformation;
    noise_ = cfg_.noise.filter_noise(cfg_.toggles.use_imu);
  }

  const PipelineConfig& config() const { return cfg_; }
  const TsdfVolume& volume() const { return volume_; }

  RunReport run() {
    SequenceReader reader = load_tum_sequence(cfg_.sequence_dir, cfg_.sequence, cfg_.toggles.use_imu);
    RunReport rep;
    rep.sequence_name = cfg_.sequence_dir.filename().string();
    if (const auto meta = cfg_.sequence_dir / "sequence.json"; std::filesystem::exists(meta))
      rep.sequence_name = read_sequence_metadata(meta).name;
    rep.seed = cfg_.seed;
    rep.toggles = cfg_.toggles;
    rep.warnings = reader.warnings();
    imu_ = reader.imu_samples();
    if (cfg_.toggles.use_imu && !cfg_.gravity_given)
      cfg_.sequence.gravity_world = estimate_gravity(imu_, cfg_.sequence.imu_extrinsic);

    int index = 0;
    while (auto ev = reader.next()) {
      if (!std::holds_alternative<Frame>(*ev)) continue;
      if (cfg_.max_frames > 0 && index >= cfg_.max_frames) break;
      const auto t0 = std::chrono::steady_clock::now();
      process(std::get<Frame>(*ev), index, rep);
      rep.frame_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      ++index;
    }
    if (rep.frames.empty()) throw SequenceError("sequence has no frames: " + cfg_.sequence_dir.string());
    rep.aie = compute_aie(rep.patch_errors);
    if (!cfg_.groundtruth.empty()) {
      const auto gt = read_tum_trajectory(cfg_.groundtruth);
      rep.ate = compute_ate(rep.trajectory, gt);
    }
    return rep;
  }

  void write_outputs(const RunReport& rep, const RunOutputs& out) const {
    if (!out.trajectory.empty()) {
      for (const auto& sp : rep.trajectory)
        if (!sp.pose.is_valid(1e-6)) throw Error("refusing to write a non-orthonormal rotation");
      write_tum_trajectory(out.trajectory, rep.trajectory, 6);
    }
    if (!out.report.empty()) {
      std::ofstream f(out.report);
      if (!f) throw SequenceError("cannot write report " + out.report.string());
      f << to_json(rep).dump(2) << "\n";
    }
    if (!out.mesh.empty()) write_ply(out.mesh, extract_mesh(volume_));
  }

 private:
  void note(const std::string& msg, RunReport& rep) {
    if (log_) *log_ << msg << "\n";
    rep.warnings.push_back(msg);
  }

  void process(const Frame& frame, int index, RunReport& rep) {
    const CameraIntrinsics& K = cfg_.sequence.intrinsics;
    FrameRecord rec;
    rec.index = index;
    rec.timestamp = frame.timestamp;

    std::vector<TrackedPatch> kept;
    std::vector<WorldPatch> kept_world;
    std::vector<DeformedPatch> kept_deformed;

    if (index == 0) {
      state_.pose = Pose::identity();
      state_.velocity = cfg_.toggles.use_imu ? cfg_.initial_velocity : Vec3::Zero();
      state_.covariance = cfg_.noise.initial_covariance();
      rec.update.status = UpdateStatus::Converged;
      rec.update.converged = true;
    } else {
      const double dt = frame.timestamp - last_time_;
      PreintegratedDelta delta = PreintegratedDelta::identity(dt);
      if (cfg_.toggles.use_imu) {
        const auto samples = slice_interval(imu_, last_time_, frame.timestamp);
        if (samples.size() >= 2) {
          PreintegrationInput in;
          in.imu_extrinsic = cfg_.sequence.imu_extrinsic;
          in.gravity = cfg_.sequence.gravity_world;
          in.velocity_prev = state_.velocity;
          in.rotation_prev = state_.pose.rotation();
          in.end_time = frame.timestamp;
          delta = preintegrate(samples, in);
        } else {
          note("frame " + std::to_string(index) + ": no IMU samples, constant-pose prediction", rep);
        }
      }
      const FilterState pred = kalman_predict(state_, delta, noise_);

      std::vector<WorldPatch> world;
      std::vector<TrackedPatch> usable;
      for (auto& t : tracked_) {
        try {
          world.push_back(back_project(t.patch, state_.pose, K));
          usable.push_back(std::move(t));
        } catch (const NoValidPixels&) {
        }
      }
      rec.patches = world.size();

      PatchMeasurement model{std::span<const WorldPatch>(world), &frame, K, cfg_.objective, noise_, {}};
      auto [post, update] = iterated_update(pred, model, noise_, cfg_.iterations);
      post.pose = Pose(orthonormalize(post.pose.rotation()), post.pose.translation());
      rec.update = update;

      std::optional<Objective> fin;
      if (update.status != UpdateStatus::NoResiduals) {
        try {
          fin = stack_objective(world, frame, post.pose, K, cfg_.objective);
        } catch (const NoResiduals&) {
        }
      }
      if (!fin) {
        rec.tracking_lost = true;
        ++rep.tracking_losses;
        note("frame " + std::to_string(index) + ": tracking lost, continuing on the prediction", rep);
        post = pred;
        post.covariance = pred.covariance * noise_.loss_inflation;
      } else {
        if (update.status == UpdateStatus::Diverged) ++rep.divergences;
        double frame_sum = 0.0;
        int frame_n = 0;
        for (std::size_t i = 0; i < world.size(); ++i) {
          const DeformedPatch& d = fin->deformed[i];
          rec.lost += fin->lost[i];
          if (fin->lost[i]) continue;
          rec.shrink += d.se_status == SeStatus::Shrink || d.se_status == SeStatus::Both;
          rec.extend += d.se_status == SeStatus::Extend || d.se_status == SeStatus::Both;
          if (fin->stats[i].photometric_rows == 0) continue;
          const double e = fin->stats[i].mean_abs_photometric();
          rep.patch_errors.push_back({index, world[i].id, e});
          frame_sum += e;
          ++frame_n;
        }
        rec.aie = frame_n ? frame_sum / frame_n : 0.0;
        const auto keep = cull(usable, fin->stats, fin->lost, cfg_.quality);
        rec.culled = world.size() - rec.lost - keep.size();
        for (std::size_t i : keep) {
          kept.push_back(std::move(usable[i]));
          kept_world.push_back(std::move(world[i]));
          kept_deformed.push_back(std::move(fin->deformed[i]));
        }
      }
      state_ = post;
    }

    if (cfg_.tsdf_enabled) volume_.integrate(frame.depth, state_.pose, K);

    std::optional<ModelView> view;
    if (cfg_.tsdf_enabled && cfg_.toggles.use_model_depth && !kept.empty()) {
      std::vector<Eigen::Vector2i> anchors;
      for (std::size_t i = 0; i < kept.size(); ++i)
        if (!kept_deformed[i].surviving.empty()) anchors.push_back(tracked_anchor(kept_world[i], kept_deformed[i]));
      view = raycast_windows(volume_, state_.pose, K, anchors, cfg_.patches.size);
    }
    const DepthSource source = merge_depth(frame, K, view ? &*view : nullptr);
    RefreshResult refreshed =
        refresh(std::move(kept), kept_world, kept_deformed, frame, source, cfg_.patches, next_id_, index);
    rec.resquared = refreshed.resquared;
    rec.added = refreshed.added;
    tracked_ = std::move(refreshed.patches);

    rec.pose = state_.pose;
    rec.velocity = state_.velocity;
    rep.frames.push_back(rec);
    rep.trajectory.push_back({frame.timestamp, state_.pose});
    last_time_ = frame.timestamp;
  }

  PipelineConfig cfg_;
  std::ostream* log_;
  NoiseConfig noise_;
  TsdfVolume volume_;
  std::vector<ImuSample> imu_;
  FilterState state_;
  std::vector<TrackedPatch> tracked_;
  std::uint64_t next_id_ = 0;
  double last_time_ = 0.0;
};

/// Runs the configured sequence and writes the requested outputs.
inline RunReport run(const PipelineConfig& config, const RunOutputs& outputs = {}, std::ostream* log = nullptr) {
  Pipeline p(config, log);
  RunReport rep = p.run();
  p.write_outputs(rep, outputs);
  return rep;
}

}  // namespace fastfusion
