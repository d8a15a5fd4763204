#pragma once

// Iterated error-state Kalman filter over camera pose and IMU velocity.
//
// Error state: [dθ, dt, dv] with R <- Exp(dθ) R, t <- t + dt, v <- v + dv.

#include <algorithm>
#include <limits>
#include <span>
#include <vector>

#include "fastfusion/imu_preint.hpp"
#include "fastfusion/patch.hpp"

namespace fastfusion {

using Mat9 = Eigen::Matrix<double, 9, 9>;
using Vec9 = Eigen::Matrix<double, 9, 1>;

struct FilterState {
  Pose pose;
  Vec3 velocity = Vec3::Zero();
  Mat9 covariance = Mat9::Identity() * 1e-6;

  MotionState motion() const { return {pose, velocity}; }
};

struct NoiseConfig {
  Mat9 process_Q = default_process_noise();  // per second
  double photometric_variance = 1.0;         // of a normalized row
  double geometric_variance = 1.0;           // of a normalized row
  double loss_inflation = 2.0;               // covariance factor when no residuals are available

  static Mat9 default_process_noise() {
    Vec9 d;
    d << Vec3::Constant(0.01 * 0.01), Vec3::Constant(0.01 * 0.01), Vec3::Constant(0.05 * 0.05);
    return d.asDiagonal();
  }
};

struct UpdateControls {
  int max_iters = 10;
  double step_tol = 1e-4;
  int divergence_window = 3;
};

enum class UpdateStatus { Converged, MaxIterations, Diverged, NoResiduals };

inline const char* to_string(UpdateStatus s) {
  switch (s) {
    case UpdateStatus::Converged: return "converged";
    case UpdateStatus::MaxIterations: return "max_iterations";
    case UpdateStatus::Diverged: return "diverged";
    case UpdateStatus::NoResiduals: return "no_residuals";
  }
  return "?";
}

struct IterationReport {
  int iterations_run = 0;  // number of linearizations
  std::vector<double> step_norms;
  std::vector<double> residual_norms;
  bool converged = false;
  UpdateStatus status = UpdateStatus::MaxIterations;
  double final_residual_norm = 0.0;
  std::size_t rows = 0;
};

inline void symmetrize(Mat9& P) { P = 0.5 * (P + P.transpose()).eval(); }

inline FilterState apply_error(const FilterState& base, const Vec9& e) {
  FilterState out = base;
  out.pose = retract(base.pose, Twist(Vec6(e.head<6>())));
  out.velocity = base.velocity + e.tail<3>();
  return out;
}

inline Vec9 error_between(const FilterState& to, const FilterState& from) {
  Vec9 e;
  e << local_difference(to.pose, from.pose).vector(), to.velocity - from.velocity;
  return e;
}

/// Jacobian of the propagation with respect to the previous error state.
inline Mat9 propagation_jacobian(const PreintegratedDelta& d) {
  Mat9 F = Mat9::Identity();
  if (!d.velocity_coupled) return F;
  F.block<3, 3>(3, 0) = -hat(d.force_delta_t);
  F.block<3, 3>(3, 6) = Mat3::Identity() * d.duration;
  F.block<3, 3>(6, 0) = -hat(d.force_delta_v);
  return F;
}

/// Mean through predict_pose, covariance F P Fᵀ + Q·duration.
inline FilterState kalman_predict(const FilterState& state, const PreintegratedDelta& delta, const NoiseConfig& noise) {
  const MotionState m = predict_pose(state.motion(), delta);
  FilterState out;
  out.pose = m.pose;
  out.velocity = m.velocity;
  const Mat9 F = propagation_jacobian(delta);
  out.covariance = F * state.covariance * F.transpose() + noise.process_Q * delta.duration;
  symmetrize(out.covariance);
  return out;
}

/// Stacked measurement at one pose: residual r = h(x) - z, its Jacobian with
/// respect to the pose part of the error state, and per-row variances.
struct Measurement {
  Eigen::VectorXd residuals;
  Eigen::Matrix<double, Eigen::Dynamic, 6> jacobian;
  Eigen::VectorXd variances;
};

template <class M>
concept MeasurementModel = requires(M& m, const Pose& p) {
  { m.evaluate(p) } -> std::convertible_to<Measurement>;
};

namespace detail {

struct Gain {
  Eigen::Matrix<double, 9, Eigen::Dynamic> K;
  Eigen::Matrix<double, Eigen::Dynamic, 9> H;
};

// K = (I + P Hᵀ U⁻¹ H)⁻¹ P Hᵀ U⁻¹, which equals P Hᵀ (H P Hᵀ + U)⁻¹ without
// forming the row-sized innovation matrix.
inline Gain gain(const Mat9& P, const Measurement& z) {
  Gain g;
  const Eigen::Index n = z.residuals.size();
  g.H = Eigen::Matrix<double, Eigen::Dynamic, 9>::Zero(n, 9);
  g.H.leftCols<6>() = z.jacobian;
  const Eigen::VectorXd w = z.variances.cwiseInverse();
  const Eigen::Matrix<double, 9, Eigen::Dynamic> HtW = g.H.transpose() * w.asDiagonal();
  const Mat9 A = Mat9::Identity() + P * HtW * g.H;
  g.K = A.partialPivLu().solve(P * HtW);
  return g;
}

}  // namespace detail

/// Iterated update from the prediction. Each iterate e_m (relative to the
/// prediction) is linearized and replaced by e_{m+1} = K (H e_m - r_m); the
/// loop stops when the max-norm of e_{m+1} - e_m falls below step_tol. The
/// covariance is updated once with the final gain.
template <MeasurementModel Model>
std::pair<FilterState, IterationReport> iterated_update(const FilterState& pred, Model& model, const NoiseConfig& noise,
                                                        const UpdateControls& ctl = {}) {
  IterationReport rep;
  Vec9 e = Vec9::Zero();
  FilterState current = pred;

  FilterState best = pred;
  double best_norm = std::numeric_limits<double>::infinity();
  detail::Gain best_gain;
  detail::Gain last_gain;
  bool have_gain = false;
  int growth = 0;
  double prev_norm = std::numeric_limits<double>::infinity();

  auto finish = [&](const FilterState& x, const detail::Gain& g) {
    FilterState out = x;
    out.covariance = (Mat9::Identity() - g.K * g.H) * pred.covariance;
    symmetrize(out.covariance);
    return out;
  };

  for (int m = 0; m < ctl.max_iters; ++m) {
    Measurement z;
    try {
      z = model.evaluate(current.pose);
    } catch (const NoResiduals&) {
      rep.status = UpdateStatus::NoResiduals;
      if (!have_gain) {
        FilterState out = pred;
        out.covariance = pred.covariance * noise.loss_inflation;
        return {out, rep};
      }
      rep.final_residual_norm = best_norm;
      return {finish(best, best_gain), rep};
    }
    ++rep.iterations_run;
    rep.rows = static_cast<std::size_t>(z.residuals.size());
    const double rn = z.residuals.norm();
    rep.residual_norms.push_back(rn);
    detail::Gain g = detail::gain(pred.covariance, z);
    have_gain = true;
    last_gain = g;
    if (rn < best_norm) {
      best_norm = rn;
      best = current;
      best_gain = g;
    }
    growth = rn > prev_norm ? growth + 1 : 0;
    prev_norm = rn;
    if (growth >= ctl.divergence_window) {
      rep.status = UpdateStatus::Diverged;
      rep.final_residual_norm = best_norm;
      return {finish(best, best_gain), rep};
    }

    const Vec9 next = g.K * (g.H * e - z.residuals);
    const double step = (next - e).cwiseAbs().maxCoeff();
    rep.step_norms.push_back(step);
    e = next;
    current = apply_error(pred, e);
    if (step < ctl.step_tol) {
      rep.converged = true;
      rep.status = UpdateStatus::Converged;
      rep.final_residual_norm = rn;
      return {finish(current, g), rep};
    }
  }
  rep.status = UpdateStatus::MaxIterations;
  rep.final_residual_norm = prev_norm;
  return {finish(current, last_gain), rep};
}

/// Patch objective as a filter measurement. Every evaluation re-deforms the
/// patches at the queried pose; the most recent objective is kept for
/// statistics.
struct PatchMeasurement {
  std::span<const WorldPatch> patches;
  const Frame* frame = nullptr;
  CameraIntrinsics intrinsics;
  ObjectiveOptions options;
  NoiseConfig noise;
  Objective last;

  Measurement evaluate(const Pose& pose) {
    last = stack_objective(patches, *frame, pose, intrinsics, options);
    Measurement z;
    z.residuals = last.residuals;
    z.jacobian = last.jacobian;
    z.variances.resize(z.residuals.size());
    for (std::size_t i = 0; i < last.rows.size(); ++i)
      z.variances[static_cast<Eigen::Index>(i)] =
          last.rows[i].type == ResidualType::Photometric ? noise.photometric_variance : noise.geometric_variance;
    return z;
  }
};

}  // namespace fastfusion
