#pragma once

// Patch features: extraction, back-projection, deformation with shrink/extend
// detection, and the stacked photometric + point-to-plane objective.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "fastfusion/fast.hpp"
#include "fastfusion/geometry.hpp"
#include "fastfusion/sensor_types.hpp"

namespace fastfusion {

struct PatchPixel {
  Vec2 pixel = Vec2::Zero();
  double intensity = 0.0;
  double depth = 0.0;
  Vec3 normal = Vec3::Zero();  // camera frame
  bool valid_depth = false;
};

struct Patch {
  std::uint64_t id = 0;
  Vec2 anchor = Vec2::Zero();
  std::vector<PatchPixel> pixels;
  int source_frame = 0;
  double quality = 0.0;  // running mean absolute intensity error
  int size = 10;

  std::size_t valid_count() const {
    return static_cast<std::size_t>(std::count_if(pixels.begin(), pixels.end(), [](const auto& p) { return p.valid_depth; }));
  }
};

struct PatchOptions {
  int size = 10;
  double fast_threshold = 20.0;
  double min_spacing = 16.0;
  double min_valid_fraction = 0.6;
  std::size_t budget = 100;
};

/// Offsets of a size x size window around its anchor: [-size/2, size/2).
inline int patch_half(int size) { return size / 2; }

inline bool window_inside(int u, int v, int size, int width, int height) {
  const int h = patch_half(size);
  return u - h >= 0 && v - h >= 0 && u - h + size <= width && v - h + size <= height;
}

/// Square patch sampled from intensity, depth and normals at integer anchor
/// (u, v). Returns nothing when the window leaves the image or has too few
/// valid-depth pixels.
inline std::optional<Patch> sample_patch(const GrayImage& intensity, const DepthImage& depth, const NormalMap& normals,
                                         int u, int v, int size, double min_valid_fraction) {
  if (!window_inside(u, v, size, intensity.width(), intensity.height())) return std::nullopt;
  Patch p;
  p.anchor = Vec2(u, v);
  p.size = size;
  p.pixels.reserve(static_cast<std::size_t>(size) * size);
  const int h = patch_half(size);
  for (int dv = 0; dv < size; ++dv) {
    for (int du = 0; du < size; ++du) {
      const int x = u - h + du, y = v - h + dv;
      PatchPixel px;
      px.pixel = Vec2(x, y);
      px.intensity = intensity(x, y);
      px.depth = depth(x, y);
      px.valid_depth = px.depth > 0 && normals.valid(x, y);
      if (px.valid_depth) px.normal = normals.normals(x, y);
      p.pixels.push_back(px);
    }
  }
  if (p.valid_count() < min_valid_fraction * p.pixels.size()) return std::nullopt;
  return p;
}

/// FAST-9 corners ranked by score, spaced from each other and from the
/// anchors already tracked, with enough depth in their window.
inline std::vector<Patch> extract_patches(const Frame& frame, const NormalMap& normals,
                                          std::span<const Vec2> existing_anchors, const PatchOptions& opt,
                                          std::uint64_t& next_id, int frame_index = 0) {
  std::vector<Corner> candidates;
  std::vector<Patch> sampled;
  for (const Corner& c : detect_fast9(frame.intensity, opt.fast_threshold)) {
    if (!window_inside(c.u, c.v, opt.size, frame.intensity.width(), frame.intensity.height())) continue;
    candidates.push_back(c);
  }
  // depth check before suppression so rejected corners do not block others
  std::vector<Corner> usable;
  for (const Corner& c : candidates) {
    const int h = patch_half(opt.size);
    int valid = 0;
    for (int dv = 0; dv < opt.size; ++dv)
      for (int du = 0; du < opt.size; ++du) {
        const int x = c.u - h + du, y = c.v - h + dv;
        valid += frame.depth(x, y) > 0 && normals.valid(x, y);
      }
    if (valid >= opt.min_valid_fraction * opt.size * opt.size) usable.push_back(c);
  }
  std::vector<Patch> out;
  for (const Corner& c : suppress_by_spacing(std::move(usable), opt.min_spacing, existing_anchors, opt.budget)) {
    auto p = sample_patch(frame.intensity, frame.depth, normals, c.u, c.v, opt.size, opt.min_valid_fraction);
    if (!p) continue;
    p->id = next_id++;
    p->source_frame = frame_index;
    out.push_back(std::move(*p));
  }
  return out;
}

inline std::vector<Patch> extract_patches(const Frame& frame, const NormalMap& normals, std::span<const Patch> existing,
                                          const PatchOptions& opt, std::uint64_t& next_id, int frame_index = 0) {
  std::vector<Vec2> anchors;
  for (const auto& p : existing) anchors.push_back(p.anchor);
  return extract_patches(frame, normals, std::span<const Vec2>(anchors), opt, next_id, frame_index);
}

// ---------------------------------------------------------------------------
// World patches and deformation

struct WorldPatch {
  std::uint64_t id = 0;
  int size = 10;
  Vec2 anchor = Vec2::Zero();  // in the source image
  std::vector<Vec3> points;    // world
  std::vector<Vec3> normals;   // world
  std::vector<double> intensities;
  std::vector<Vec2> source_pixels;
  std::vector<double> source_depths;
  Pose source_pose;
  double quality = 0.0;

  std::size_t count() const { return points.size(); }
};

inline WorldPatch back_project(const Patch& patch, const Pose& pose_prev, const CameraIntrinsics& k) {
  WorldPatch w;
  w.id = patch.id;
  w.size = patch.size;
  w.anchor = patch.anchor;
  w.source_pose = pose_prev;
  w.quality = patch.quality;
  for (const auto& px : patch.pixels) {
    if (!px.valid_depth) continue;
    w.points.push_back(pose_prev * unproject(k, px.pixel, px.depth));
    w.normals.push_back(pose_prev.rotation() * px.normal);
    w.intensities.push_back(px.intensity);
    w.source_pixels.push_back(px.pixel);
    w.source_depths.push_back(px.depth);
  }
  if (w.points.empty()) throw NoValidPixels("back_project: patch has no valid-depth pixels");
  return w;
}

enum class SeStatus { None, Shrink, Extend, Both };

inline const char* to_string(SeStatus s) {
  switch (s) {
    case SeStatus::None: return "none";
    case SeStatus::Shrink: return "shrink";
    case SeStatus::Extend: return "extend";
    case SeStatus::Both: return "both";
  }
  return "none";
}

struct PixelBox {
  int u0 = 0, v0 = 0, u1 = -1, v1 = -1;  // inclusive
  int width() const { return u1 - u0 + 1; }
  int height() const { return v1 - v0 + 1; }
};

struct DeformedPatch {
  std::vector<Vec2> projected;            // per world point, current image
  std::vector<double> depth;              // current-camera z
  std::vector<std::uint8_t> in_front;
  std::vector<Vec2> compensated;          // motion-compensated grid coordinates
  std::vector<int> surviving;             // ascending indices into the world patch
  SeStatus se_status = SeStatus::None;
  PixelBox bbox;                          // integer box around all projected pixels
  int reference = -1;                     // rigid mode: index whose projection moves the whole patch
};

struct DeformOptions {
  double min_survivor_fraction = 0.25;
};

namespace detail {

inline PixelBox box_of(const std::vector<Vec2>& pts, const std::vector<std::uint8_t>& use) {
  PixelBox b{std::numeric_limits<int>::max(), std::numeric_limits<int>::max(), std::numeric_limits<int>::min(),
             std::numeric_limits<int>::min()};
  bool any = false;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (!use[i]) continue;
    any = true;
    b.u0 = std::min(b.u0, static_cast<int>(std::floor(pts[i].x())));
    b.v0 = std::min(b.v0, static_cast<int>(std::floor(pts[i].y())));
    b.u1 = std::max(b.u1, static_cast<int>(std::ceil(pts[i].x())));
    b.v1 = std::max(b.v1, static_cast<int>(std::ceil(pts[i].y())));
  }
  return any ? b : PixelBox{};
}

/// Index of the lower-median source depth.
inline int median_depth_index(const WorldPatch& w) {
  std::vector<int> idx(w.count());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return w.source_depths[a] < w.source_depths[b]; });
  return idx[(idx.size() - 1) / 2];
}

/// Source -> current image homography of the plane through the reference
/// pixel with its normal (fronto-parallel when the normal is grazing).
inline Eigen::Matrix3d reference_homography(const WorldPatch& w, const Pose& T_rel, const CameraIntrinsics& k) {
  const int r = median_depth_index(w);
  const Vec3 X = unproject(k, w.source_pixels[r], w.source_depths[r]);
  Vec3 n = w.source_pose.rotation().transpose() * w.normals[r];
  if (std::abs(n.dot(X)) < 0.1 * X.norm()) n = Vec3(0, 0, -1);
  const double d = n.dot(X);
  Eigen::Matrix3d K;
  K << k.fx, 0, k.cx, 0, k.fy, k.cy, 0, 0, 1;
  Eigen::Matrix3d Kinv;
  Kinv << 1 / k.fx, 0, -k.cx / k.fx, 0, 1 / k.fy, -k.cy / k.fy, 0, 0, 1;
  return K * (T_rel.rotation() + T_rel.translation() * n.transpose() / d) * Kinv;
}

inline void finish(DeformedPatch& out, const CameraIntrinsics& k, const DeformOptions& opt) {
  const std::size_t n = out.projected.size();
  std::size_t inside = 0;
  for (int i : out.surviving) inside += k.in_image(out.projected[i]);
  if (n == 0 || inside < opt.min_survivor_fraction * static_cast<double>(n))
    throw PatchLost("deform: too few pixels survive inside the image");
  out.bbox = box_of(out.projected, out.in_front);
}

}  // namespace detail

/// Projects the world points into the current camera estimate and resolves
/// collisions. Collisions and spread are measured on a motion-compensated
/// grid: projections are mapped back through the homography of the patch's
/// dominant plane, so a planar patch lands on its own source pixels under any
/// motion and only depth structure inside the patch moves points across cells.
/// Points sharing a rounded cell keep the one nearest the current camera
/// (shrink); survivors spanning more than `original_size` cells in either
/// direction flag extend.
inline DeformedPatch deform(const WorldPatch& world, const Pose& pose_curr, const CameraIntrinsics& k, int original_size,
                            const DeformOptions& opt = {}) {
  const std::size_t n = world.count();
  DeformedPatch out;
  out.projected.assign(n, Vec2::Zero());
  out.depth.assign(n, 0.0);
  out.in_front.assign(n, 0);
  out.compensated.assign(n, Vec2::Zero());
  const Pose T_cw = pose_curr.inverse();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 X = T_cw * world.points[i];
    if (!(X.z() > 0)) continue;
    out.in_front[i] = 1;
    out.depth[i] = X.z();
    out.projected[i] = project(k, X);
  }
  if (n == 0) throw PatchLost("deform: empty patch");

  const Pose T_rel = T_cw * world.source_pose;
  const Eigen::Matrix3d Hinv = detail::reference_homography(world, T_rel, k).inverse();
  std::vector<Eigen::Vector2i> cell(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!out.in_front[i]) continue;
    const Vec3 h = Hinv * Vec3(out.projected[i].x(), out.projected[i].y(), 1.0);
    out.compensated[i] = std::abs(h.z()) > 1e-12 ? Vec2(h.x() / h.z(), h.y() / h.z()) : out.projected[i];
    cell[i] = Eigen::Vector2i(static_cast<int>(std::lround(out.compensated[i].x())),
                              static_cast<int>(std::lround(out.compensated[i].y())));
  }

  // shrink: nearest point wins each cell, lower index on exact ties
  std::vector<int> order;
  for (std::size_t i = 0; i < n; ++i)
    if (out.in_front[i]) order.push_back(static_cast<int>(i));
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (cell[a].y() != cell[b].y()) return cell[a].y() < cell[b].y();
    if (cell[a].x() != cell[b].x()) return cell[a].x() < cell[b].x();
    return out.depth[a] < out.depth[b];
  });
  bool shrink = false;
  for (std::size_t j = 0; j < order.size(); ++j) {
    if (j > 0 && cell[order[j]] == cell[order[j - 1]]) {
      shrink = true;
      continue;
    }
    out.surviving.push_back(order[j]);
  }
  std::sort(out.surviving.begin(), out.surviving.end());

  // extend: spread of the surviving cells
  bool extend = false;
  if (!out.surviving.empty()) {
    int u0 = INT32_MAX, v0 = INT32_MAX, u1 = INT32_MIN, v1 = INT32_MIN;
    for (int i : out.surviving) {
      u0 = std::min(u0, cell[i].x());
      u1 = std::max(u1, cell[i].x());
      v0 = std::min(v0, cell[i].y());
      v1 = std::max(v1, cell[i].y());
    }
    extend = (u1 - u0 + 1) > original_size || (v1 - v0 + 1) > original_size;
  }
  out.se_status = shrink && extend ? SeStatus::Both : shrink ? SeStatus::Shrink : extend ? SeStatus::Extend : SeStatus::None;
  detail::finish(out, k, opt);
  return out;
}

/// Baseline without deformation: the patch keeps its source shape and moves
/// with the projection of the point nearest its anchor.
inline DeformedPatch deform_rigid(const WorldPatch& world, const Pose& pose_curr, const CameraIntrinsics& k,
                                  const DeformOptions& opt = {}) {
  const std::size_t n = world.count();
  if (n == 0) throw PatchLost("deform_rigid: empty patch");
  int ref = 0;
  for (std::size_t i = 1; i < n; ++i)
    if ((world.source_pixels[i] - world.anchor).squaredNorm() < (world.source_pixels[ref] - world.anchor).squaredNorm())
      ref = static_cast<int>(i);
  const Vec3 X = pose_curr.inverse() * world.points[ref];
  if (!(X.z() > 0)) throw PatchLost("deform_rigid: patch behind the camera");
  const Vec2 q_ref = project(k, X);
  DeformedPatch out;
  out.reference = ref;
  out.projected.resize(n);
  out.depth.assign(n, X.z());
  out.in_front.assign(n, 1);
  out.compensated = world.source_pixels;
  for (std::size_t i = 0; i < n; ++i) {
    out.projected[i] = q_ref + (world.source_pixels[i] - world.source_pixels[ref]);
    out.surviving.push_back(static_cast<int>(i));
  }
  detail::finish(out, k, opt);
  return out;
}

// ---------------------------------------------------------------------------
// Residuals and the stacked objective

enum class ResidualType { Photometric, Geometric };

struct RowInfo {
  std::uint64_t patch_id = 0;
  int point = 0;  // index into the world patch
  ResidualType type = ResidualType::Photometric;
};

struct ObjectiveOptions {
  double lambda = 0.5;
  double sigma_photometric = 10.0;  // gray levels
  double sigma_geometric = 0.05;    // meters
  double geometric_gate = 0.1;      // meters; larger point-to-plane distances are treated as outliers
  bool deformation = true;
  DeformOptions deform;
};

struct PatchStats {
  std::uint64_t patch_id = 0;
  int photometric_rows = 0;
  int geometric_rows = 0;
  double abs_photometric_sum = 0.0;  // unscaled, gray levels

  double mean_abs_photometric() const { return photometric_rows ? abs_photometric_sum / photometric_rows : 0.0; }
};

struct Objective {
  Eigen::VectorXd residuals;                     // scaled
  Eigen::Matrix<double, Eigen::Dynamic, 6> jacobian;
  Eigen::VectorXd raw;                           // unscaled (gray levels / meters)
  std::vector<RowInfo> rows;
  std::vector<DeformedPatch> deformed;           // parallel to the input patches
  std::vector<std::uint8_t> lost;                // parallel to the input patches
  std::vector<PatchStats> stats;                 // parallel to the input patches

  std::size_t size() const { return rows.size(); }
  double energy() const { return residuals.squaredNorm(); }
};

struct ProjectedPoint {
  Vec2 q = Vec2::Zero();
  Eigen::Matrix<double, 2, 6> dq = Eigen::Matrix<double, 2, 6>::Zero();  // w.r.t. [dtheta, dt] under retract
};

/// Projection of world point L under camera-to-world pose (R, t) and its
/// derivative for R <- Exp(dθ) R, t <- t + dt.
inline std::optional<ProjectedPoint> project_point(const Vec3& L, const Pose& pose, const CameraIntrinsics& k) {
  const Mat3 Rt = pose.rotation().transpose();
  const Vec3 d = L - pose.translation();
  const Vec3 X = Rt * d;
  if (!(X.z() > 0)) return std::nullopt;
  ProjectedPoint p;
  p.q = project(k, X);
  Eigen::Matrix<double, 3, 6> dX;
  dX.leftCols<3>() = Rt * hat(d);
  dX.rightCols<3>() = -Rt;
  p.dq = project_jacobian(k, X) * dX;
  return p;
}

/// Photometric and point-to-plane rows of the surviving points of each patch
/// at `pose`, keeping the survivor sets fixed. Rows are ordered by patch, then
/// photometric before geometric, then by point index.
inline Objective evaluate_objective(std::span<const WorldPatch> patches, std::span<const DeformedPatch> deformed,
                                    const Frame& frame, const Pose& pose, const CameraIntrinsics& k,
                                    const ObjectiveOptions& opt) {
  if (opt.lambda < 0 || opt.lambda > 1) throw InvalidArgument("lambda must lie in [0, 1]");
  const double wp = std::sqrt(opt.lambda) / opt.sigma_photometric;
  const double wg = std::sqrt(1.0 - opt.lambda) / opt.sigma_geometric;
  std::vector<double> r, raw;
  std::vector<Eigen::Matrix<double, 1, 6>> J;
  Objective obj;
  obj.stats.resize(patches.size());
  obj.lost.assign(patches.size(), 0);

  for (std::size_t pi = 0; pi < patches.size(); ++pi) {
    const WorldPatch& w = patches[pi];
    const DeformedPatch& d = deformed[pi];
    PatchStats& st = obj.stats[pi];
    st.patch_id = w.id;

    std::optional<ProjectedPoint> ref;
    if (d.reference >= 0) ref = project_point(w.points[d.reference], pose, k);
    auto point_projection = [&](int i) -> std::optional<ProjectedPoint> {
      if (d.reference < 0) return project_point(w.points[i], pose, k);
      if (!ref) return std::nullopt;
      ProjectedPoint p = *ref;
      p.q += w.source_pixels[i] - w.source_pixels[d.reference];
      return p;
    };

    std::vector<std::optional<ProjectedPoint>> proj;
    proj.reserve(d.surviving.size());
    for (int i : d.surviving) proj.push_back(point_projection(i));

    if (opt.lambda > 0) {
      for (std::size_t s = 0; s < d.surviving.size(); ++s) {
        const auto& p = proj[s];
        if (!p || !can_interpolate(frame.intensity, p->q.x(), p->q.y())) continue;
        const int i = d.surviving[s];
        const BilinearSample b = sample_bilinear(frame.intensity, p->q.x(), p->q.y());
        const double res = b.value - w.intensities[i];
        raw.push_back(res);
        r.push_back(wp * res);
        J.push_back(wp * (b.gradient.transpose() * p->dq));
        obj.rows.push_back({w.id, i, ResidualType::Photometric});
        ++st.photometric_rows;
        st.abs_photometric_sum += std::abs(res);
      }
    }
    if (opt.lambda < 1) {
      for (std::size_t s = 0; s < d.surviving.size(); ++s) {
        const auto& p = proj[s];
        if (!p) continue;
        float z = 0.0f;
        int iu = 0, iv = 0;
        if (!sample_nearest(frame.depth, p->q.x(), p->q.y(), z, &iu, &iv) || !(z > 0)) continue;
        const int i = d.surviving[s];
        const Vec3 Xm = unproject(k, Vec2(iu, iv), z);
        const Vec3 RX = pose.rotation() * Xm;
        const Vec3& n = w.normals[i];
        const double res = n.dot(RX + pose.translation() - w.points[i]);
        if (std::abs(res) > opt.geometric_gate) continue;
        Eigen::Matrix<double, 1, 6> row;
        row.leftCols<3>() = RX.cross(n).transpose();
        row.rightCols<3>() = n.transpose();
        raw.push_back(res);
        r.push_back(wg * res);
        J.push_back(wg * row);
        obj.rows.push_back({w.id, i, ResidualType::Geometric});
        ++st.geometric_rows;
      }
    }
  }
  obj.residuals = Eigen::Map<Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size()));
  obj.raw = Eigen::Map<Eigen::VectorXd>(raw.data(), static_cast<Eigen::Index>(raw.size()));
  obj.jacobian.resize(static_cast<Eigen::Index>(J.size()), 6);
  for (std::size_t i = 0; i < J.size(); ++i) obj.jacobian.row(static_cast<Eigen::Index>(i)) = J[i];
  obj.deformed.assign(deformed.begin(), deformed.end());
  return obj;
}

/// Deforms every patch at `pose` and stacks the weighted residuals:
/// photometric rows scaled by sqrt(λ)/σ_p, geometric rows by sqrt(1-λ)/σ_g,
/// so ‖r‖² is the weighted energy. Lost patches contribute no rows.
inline Objective stack_objective(std::span<const WorldPatch> patches, const Frame& frame, const Pose& pose,
                                 const CameraIntrinsics& k, const ObjectiveOptions& opt) {
  std::vector<DeformedPatch> deformed(patches.size());
  std::vector<std::uint8_t> lost(patches.size(), 0);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    try {
      deformed[i] = opt.deformation ? deform(patches[i], pose, k, patches[i].size, opt.deform)
                                    : deform_rigid(patches[i], pose, k, opt.deform);
    } catch (const PatchLost&) {
      lost[i] = 1;
    }
  }
  Objective obj = evaluate_objective(patches, deformed, frame, pose, k, opt);
  obj.lost = std::move(lost);
  if (obj.size() == 0) throw NoResiduals("stack_objective: no residuals from any patch");
  return obj;
}

}  // namespace fastfusion
