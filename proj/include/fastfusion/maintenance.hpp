#pragma once

// Patch lifecycle after each filter update: quality tracking and culling,
// re-squaring of deformed patches, re-sampling from the current frame and the
// fused model, and top-up with new corners.

#include <cmath>
#include <span>
#include <vector>

#include "fastfusion/patch.hpp"
#include "fastfusion/tsdf.hpp"

namespace fastfusion {

struct QualityOptions {
  double ema_factor = 0.7;   // weight of the previous running value
  double threshold = 15.0;   // gray levels
};

/// Running mean absolute intensity error. The first observation initializes
/// the value; later ones blend as q <- f q + (1 - f) e.
inline double update_quality(double previous, bool initialized, double error, const QualityOptions& opt) {
  return initialized ? opt.ema_factor * previous + (1.0 - opt.ema_factor) * error : error;
}

struct TrackedPatch {
  Patch patch;
  bool quality_initialized = false;
};

/// Folds the per-patch errors of the final objective into the running
/// qualities and returns the indices of the patches to keep: lost patches and
/// patches above the threshold are dropped. `stats` and `lost` are parallel to
/// `patches`; patches without photometric rows keep their quality.
inline std::vector<std::size_t> cull(std::span<TrackedPatch> patches, std::span<const PatchStats> stats,
                                     std::span<const std::uint8_t> lost, const QualityOptions& opt) {
  if (stats.size() != patches.size() || lost.size() != patches.size())
    throw InvalidArgument("cull: statistics do not match the patch list");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    TrackedPatch& t = patches[i];
    if (lost[i]) continue;
    if (stats[i].photometric_rows > 0) {
      t.patch.quality = update_quality(t.patch.quality, t.quality_initialized, stats[i].mean_abs_photometric(), opt);
      t.quality_initialized = true;
    }
    if (t.patch.quality <= opt.threshold) keep.push_back(i);
  }
  return keep;
}

/// Anchor of a tracked patch in the current image. Deformed patches are
/// re-centred: the new square is the one whose centre (half a pixel before
/// its anchor, see patch_half) lies nearest the centroid of the surviving
/// projections. Other patches keep their landmark: the projected position of
/// the original anchor (mean of projections minus their source offsets).
inline Eigen::Vector2i tracked_anchor(const WorldPatch& w, const DeformedPatch& d) {
  Vec2 acc = Vec2::Zero();
  const bool se = d.se_status != SeStatus::None;
  for (int i : d.surviving) acc += se ? d.projected[i] : Vec2(d.projected[i] - (w.source_pixels[i] - w.anchor));
  acc /= static_cast<double>(d.surviving.size());
  if (se && w.size % 2 == 0) acc += Vec2(0.5, 0.5);
  return {static_cast<int>(std::lround(acc.x())), static_cast<int>(std::lround(acc.y()))};
}

/// Depth and normals for re-sampling: the model raycast where valid, the
/// sensor frame elsewhere.
struct DepthSource {
  DepthImage depth;
  NormalMap normals;
};

inline DepthSource merge_depth(const Frame& frame, const CameraIntrinsics& k, const ModelView* model) {
  DepthSource out{frame.depth, compute_normals(frame.depth, k)};
  if (!model) return out;
  for (int v = 0; v < k.height; ++v)
    for (int u = 0; u < k.width; ++u)
      if (model->normals.valid(u, v) && model->depth(u, v) > 0) {
        out.depth(u, v) = model->depth(u, v);
        out.normals.normals(u, v) = model->normals.normals(u, v);
        out.normals.valid(u, v) = 1;
      }
  return out;
}

struct RefreshResult {
  std::vector<TrackedPatch> patches;
  std::size_t resquared = 0;
  std::size_t dropped = 0;
  std::size_t added = 0;
};

/// Re-samples every surviving patch as a fresh square at its tracked anchor
/// in the current frame (intensity from the image, depth and normals from
/// `source`), drops those that no longer fit, and adds new corners up to the
/// budget. `world` / `deformed` are parallel to `patches`.
inline RefreshResult refresh(std::vector<TrackedPatch> patches, std::span<const WorldPatch> world,
                             std::span<const DeformedPatch> deformed, const Frame& frame, const DepthSource& source,
                             const PatchOptions& opt, std::uint64_t& next_id, int frame_index) {
  if (world.size() != patches.size() || deformed.size() != patches.size())
    throw InvalidArgument("refresh: inputs are not parallel");
  RefreshResult out;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const DeformedPatch& d = deformed[i];
    if (d.surviving.empty()) {
      ++out.dropped;
      continue;
    }
    const Eigen::Vector2i a = tracked_anchor(world[i], d);
    auto fresh = sample_patch(frame.intensity, source.depth, source.normals, a.x(), a.y(), opt.size,
                              opt.min_valid_fraction);
    if (!fresh) {
      ++out.dropped;
      continue;
    }
    out.resquared += d.se_status != SeStatus::None;
    fresh->id = patches[i].patch.id;
    fresh->quality = patches[i].patch.quality;
    fresh->source_frame = frame_index;
    out.patches.push_back({std::move(*fresh), patches[i].quality_initialized});
  }
  if (out.patches.size() > opt.budget) out.patches.resize(opt.budget);
  if (out.patches.size() < opt.budget) {
    std::vector<Vec2> anchors;
    for (const auto& t : out.patches) anchors.push_back(t.patch.anchor);
    PatchOptions top_up = opt;
    top_up.budget = opt.budget - out.patches.size();
    Frame merged{frame.timestamp, frame.intensity, source.depth};
    for (auto& p : extract_patches(merged, source.normals, std::span<const Vec2>(anchors), top_up, next_id, frame_index)) {
      out.patches.push_back({std::move(p), false});
      ++out.added;
    }
  }
  return out;
}

}  // namespace fastfusion
