#pragma once

// FAST-9 segment-test corners and greedy spacing suppression.

#include <algorithm>
#include <array>
#include <span>
#include <vector>

#include "fastfusion/geometry.hpp"

namespace fastfusion {

struct Corner {
  int u = 0;
  int v = 0;
  double score = 0.0;
};

namespace detail {
// Bresenham circle of radius 3, clockwise from the top.
inline constexpr std::array<std::array<int, 2>, 16> kFastCircle{{{0, -3},
                                                                  {1, -3},
                                                                  {2, -2},
                                                                  {3, -1},
                                                                  {3, 0},
                                                                  {3, 1},
                                                                  {2, 2},
                                                                  {1, 3},
                                                                  {0, 3},
                                                                  {-1, 3},
                                                                  {-2, 2},
                                                                  {-3, 1},
                                                                  {-3, 0},
                                                                  {-3, -1},
                                                                  {-2, -2},
                                                                  {-1, -3}}};
}  // namespace detail

/// Corner score: the largest threshold for which nine contiguous circle pixels
/// are all brighter or all darker than the centre. Zero if no arc qualifies.
inline double fast9_score(const GrayImage& img, int u, int v) {
  std::array<double, 16> d{};
  const double c = img(u, v);
  for (int i = 0; i < 16; ++i) d[i] = img(u + detail::kFastCircle[i][0], v + detail::kFastCircle[i][1]) - c;
  double best = 0.0;
  for (int start = 0; start < 16; ++start) {
    double lo = d[start], hi = d[start];
    for (int k = 1; k < 9; ++k) {
      const double x = d[(start + k) % 16];
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    if (lo > 0) best = std::max(best, lo);
    if (hi < 0) best = std::max(best, -hi);
  }
  return best;
}

/// All pixels (at least 3 px from the border) whose score exceeds `threshold`.
inline std::vector<Corner> detect_fast9(const GrayImage& img, double threshold) {
  std::vector<Corner> out;
  for (int v = 3; v + 3 < img.height(); ++v)
    for (int u = 3; u + 3 < img.width(); ++u) {
      const double s = fast9_score(img, u, v);
      if (s > threshold) out.push_back({u, v, s});
    }
  return out;
}

/// Greedy suppression by descending score (row-major on ties): a candidate is
/// kept when it lies at least `min_spacing` px from every kept corner and
/// every entry of `existing`.
inline std::vector<Corner> suppress_by_spacing(std::vector<Corner> candidates, double min_spacing,
                                               std::span<const Vec2> existing = {}, std::size_t limit = SIZE_MAX) {
  std::stable_sort(candidates.begin(), candidates.end(), [](const Corner& a, const Corner& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.v != b.v) return a.v < b.v;
    return a.u < b.u;
  });
  const double s2 = min_spacing * min_spacing;
  std::vector<Corner> kept;
  auto far_from = [&](double u, double v) {
    for (const auto& e : existing)
      if ((e.x() - u) * (e.x() - u) + (e.y() - v) * (e.y() - v) < s2) return false;
    for (const auto& k : kept)
      if (static_cast<double>(k.u - u) * (k.u - u) + static_cast<double>(k.v - v) * (k.v - v) < s2) return false;
    return true;
  };
  for (const auto& c : candidates) {
    if (kept.size() >= limit) break;
    if (far_from(c.u, c.v)) kept.push_back(c);
  }
  return kept;
}

}  // namespace fastfusion
