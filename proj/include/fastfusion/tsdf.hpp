#pragma once

// Dense truncated signed distance volume: depth fusion, model raycasting and
// zero-level-set mesh extraction.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "fastfusion/errors.hpp"
#include "fastfusion/geometry.hpp"
#include "fastfusion/image.hpp"

namespace fastfusion {

struct TsdfOptions {
  Vec3 origin = Vec3(-1.5, -1.5, -0.5);  // world position of voxel (0, 0, 0)
  double voxel_size = 0.02;
  Eigen::Vector3i dims = Eigen::Vector3i(150, 150, 150);
  double truncation = 0.0;  // <= 0 selects 5 voxels
  float max_weight = 100.0f;
};

class TsdfVolume {
 public:
  explicit TsdfVolume(const TsdfOptions& opt = {}) : opt_(opt) {
    if (!(opt_.voxel_size > 0)) throw InvalidArgument("tsdf: voxel size must be positive");
    if ((opt_.dims.array() <= 0).any()) throw InvalidArgument("tsdf: dimensions must be positive");
    if (!(opt_.max_weight > 0)) throw InvalidArgument("tsdf: max weight must be positive");
    if (!(opt_.truncation > 0)) opt_.truncation = 5.0 * opt_.voxel_size;
    const std::size_t n = static_cast<std::size_t>(opt_.dims.x()) * opt_.dims.y() * opt_.dims.z();
    tsdf_.assign(n, 1.0f);
    weight_.assign(n, 0.0f);
  }

  const TsdfOptions& options() const { return opt_; }
  double voxel_size() const { return opt_.voxel_size; }
  double truncation() const { return opt_.truncation; }
  const Eigen::Vector3i& dims() const { return opt_.dims; }

  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * opt_.dims.y() + y) * opt_.dims.x() + x;
  }
  bool contains(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < opt_.dims.x() && y < opt_.dims.y() && z < opt_.dims.z();
  }
  Vec3 voxel_center(int x, int y, int z) const { return opt_.origin + opt_.voxel_size * Vec3(x, y, z); }
  Vec3 to_grid(const Vec3& world) const { return (world - opt_.origin) / opt_.voxel_size; }

  float tsdf(int x, int y, int z) const { return tsdf_[index(x, y, z)]; }
  float weight(int x, int y, int z) const { return weight_[index(x, y, z)]; }
  std::span<const float> tsdf_values() const { return tsdf_; }
  std::span<const float> weights() const { return weight_; }

  bool empty() const {
    for (float w : weight_)
      if (w > 0) return false;
    return true;
  }

  /// Depth at a sub-pixel position: bilinear when the four neighbours are
  /// valid and within `spread` of each other, nearest pixel otherwise, 0 when
  /// unavailable.
  static double depth_at(const DepthImage& depth, double x, double y, double spread) {
    const int u = static_cast<int>(std::lround(x)), v = static_cast<int>(std::lround(y));
    if (u < 0 || v < 0 || u >= depth.width() || v >= depth.height()) return 0.0;
    // the cell is clamped into the image, so the outer half pixel extrapolates linearly
    const int u0 = std::clamp(static_cast<int>(std::floor(x)), 0, depth.width() - 2);
    const int v0 = std::clamp(static_cast<int>(std::floor(y)), 0, depth.height() - 2);
    if (depth.width() > 1 && depth.height() > 1) {
      const double a = depth(u0, v0), b = depth(u0 + 1, v0), c = depth(u0, v0 + 1), e = depth(u0 + 1, v0 + 1);
      if (a > 0 && b > 0 && c > 0 && e > 0 && std::max({a, b, c, e}) - std::min({a, b, c, e}) <= spread) {
        const double fx = x - u0, fy = y - v0;
        return (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * e);
      }
    }
    return depth(u, v);
  }

  /// Running-average fusion of one depth frame (sample weight 1). Voxels more
  /// than one truncation distance behind the observed surface are untouched.
  /// Depth is read bilinearly where the neighbourhood is continuous.
  void integrate(const DepthImage& depth, const Pose& pose, const CameraIntrinsics& k) {
    if (!pose.is_valid(1e-6)) throw InvalidArgument("tsdf: invalid pose");
    if (depth.width() != k.width || depth.height() != k.height)
      throw InvalidArgument("tsdf: depth image does not match intrinsics");
    const Pose cw = pose.inverse();
    const Mat3& R = cw.rotation();
    const double trunc = opt_.truncation;
    for (int z = 0; z < opt_.dims.z(); ++z) {
      for (int y = 0; y < opt_.dims.y(); ++y) {
        const Vec3 row = cw * voxel_center(0, y, z);
        const Vec3 step = R.col(0) * opt_.voxel_size;
        for (int x = 0; x < opt_.dims.x(); ++x) {
          const Vec3 p = row + step * x;
          if (!(p.z() > 0)) continue;
          const double d = depth_at(depth, k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy, trunc);
          if (!(d > 0)) continue;
          const double sdf = d - p.z();
          if (sdf < -trunc) continue;
          const float s = static_cast<float>(std::min(1.0, sdf / trunc));
          const std::size_t i = index(x, y, z);
          const float w = weight_[i];
          tsdf_[i] = static_cast<float>(std::clamp((double(tsdf_[i]) * w + s) / (w + 1.0), -1.0, 1.0));
          weight_[i] = std::min(w + 1.0f, opt_.max_weight);
        }
      }
    }
  }

  /// Trilinear tsdf at a continuous grid coordinate; empty when any of the
  /// eight corners is outside the grid or unobserved.
  std::optional<double> sample(const Vec3& g) const {
    const int x0 = static_cast<int>(std::floor(g.x()));
    const int y0 = static_cast<int>(std::floor(g.y()));
    const int z0 = static_cast<int>(std::floor(g.z()));
    if (!contains(x0, y0, z0) || !contains(x0 + 1, y0 + 1, z0 + 1)) return std::nullopt;
    const double fx = g.x() - x0, fy = g.y() - y0, fz = g.z() - z0;
    double acc = 0.0;
    for (int c = 0; c < 8; ++c) {
      const int dx = c & 1, dy = (c >> 1) & 1, dz = c >> 2;
      const std::size_t i = index(x0 + dx, y0 + dy, z0 + dz);
      if (!(weight_[i] > 0)) return std::nullopt;
      acc += tsdf_[i] * (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
    }
    return acc;
  }

  /// Unit gradient of the trilinear tsdf by central differences (world frame).
  std::optional<Vec3> gradient(const Vec3& g) const {
    Vec3 n;
    for (int a = 0; a < 3; ++a) {
      const auto p = sample(g + 0.5 * Vec3::Unit(a));
      const auto m = sample(g - 0.5 * Vec3::Unit(a));
      if (!p || !m) return std::nullopt;
      n[a] = *p - *m;
    }
    const double len = n.norm();
    if (!(len > 0)) return std::nullopt;
    return Vec3(n / len);
  }

 private:
  TsdfOptions opt_;
  std::vector<float> tsdf_;
  std::vector<float> weight_;
};

// ---------------------------------------------------------------------------
// Raycasting

struct RaycastHit {
  double depth = 0.0;  // along the optical axis
  Vec3 normal = Vec3::Zero();  // camera frame, facing the camera
};

/// Marches the ray through pixel (u, v) until the tsdf changes sign from
/// positive to negative, then interpolates the crossing. Steps are half a
/// voxel, lengthened in free space in proportion to the sampled distance.
inline std::optional<RaycastHit> raycast_pixel(const TsdfVolume& vol, const Pose& pose, const CameraIntrinsics& k,
                                               double u, double v) {
  const Vec3 dir_cam((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);  // unit z
  const Vec3 o = vol.to_grid(pose.translation());
  const Vec3 d = pose.rotation() * dir_cam / vol.voxel_size();  // grid units per metre of depth

  // clip the ray against the grid box
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double hi = vol.dims()[a] - 1;
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] < 0 || o[a] > hi) return std::nullopt;
      continue;
    }
    double ta = (0 - o[a]) / d[a], tb = (hi - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (!(t0 < t1)) return std::nullopt;

  const double step = 0.5 * vol.voxel_size() / dir_cam.norm();
  const double skip = 0.8 * vol.truncation() / dir_cam.norm();  // per unit of positive tsdf
  std::optional<double> prev;
  double t_prev = t0;
  for (double t = t0; t <= t1; t += (prev && *prev > 0) ? std::max(step, *prev * skip) : step) {
    const auto s = vol.sample(o + t * d);
    if (s && prev && *prev > 0 && *s <= 0) {
      const double t_hit = t_prev + (t - t_prev) * (*prev / (*prev - *s));
      const auto n = vol.gradient(o + t_hit * d);
      if (!n) return std::nullopt;
      RaycastHit hit;
      hit.depth = t_hit;
      hit.normal = pose.rotation().transpose() * *n;
      if (hit.normal.dot(dir_cam) > 0) hit.normal = -hit.normal;
      return hit;
    }
    if (s && prev && *prev < 0 && *s >= 0) return std::nullopt;  // seen from behind
    prev = s;
    t_prev = t;
  }
  return std::nullopt;
}

struct ModelView {
  DepthImage depth;
  NormalMap normals;
};

/// Full-image raycast: invalid pixels have depth 0 and valid flag 0.
inline ModelView raycast(const TsdfVolume& vol, const Pose& pose, const CameraIntrinsics& k) {
  ModelView out{DepthImage(k.width, k.height, 0.0f),
                NormalMap{Image<Vec3>(k.width, k.height, Vec3::Zero()), Image<std::uint8_t>(k.width, k.height, 0)}};
  for (int v = 0; v < k.height; ++v)
    for (int u = 0; u < k.width; ++u)
      if (const auto h = raycast_pixel(vol, pose, k, u, v)) {
        out.depth(u, v) = static_cast<float>(h->depth);
        out.normals.normals(u, v) = h->normal;
        out.normals.valid(u, v) = 1;
      }
  return out;
}

/// Raycast restricted to size x size windows anchored at `anchors` (same
/// offsets as patch windows) grown by `margin` pixels; other pixels stay invalid.
inline ModelView raycast_windows(const TsdfVolume& vol, const Pose& pose, const CameraIntrinsics& k,
                                 std::span<const Eigen::Vector2i> anchors, int size, int margin = 1) {
  ModelView out{DepthImage(k.width, k.height, 0.0f),
                NormalMap{Image<Vec3>(k.width, k.height, Vec3::Zero()), Image<std::uint8_t>(k.width, k.height, 0)}};
  Image<std::uint8_t> done(k.width, k.height, 0);
  const int h = size / 2;
  for (const auto& a : anchors)
    for (int v = std::max(0, a.y() - h - margin); v < std::min(k.height, a.y() - h + size + margin); ++v)
      for (int u = std::max(0, a.x() - h - margin); u < std::min(k.width, a.x() - h + size + margin); ++u) {
        if (done(u, v)) continue;
        done(u, v) = 1;
        if (const auto hit = raycast_pixel(vol, pose, k, u, v)) {
          out.depth(u, v) = static_cast<float>(hit->depth);
          out.normals.normals(u, v) = hit->normal;
          out.normals.valid(u, v) = 1;
        }
      }
  return out;
}

// ---------------------------------------------------------------------------
// Mesh extraction

struct Mesh {
  std::vector<Eigen::Vector3f> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;

  Vec3 normal(std::size_t tri) const {
    const auto& t = triangles[tri];
    const Vec3 a = vertices[t[0]].cast<double>(), b = vertices[t[1]].cast<double>(), c = vertices[t[2]].cast<double>();
    return (b - a).cross(c - a).normalized();
  }
};

namespace detail {
// Six tetrahedra sharing the cube diagonal 0-7; corner c has offset
// (c & 1, (c >> 1) & 1, c >> 2). Neighbouring cubes split shared faces the
// same way, so the surface has no cracks.
inline constexpr std::array<std::array<int, 4>, 6> kCubeTetrahedra{
    {{0, 1, 3, 7}, {0, 3, 2, 7}, {0, 2, 6, 7}, {0, 6, 4, 7}, {0, 4, 5, 7}, {0, 5, 1, 7}}};
}  // namespace detail

/// Zero level set by marching tetrahedra over observed voxels. Vertices on a
/// grid edge are shared between all cells using that edge; triangles face
/// the positive (free-space) side.
inline Mesh extract_mesh(const TsdfVolume& vol) {
  Mesh mesh;
  const auto& dims = vol.dims();
  std::unordered_map<std::uint64_t, std::uint32_t> edge_vertex;
  auto linear = [&](int x, int y, int z) -> std::uint64_t { return vol.index(x, y, z); };

  for (int z = 0; z + 1 < dims.z(); ++z) {
    for (int y = 0; y + 1 < dims.y(); ++y) {
      for (int x = 0; x + 1 < dims.x(); ++x) {
        std::array<Eigen::Vector3i, 8> corner;
        std::array<float, 8> val;
        bool observed = true, pos = false, neg = false;
        for (int c = 0; c < 8 && observed; ++c) {
          corner[c] = Eigen::Vector3i(x + (c & 1), y + ((c >> 1) & 1), z + (c >> 2));
          observed = vol.weight(corner[c].x(), corner[c].y(), corner[c].z()) > 0;
          val[c] = vol.tsdf(corner[c].x(), corner[c].y(), corner[c].z());
          (val[c] < 0 ? neg : pos) = true;
        }
        if (!observed || !pos || !neg) continue;

        auto vertex_on = [&](int a, int b) {
          std::uint64_t ia = linear(corner[a].x(), corner[a].y(), corner[a].z());
          std::uint64_t ib = linear(corner[b].x(), corner[b].y(), corner[b].z());
          if (ia > ib) {
            std::swap(ia, ib);
            std::swap(a, b);
          }
          const std::uint64_t key = ia * 8 + static_cast<std::uint64_t>((corner[b] - corner[a]).dot(Eigen::Vector3i(1, 2, 4)));
          const auto it = edge_vertex.find(key);
          if (it != edge_vertex.end()) return it->second;
          const double s = val[a] / (val[a] - val[b]);
          const Vec3 ga = corner[a].cast<double>(), gb = corner[b].cast<double>();
          const Vec3 p = vol.options().origin + vol.voxel_size() * (ga + s * (gb - ga));
          const auto id = static_cast<std::uint32_t>(mesh.vertices.size());
          mesh.vertices.push_back(p.cast<float>());
          edge_vertex.emplace(key, id);
          return id;
        };
        auto emit = [&](std::uint32_t a, std::uint32_t b, std::uint32_t c, const Vec3& toward_free) {
          const Vec3 pa = mesh.vertices[a].cast<double>();
          const Vec3 n = (mesh.vertices[b].cast<double>() - pa).cross(mesh.vertices[c].cast<double>() - pa);
          if (n.dot(toward_free) < 0) std::swap(b, c);
          mesh.triangles.push_back({a, b, c});
        };

        for (const auto& tet : detail::kCubeTetrahedra) {
          std::vector<int> in, out;
          for (int c : tet) (val[c] < 0 ? in : out).push_back(c);
          if (in.empty() || out.empty()) continue;
          Vec3 free_dir = Vec3::Zero();
          for (int c : out) free_dir += corner[c].cast<double>() / static_cast<double>(out.size());
          for (int c : in) free_dir -= corner[c].cast<double>() / static_cast<double>(in.size());
          if (in.size() == 1 || out.size() == 1) {
            const bool single_in = in.size() == 1;
            const int apex = single_in ? in[0] : out[0];
            const auto& others = single_in ? out : in;
            emit(vertex_on(apex, others[0]), vertex_on(apex, others[1]), vertex_on(apex, others[2]), free_dir);
          } else {
            const std::uint32_t a = vertex_on(in[0], out[0]), b = vertex_on(in[0], out[1]);
            const std::uint32_t c = vertex_on(in[1], out[1]), d = vertex_on(in[1], out[0]);
            emit(a, b, c, free_dir);
            emit(a, c, d, free_dir);
          }
        }
      }
    }
  }
  if (mesh.triangles.empty()) throw EmptySurface("extract_mesh: no zero crossing in the observed volume");
  return mesh;
}

/// Binary little-endian PLY: float x, y, z per vertex; uchar count + int
/// indices per face.
inline void write_ply(const std::filesystem::path& path, const Mesh& mesh) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f << "ply\nformat binary_little_endian 1.0\n"
    << "element vertex " << mesh.vertices.size() << "\n"
    << "property float x\nproperty float y\nproperty float z\n"
    << "element face " << mesh.triangles.size() << "\n"
    << "property list uchar int vertex_indices\nend_header\n";
  auto put = [&](auto value) {
    static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
    auto bytes = std::bit_cast<std::array<char, sizeof(value)>>(value);
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    f.write(bytes.data(), bytes.size());
  };
  for (const auto& v : mesh.vertices) {
    put(v.x());
    put(v.y());
    put(v.z());
  }
  for (const auto& t : mesh.triangles) {
    put(static_cast<std::uint8_t>(3));
    for (auto i : t) put(static_cast<std::int32_t>(i));
  }
  if (!f) throw Error("failed writing " + path.string());
}

}  // namespace fastfusion
