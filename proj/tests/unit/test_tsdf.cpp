#include <gtest/gtest.h>

#include <map>
#include <random>

#include "fastfusion/tsdf.hpp"
#include "test_support.hpp"

using namespace fastfusion;

namespace {

const CameraIntrinsics kCam{150, 150, 79.5, 59.5, 160, 120, 5000};

synth::Scene plane_scene(const Vec3& normal, double distance) {
  synth::Scene s;
  synth::Primitive p;
  p.center = Vec3(0, 0, distance);
  p.normal = normal.normalized();
  s.primitives.push_back(p);
  return s;
}

synth::Scene sphere_scene() {
  synth::Scene s;
  synth::Primitive p;
  p.kind = synth::Primitive::Kind::Sphere;
  p.radius = 1.0;
  s.primitives.push_back(p);
  return s;
}

DepthImage depth_of(const synth::Scene& s, const Pose& p) { return synth::render(s, kCam, p, 0.0).depth; }

TsdfOptions plane_volume() {
  TsdfOptions o;
  o.origin = Vec3(-1.0, -1.0, 0.5);
  o.dims = Eigen::Vector3i(100, 100, 100);
  return o;
}

/// Camera at `eye` looking at the origin.
Pose look_at(const Vec3& eye) {
  const Vec3 z = (-eye).normalized();
  const Vec3 helper = std::abs(z.y()) < 0.9 ? Vec3::UnitY() : Vec3::UnitX();
  const Vec3 x = helper.cross(z).normalized();
  const Vec3 y = z.cross(x);
  Mat3 R;
  R << x, y, z;
  return Pose(R, eye);
}

std::vector<Pose> sphere_views(int n, double radius) {
  // Fibonacci directions cover the sphere evenly
  std::vector<Pose> out;
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double y = 1.0 - 2.0 * (i + 0.5) / n;
    const double r = std::sqrt(1.0 - y * y);
    out.push_back(look_at(radius * Vec3(r * std::cos(golden * i), y, r * std::sin(golden * i))));
  }
  return out;
}

TsdfOptions sphere_volume() {
  TsdfOptions o;
  o.origin = Vec3::Constant(-1.3);
  o.dims = Eigen::Vector3i::Constant(131);
  return o;
}

const TsdfVolume& fused_sphere() {
  static const TsdfVolume vol = [] {
    TsdfVolume v(sphere_volume());
    const auto scene = sphere_scene();
    for (const Pose& p : sphere_views(20, 3.0)) v.integrate(depth_of(scene, p), p, kCam);
    return v;
  }();
  return vol;
}

}  // namespace

TEST(Tsdf, RejectsBadOptions) {
  TsdfOptions o;
  o.voxel_size = 0;
  EXPECT_THROW(TsdfVolume{o}, InvalidArgument);
  o = TsdfOptions{};
  o.dims = Eigen::Vector3i(0, 1, 1);
  EXPECT_THROW(TsdfVolume{o}, InvalidArgument);
  EXPECT_DOUBLE_EQ(TsdfVolume().truncation(), 0.1);
}

TEST(Tsdf, PlaneZeroCrossingAtTrueDepth) {
  TsdfVolume vol(plane_volume());
  vol.integrate(depth_of(plane_scene(Vec3(0, 0, -1), 2.0), Pose::identity()), Pose::identity(), kCam);
  int checked = 0;
  // the volume spans x, y in [-1, 1]: stay inside its footprint at 2 m
  for (int v = 10; v < 110; v += 5)
    for (int u = 15; u < 145; u += 5) {
      const auto hit = raycast_pixel(vol, Pose::identity(), kCam, u, v);
      ASSERT_TRUE(hit) << u << "," << v;
      EXPECT_NEAR(hit->depth, 2.0, vol.voxel_size());
      EXPECT_GT(hit->normal.dot(Vec3(0, 0, -1)), std::cos(5 * M_PI / 180));
      ++checked;
    }
  EXPECT_GT(checked, 300);
}

TEST(Tsdf, IntegratingTheSameFrameTwiceDoublesWeights) {
  TsdfVolume once(plane_volume()), twice(plane_volume());
  const DepthImage d = depth_of(plane_scene(Vec3(0.2, 0.1, -1), 2.0), Pose::identity());
  once.integrate(d, Pose::identity(), kCam);
  twice.integrate(d, Pose::identity(), kCam);
  twice.integrate(d, Pose::identity(), kCam);
  for (std::size_t i = 0; i < once.tsdf_values().size(); ++i) {
    EXPECT_FLOAT_EQ(once.tsdf_values()[i], twice.tsdf_values()[i]);
    EXPECT_FLOAT_EQ(2 * once.weights()[i], twice.weights()[i]);
  }
}

TEST(Tsdf, VoxelsBeyondTruncationBehindSurfaceAreUntouched) {
  TsdfVolume vol(plane_volume());
  vol.integrate(depth_of(plane_scene(Vec3(0, 0, -1), 2.0), Pose::identity()), Pose::identity(), kCam);
  // voxel index 50 in x and y sits on the optical axis; z index k is at 0.5 + 0.02 k
  EXPECT_EQ(vol.weight(50, 50, 86), 0.0f);  // 2.22 m
  EXPECT_GT(vol.weight(50, 50, 79), 0.0f);  // 2.08 m
  EXPECT_NEAR(vol.tsdf(50, 50, 79), -0.8, 1e-5);
  EXPECT_FLOAT_EQ(vol.tsdf(50, 50, 20), 1.0f);  // free space in front is clamped at +1
}

TEST(Tsdf, SaturatedWeightsMakeReintegrationANoOp) {
  TsdfOptions o = plane_volume();
  o.max_weight = 3;
  TsdfVolume vol(o);
  const DepthImage d = depth_of(plane_scene(Vec3(0.1, -0.2, -1), 1.8), Pose::identity());
  for (int i = 0; i < 3; ++i) vol.integrate(d, Pose::identity(), kCam);
  const std::vector<float> t(vol.tsdf_values().begin(), vol.tsdf_values().end());
  const std::vector<float> w(vol.weights().begin(), vol.weights().end());
  for (int i = 0; i < 4; ++i) vol.integrate(d, Pose::identity(), kCam);
  EXPECT_TRUE(std::equal(t.begin(), t.end(), vol.tsdf_values().begin()));
  EXPECT_TRUE(std::equal(w.begin(), w.end(), vol.weights().begin()));
}

TEST(Tsdf, BoundsHoldUnderRandomIntegration) {
  TsdfOptions o;
  o.origin = Vec3::Constant(-1.0);
  o.dims = Eigen::Vector3i::Constant(40);
  o.voxel_size = 0.05;
  o.max_weight = 5;
  TsdfVolume vol(o);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> depth(0.2, 3.0), angle(-0.5, 0.5), shift(-0.5, 0.5);
  std::bernoulli_distribution hole(0.2);
  for (int k = 0; k < 12; ++k) {
    DepthImage d(kCam.width, kCam.height);
    for (auto& x : d) x = hole(rng) ? 0.0f : static_cast<float>(depth(rng));
    const Pose p = exp_map(Twist(Vec3(angle(rng), angle(rng), angle(rng)), Vec3(shift(rng), shift(rng), shift(rng) - 1.5)));
    vol.integrate(d, p, kCam);
    for (std::size_t i = 0; i < vol.weights().size(); ++i) {
      ASSERT_LE(std::abs(vol.tsdf_values()[i]), 1.0f);
      ASSERT_GE(vol.weights()[i], 0.0f);
      ASSERT_LE(vol.weights()[i], 5.0f);
    }
  }
}

TEST(Tsdf, EmptyVolume) {
  const TsdfVolume vol(plane_volume());
  EXPECT_TRUE(vol.empty());
  const ModelView mv = raycast(vol, Pose::identity(), kCam);
  EXPECT_TRUE(std::all_of(mv.depth.begin(), mv.depth.end(), [](float d) { return d == 0.0f; }));
  EXPECT_TRUE(std::all_of(mv.normals.valid.begin(), mv.normals.valid.end(), [](auto v) { return v == 0; }));
  EXPECT_THROW(extract_mesh(vol), EmptySurface);
}

TEST(Tsdf, RaycastReproducesInputDepthAfterOneIntegration) {
  const fftest::RoomScene room;
  TsdfOptions o;
  o.origin = Vec3(-1.4, -1.2, -1.3);
  o.dims = Eigen::Vector3i(170, 140, 230);
  TsdfVolume vol(o);
  const Pose p = room.pose0();
  const DepthImage d = depth_of(room.scene, p);
  vol.integrate(d, p, kCam);
  const ModelView mv = raycast(vol, p, kCam);
  int valid = 0, close = 0;
  for (int v = 0; v < kCam.height; ++v)
    for (int u = 0; u < kCam.width; ++u) {
      if (!(d(u, v) > 0)) continue;
      ++valid;
      close += mv.depth(u, v) > 0 && std::abs(mv.depth(u, v) - d(u, v)) <= 2 * vol.voxel_size();
    }
  EXPECT_GT(valid, 15000);
  EXPECT_GE(close, 0.9 * valid);
}

TEST(Tsdf, SphereRaycastMatchesAnalyticDepth) {
  const TsdfVolume& vol = fused_sphere();
  const auto scene = sphere_scene();
  for (const Vec3& eye : {Vec3(0.3, 0.4, -2.6), Vec3(2.0, -1.0, 1.5)}) {
    const Pose p = look_at(eye);
    const DepthImage truth = depth_of(scene, p);
    const ModelView mv = raycast(vol, p, kCam);
    int hits = 0, good = 0;
    for (int v = 0; v < kCam.height; ++v)
      for (int u = 0; u < kCam.width; ++u) {
        if (!(truth(u, v) > 0) || !(mv.depth(u, v) > 0)) continue;
        ++hits;
        good += std::abs(mv.depth(u, v) - truth(u, v)) <= vol.voxel_size();
      }
    EXPECT_GT(hits, 3000);
    EXPECT_GE(good, 0.95 * hits);
  }
}

TEST(Tsdf, SphereMeshIsCloseAndWatertight) {
  const Mesh mesh = extract_mesh(fused_sphere());
  double ss = 0;
  for (const auto& v : mesh.vertices) ss += std::pow(v.cast<double>().norm() - 1.0, 2);
  EXPECT_LT(std::sqrt(ss / mesh.vertices.size()), fused_sphere().voxel_size());

  // every edge is shared by exactly two triangles, with opposite orientation
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> directed;
  for (const auto& t : mesh.triangles)
    for (int i = 0; i < 3; ++i) ++directed[{t[i], t[(i + 1) % 3]}];
  std::size_t edges = 0;
  for (const auto& [e, count] : directed) {
    EXPECT_EQ(count, 1);
    EXPECT_EQ(directed.count({e.second, e.first}), 1u);
    edges += e.first < e.second;
  }
  const long chi = static_cast<long>(mesh.vertices.size()) - static_cast<long>(edges) + static_cast<long>(mesh.triangles.size());
  EXPECT_EQ(chi, 2);

  // outward orientation
  double outward = 0;
  for (std::size_t i = 0; i < mesh.triangles.size(); ++i)
    outward += mesh.normal(i).dot(mesh.vertices[mesh.triangles[i][0]].cast<double>());
  EXPECT_GT(outward, 0.9 * mesh.triangles.size());
}

TEST(Tsdf, PlaneMeshNormalsFollowThePlane) {
  for (const Vec3& n : {Vec3(0, 0, -1), Vec3(0.15, -0.1, -1).normalized()}) {
    // 2.01 m keeps the plane off the voxel layers, so no triangle degenerates to a point
    TsdfVolume vol(plane_volume());
    vol.integrate(depth_of(plane_scene(n, 2.01), Pose::identity()), Pose::identity(), kCam);
    const Mesh mesh = extract_mesh(vol);
    ASSERT_GT(mesh.triangles.size(), 1000u);
    // slivers where the plane passes through a grid vertex have no meaningful normal
    const double min_area = 1e-4 * vol.voxel_size() * vol.voxel_size();
    int checked = 0, within = 0;
    for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
      const auto& t = mesh.triangles[i];
      const Vec3 a = mesh.vertices[t[0]].cast<double>();
      const double area = 0.5 * (mesh.vertices[t[1]].cast<double>() - a).cross(mesh.vertices[t[2]].cast<double>() - a).norm();
      if (area < min_area) continue;
      ++checked;
      within += mesh.normal(i).dot(n) > std::cos(5 * M_PI / 180);
    }
    EXPECT_GT(checked, 0.9 * mesh.triangles.size());
    EXPECT_EQ(within, checked) << n.transpose();
  }
}

TEST(Ply, BinaryLittleEndianRoundTrip) {
  Mesh mesh;
  mesh.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1.5f, -2}};
  mesh.triangles = {{0, 1, 2}};
  fftest::TempDir dir("ply");
  const auto path = dir.path() / "m.ply";
  write_ply(path, mesh);
  std::ifstream f(path, std::ios::binary);
  std::string line, header;
  while (std::getline(f, line)) {
    header += line + "\n";
    if (line == "end_header") break;
  }
  EXPECT_NE(header.find("format binary_little_endian 1.0"), std::string::npos);
  EXPECT_NE(header.find("element vertex 3"), std::string::npos);
  EXPECT_NE(header.find("element face 1"), std::string::npos);
  std::vector<unsigned char> body((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  ASSERT_EQ(body.size(), 3u * 12 + 1 + 12);
  auto le_u32 = [&](std::size_t at) {
    return std::uint32_t(body[at]) | std::uint32_t(body[at + 1]) << 8 | std::uint32_t(body[at + 2]) << 16 |
           std::uint32_t(body[at + 3]) << 24;
  };
  EXPECT_EQ(std::bit_cast<float>(le_u32(2 * 12 + 4)), 1.5f);
  EXPECT_EQ(std::bit_cast<float>(le_u32(2 * 12 + 8)), -2.0f);
  EXPECT_EQ(body[36], 3);
  EXPECT_EQ(le_u32(37 + 8), 2u);
}
