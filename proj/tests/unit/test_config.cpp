#include <gtest/gtest.h>

#include <fstream>

#include "fastfusion/config.hpp"
#include "test_support.hpp"

using namespace fastfusion;
using nlohmann::json;

namespace {

class ConfigTest : public ::testing::Test {
 protected:
  fftest::TempDir dir{"config"};

  // sequence directory with a sequence.json but no frames
  void SetUp() override {
    SequenceMetadata m;
    m.name = "meta";
    m.config.intrinsics = CameraIntrinsics{100, 110, 40, 30, 80, 60, 1000};
    m.config.gravity_world = Vec3(0, 9.8, 0);
    m.initial_velocity = Vec3(0.1, 0.2, 0.3);
    std::filesystem::create_directories(dir.path() / "seq");
    std::ofstream(dir.path() / "seq" / "sequence.json") << to_json(m).dump(2);
  }

  json minimal() const { return {{"schema_version", 1}, {"sequence_dir", "seq"}}; }
  PipelineConfig parse(const json& j) const { return parse_config(j, dir.path()); }
};

}  // namespace

TEST_F(ConfigTest, DefaultsAndSequenceMetadata) {
  const PipelineConfig c = parse(minimal());
  EXPECT_EQ(c.sequence_dir, dir.path() / "seq");
  EXPECT_TRUE(c.groundtruth.empty());
  EXPECT_EQ(c.sequence.intrinsics.width, 80);
  EXPECT_EQ(c.sequence.intrinsics.fy, 110);
  EXPECT_EQ(c.depth_scale, 1000);
  EXPECT_TRUE(c.gravity_given);
  EXPECT_EQ(c.initial_velocity, Vec3(0.1, 0.2, 0.3));
  EXPECT_EQ(c.objective.lambda, 0.5);
  EXPECT_EQ(c.objective.sigma_photometric, 10.0);
  EXPECT_EQ(c.objective.sigma_geometric, 0.05);
  EXPECT_EQ(c.patches.size, 10);
  EXPECT_EQ(c.patches.budget, 100u);
  EXPECT_EQ(c.quality.threshold, 15.0);
  EXPECT_EQ(c.quality.ema_factor, 0.7);
  EXPECT_EQ(c.iterations.max_iters, 10);
  EXPECT_EQ(c.iterations.step_tol, 1e-4);
  EXPECT_TRUE(c.toggles.use_imu && c.toggles.use_deformation && c.toggles.use_model_depth);
}

TEST_F(ConfigTest, SectionsOverrideDefaults) {
  json j = minimal();
  j["groundtruth"] = "seq/gt.txt";
  j["max_frames"] = 12;
  j["seed"] = 99;
  j["objective"] = {{"lambda", 0.25}, {"sigma_photometric", 5}, {"geometric_gate", 0.2}};
  j["noise"] = {{"rotation", 0.02}, {"no_imu_inflation", 10}, {"initial_velocity", 0.5}};
  j["patches"] = {{"size", 8}, {"budget", 40}, {"quality_threshold", 20}};
  j["tsdf"] = {{"enabled", false}, {"origin", {1, 2, 3}}, {"dims", {10, 20, 30}}, {"voxel_size", 0.05}};
  j["iterations"] = {{"max_iters", 4}, {"step_tol", 1e-3}};
  j["toggles"] = {{"use_imu", false}, {"use_model_depth", false}};
  j["sequence"] = {{"camera_rate", 15}, {"initial_velocity", {0, 0, 1}}};
  const PipelineConfig c = parse(j);
  EXPECT_EQ(c.groundtruth, dir.path() / "seq/gt.txt");
  EXPECT_EQ(c.max_frames, 12);
  EXPECT_EQ(c.seed, 99u);
  EXPECT_EQ(c.objective.lambda, 0.25);
  EXPECT_EQ(c.objective.sigma_photometric, 5);
  EXPECT_EQ(c.objective.geometric_gate, 0.2);
  EXPECT_EQ(c.noise.rotation, 0.02);
  EXPECT_EQ(c.patches.size, 8);
  EXPECT_EQ(c.patches.budget, 40u);
  EXPECT_EQ(c.quality.threshold, 20);
  EXPECT_FALSE(c.tsdf_enabled);
  EXPECT_EQ(c.tsdf.origin, Vec3(1, 2, 3));
  EXPECT_EQ(c.tsdf.dims, Eigen::Vector3i(10, 20, 30));
  EXPECT_EQ(c.iterations.max_iters, 4);
  EXPECT_FALSE(c.toggles.use_imu);
  EXPECT_TRUE(c.toggles.use_deformation);
  EXPECT_FALSE(c.toggles.use_model_depth);
  EXPECT_EQ(c.sequence.camera_rate, 15);
  EXPECT_EQ(c.initial_velocity, Vec3(0, 0, 1));
  EXPECT_EQ(c.sequence.intrinsics.width, 80);  // untouched fields keep sequence.json values
}

TEST_F(ConfigTest, NoiseSettingsBuildFilterNoise) {
  json j = minimal();
  j["noise"] = {{"rotation", 0.1}, {"translation", 0.2}, {"velocity", 0.3}, {"no_imu_inflation", 50},
                {"initial_rotation", 0.01}, {"initial_translation", 0.02}, {"initial_velocity", 0.03}};
  const PipelineConfig c = parse(j);
  const NoiseConfig with = c.noise.filter_noise(true);
  const NoiseConfig without = c.noise.filter_noise(false);
  EXPECT_DOUBLE_EQ(with.process_Q(0, 0), 0.01);
  EXPECT_DOUBLE_EQ(with.process_Q(4, 4), 0.04);
  EXPECT_DOUBLE_EQ(with.process_Q(8, 8), 0.09);
  EXPECT_DOUBLE_EQ(without.process_Q(8, 8), 0.09 * 50);
  EXPECT_EQ(with.process_Q(0, 1), 0.0);
  const Mat9 P0 = c.noise.initial_covariance();
  EXPECT_DOUBLE_EQ(P0(2, 2), 1e-4);
  EXPECT_DOUBLE_EQ(P0(3, 3), 4e-4);
  EXPECT_DOUBLE_EQ(P0(6, 6), 9e-4);
}

TEST_F(ConfigTest, UnknownKeysAreRejected) {
  json top = minimal();
  top["colour"] = true;
  EXPECT_THROW(parse(top), ConfigError);
  for (const char* section : {"objective", "noise", "patches", "tsdf", "iterations", "toggles", "sequence"}) {
    json j = minimal();
    j[section] = {{"no_such_key", 1}};
    EXPECT_THROW(parse(j), ConfigError) << section;
  }
}

TEST_F(ConfigTest, InvalidValuesAreRejected) {
  const std::vector<std::pair<std::string, json>> bad{
      {"objective", {{"lambda", 1.5}}},
      {"objective", {{"sigma_photometric", 0}}},
      {"objective", {{"lambda", "half"}}},
      {"patches", {{"size", 1}}},
      {"patches", {{"budget", 0}}},
      {"patches", {{"size", 9.5}}},
      {"patches", {{"quality_ema", 1.0}}},
      {"tsdf", {{"dims", {10, 10}}}},
      {"tsdf", {{"voxel_size", -1}}},
      {"iterations", {{"max_iters", 0}}},
      {"toggles", {{"use_imu", 1}}},
      {"sequence", {{"camera", {{"fx", -1}, {"fy", 1}, {"cx", 0}, {"cy", 0}, {"width", 4}, {"height", 4}}}}},
  };
  for (const auto& [section, value] : bad) {
    json j = minimal();
    j[section] = value;
    EXPECT_THROW(parse(j), ConfigError) << section << " " << value.dump();
  }
  EXPECT_THROW(parse(json{{"sequence_dir", "seq"}}), ConfigError);
  EXPECT_THROW(parse(json{{"schema_version", 2}, {"sequence_dir", "seq"}}), ConfigError);
  EXPECT_THROW(parse(json{{"schema_version", 1}}), ConfigError);
  EXPECT_THROW(parse(json::array()), ConfigError);
  json neg = minimal();
  neg["seed"] = -3;
  EXPECT_THROW(parse(neg), ConfigError);
}

TEST_F(ConfigTest, MissingSequenceDirectoryIsASequenceError) {
  json j = minimal();
  j["sequence_dir"] = "absent";
  EXPECT_THROW(parse(j), MissingFile);
}

TEST_F(ConfigTest, SequenceWithoutMetadataNeedsACamera) {
  std::filesystem::create_directories(dir.path() / "plain");
  json j = minimal();
  j["sequence_dir"] = "plain";
  EXPECT_THROW(parse(j), ConfigError);
  j["sequence"] = {{"camera", {{"fx", 525}, {"fy", 525}, {"cx", 319.5}, {"cy", 239.5}, {"width", 640}, {"height", 480}}}};
  const PipelineConfig c = parse(j);
  EXPECT_EQ(c.sequence.intrinsics.fx, 525);
  EXPECT_EQ(c.depth_scale, 5000);
  EXPECT_FALSE(c.gravity_given);
}

TEST_F(ConfigTest, LoadResolvesPathsAgainstTheConfigFile) {
  std::ofstream(dir.path() / "seq" / "run.json") << R"({"schema_version": 1, "sequence_dir": "."})";
  EXPECT_EQ(load_config(dir.path() / "seq" / "run.json").sequence_dir, dir.path() / "seq" / ".");
  std::ofstream(dir.path() / "seq" / "config.json") << R"({"schema_version": 1, "sequence_dir": ".", "max_frames": 3})";
  EXPECT_EQ(load_config(dir.path() / "seq").max_frames, 3);
  std::ofstream(dir.path() / "broken.json") << "{ not json";
  EXPECT_THROW(load_config(dir.path() / "broken.json"), ConfigError);
  EXPECT_THROW(load_config(dir.path() / "missing.json"), ConfigError);
}
