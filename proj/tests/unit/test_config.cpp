#include <gtest/gtest.h>

#include <variant>

#include "bvio/config.hpp"
#include "bvio/experiments.hpp"

namespace bvio {
namespace {

constexpr const char* kRun = R"(
seed = 11

[paths]
sensor_log = "data/sensors.jsonl"
ground_truth = "/abs/gt.tum"
rig = "data/rig.json"
output_dir = "out"

[estimator]
window_size = 8
t2 = 12.5
mu = 0.9
r = 0.3

[init]
roll_error_deg = 5.0

[mode]
deterministic = true
forward_only = true
)";

TEST(RunConfig, ParsesAndResolvesPaths) {
  const RunConfig cfg = parse_run_config(kRun, "/base");
  EXPECT_EQ(cfg.seed, 11u);
  EXPECT_EQ(cfg.paths.sensor_log, std::filesystem::path("/base/data/sensors.jsonl"));
  EXPECT_EQ(cfg.paths.ground_truth, std::filesystem::path("/abs/gt.tum"));
  EXPECT_EQ(cfg.engine.window_size, 8);
  EXPECT_EQ(cfg.engine.t2, 12.5);
  EXPECT_EQ(cfg.engine.bound.mu, 0.9);
  EXPECT_EQ(cfg.engine.bound.ratio, 0.3);
  EXPECT_EQ(cfg.roll_error_deg, 5.0);
  EXPECT_TRUE(cfg.engine.deterministic);
  EXPECT_TRUE(cfg.engine.forward_only);
  EXPECT_EQ(cfg.source_text, kRun);
}

RunConfig with_line(const std::string& table, const std::string& line) {
  std::string text = kRun;
  const auto pos = text.find(table);
  text.insert(pos + table.size(), "\n" + line);
  return parse_run_config(text, "/base");
}

TEST(RunConfig, RejectsInvalidValues) {
  EXPECT_THROW(with_line("[estimator]", "turn_threshold_deg = 0.0"), ConfigError);
  EXPECT_THROW(parse_run_config(std::string(kRun).replace(std::string(kRun).find("mu = 0.9"), 8, "mu = 1.0"), "/"),
               ConfigError);
  EXPECT_THROW(parse_run_config(std::string(kRun).replace(std::string(kRun).find("r = 0.3"), 7, "r = 0.0"), "/"),
               ConfigError);
  EXPECT_THROW(parse_run_config(std::string(kRun).replace(std::string(kRun).find("t2 = 12.5"), 9, "t2 = -1."), "/"),
               ConfigError);
}

TEST(RunConfig, RejectsUnknownKeysAndWrongTypes) {
  EXPECT_THROW(with_line("[estimator]", "windw_size = 4"), ConfigError);
  EXPECT_THROW(with_line("[mode]", "deterministic_x = true"), ConfigError);
  EXPECT_THROW(with_line("[paths]", "extra = \"x\""), ConfigError);
  EXPECT_THROW(parse_run_config(std::string(kRun) + "\n[bogus]\nx = 1\n", "/"), ConfigError);
  EXPECT_THROW(
      parse_run_config(std::string(kRun).replace(std::string(kRun).find("t2 = 12.5"), 9, "t2 = \"a\""), "/"),
      ConfigError);
}

TEST(RunConfig, RejectsSyntaxErrorsAndMissingPaths) {
  EXPECT_THROW(parse_run_config("[paths\n", "/"), ConfigError);
  EXPECT_THROW(parse_run_config("seed = 1\n", "/"), ConfigError);
  EXPECT_THROW(load_run_config("/nonexistent/run.toml"), ConfigError);
}

TEST(SimConfig, ParsesSegments) {
  const SimConfig cfg = parse_sim_config(R"(
seed = 3
landmark_count = 500
rig = "noise_free"
bias_a = [0.1, 0.0, -0.1]

[[segment]]
type = "straight"
length = 30.0
speed = 5.0

[[segment]]
type = "arc"
turn_deg = -45.0
radius = 20.0
speed = 5.0

[[segment]]
type = "pause"
duration = 2.0
)");
  EXPECT_EQ(cfg.seed, 3u);
  EXPECT_EQ(cfg.landmark_count, 500);
  EXPECT_EQ(cfg.rig.pixel_sigma, 0.0);
  EXPECT_EQ(cfg.rig.bias_a_true, Vec3(0.1, 0.0, -0.1));
  ASSERT_EQ(cfg.spec.segments.size(), 3u);
  EXPECT_EQ(std::get<Straight>(cfg.spec.segments[0]).length, 30.0);
  EXPECT_EQ(std::get<Arc>(cfg.spec.segments[1]).turn_deg, -45.0);
  EXPECT_EQ(std::get<Pause>(cfg.spec.segments[2]).duration, 2.0);
}

TEST(SimConfig, RejectsBadInput) {
  EXPECT_THROW(parse_sim_config("seed = 1\n"), ConfigError);
  EXPECT_THROW(parse_sim_config("rig = \"fancy\"\n[[segment]]\ntype = \"pause\"\n"), ConfigError);
  EXPECT_THROW(parse_sim_config("[[segment]]\ntype = \"loop\"\n"), ConfigError);
  EXPECT_THROW(parse_sim_config("[[segment]]\ntype = \"straight\"\nspeed = -1.0\n"), ConfigError);
  EXPECT_THROW(parse_sim_config("[[segment]]\ntype = \"straight\"\nlenght = 3.0\n"), ConfigError);
  EXPECT_THROW(parse_sim_config("bias_a = [1.0, 2.0]\n[[segment]]\ntype = \"pause\"\n"), ConfigError);
}

TEST(ContentHash, Fnv1a) {
  EXPECT_EQ(content_hash(""), "cbf29ce484222325");
  EXPECT_EQ(content_hash("a"), "af63dc4c8601ec8c");
  EXPECT_NE(content_hash(kRun), content_hash(std::string(kRun) + " "));
}

TEST(Sweep, DefaultRangeHasNineteenAngles) {
  const auto angles = SweepConfig{}.angles();
  ASSERT_EQ(angles.size(), 19u);
  EXPECT_EQ(angles.front(), 0.0);
  EXPECT_EQ(angles.back(), 90.0);
}

TEST(Sweep, ParseAngleRange) {
  SweepConfig cfg;
  parse_angle_range("10:30:10", cfg);
  EXPECT_EQ(cfg.angles(), (std::vector<double>{10.0, 20.0, 30.0}));
  EXPECT_THROW(parse_angle_range("10:30", cfg), ConfigError);
  EXPECT_THROW(parse_angle_range("30:10:5", cfg), ConfigError);
  EXPECT_THROW(parse_angle_range("0:90:0", cfg), ConfigError);
}

}  // namespace
}  // namespace bvio
