#include "bvio/config.hpp"

#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include "toml.hpp"

namespace bvio {

namespace {

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

toml::table parse_toml(std::string_view text) {
  try {
    return toml::parse(text);
  } catch (const toml::parse_error& e) {
    std::ostringstream ss;
    ss << "TOML syntax error at line " << e.source().begin.line << ": " << e.description();
    throw ConfigError(ss.str());
  }
}

void check_keys(const toml::table& t, std::string_view where, std::initializer_list<std::string_view> allowed) {
  for (const auto& [k, v] : t) {
    bool ok = false;
    for (auto a : allowed) ok |= k.str() == a;
    if (!ok) throw ConfigError("unknown key '" + std::string(k.str()) + "' in " + std::string(where));
  }
}

const toml::table* sub_table(const toml::table& t, std::string_view key) {
  const toml::node* n = t.get(key);
  if (n == nullptr) return nullptr;
  if (!n->is_table()) throw ConfigError("'" + std::string(key) + "' must be a table");
  return n->as_table();
}

template <typename T>
void read(const toml::table* t, std::string_view key, T& out) {
  if (t == nullptr) return;
  const toml::node* n = t->get(key);
  if (n == nullptr) return;
  std::optional<T> v;
  if constexpr (std::is_same_v<T, bool>) {
    v = n->value_exact<bool>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    v = n->value_exact<std::string>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (n->is_number()) v = n->value<T>();
  } else {
    if (n->is_integer()) v = n->value<T>();
  }
  if (!v) throw ConfigError("'" + std::string(key) + "' has the wrong type");
  out = *v;
}

void read_vec3(const toml::table* t, std::string_view key, Vec3& out) {
  if (t == nullptr || t->get(key) == nullptr) return;
  const toml::array* a = t->get(key)->as_array();
  if (a == nullptr || a->size() != 3) throw ConfigError("'" + std::string(key) + "' must be an array of 3 numbers");
  for (int i = 0; i < 3; ++i) {
    const auto v = (*a)[i].value<double>();
    if (!v) throw ConfigError("'" + std::string(key) + "' must be an array of 3 numbers");
    out(i) = *v;
  }
}

void read_noise(const toml::table* t, ImuNoise& n) {
  if (t == nullptr) return;
  check_keys(*t, "[noise]", {"gyro_density", "accel_density", "gyro_bias_walk", "accel_bias_walk", "wheel_sigma",
                             "wheel_lateral_sigma"});
  read(t, "gyro_density", n.gyro_density);
  read(t, "accel_density", n.accel_density);
  read(t, "gyro_bias_walk", n.gyro_bias_walk);
  read(t, "accel_bias_walk", n.accel_bias_walk);
  read(t, "wheel_sigma", n.wheel_sigma);
  read(t, "wheel_lateral_sigma", n.wheel_lateral_sigma);
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

SimConfig parse_sim_config(std::string_view text) {
  const toml::table root = parse_toml(text);
  check_keys(root, "simulation config",
             {"seed", "landmark_count", "image_rate", "imu_rate", "wheel_rate", "max_accel", "excitation_deg",
              "excitation_hz", "initial_heading_deg", "rig", "bias_a", "bias_w", "pixel_sigma", "segment"});
  SimConfig cfg;
  std::string rig_kind = "default";
  std::int64_t seed = 1;
  read(&root, "rig", rig_kind);
  read(&root, "seed", seed);
  if (seed < 0) throw ConfigError("'seed' must be non-negative");
  cfg.seed = static_cast<std::uint64_t>(seed);
  if (rig_kind == "default") {
    cfg.rig = SensorRig::default_rig();
  } else if (rig_kind == "noise_free") {
    cfg.rig = SensorRig::noise_free_rig();
  } else {
    throw ConfigError("'rig' must be \"default\" or \"noise_free\"");
  }
  read_vec3(&root, "bias_a", cfg.rig.bias_a_true);
  read_vec3(&root, "bias_w", cfg.rig.bias_w_true);
  read(&root, "pixel_sigma", cfg.rig.pixel_sigma);
  read(&root, "landmark_count", cfg.landmark_count);
  read(&root, "image_rate", cfg.spec.image_rate);
  read(&root, "imu_rate", cfg.spec.imu_rate);
  read(&root, "wheel_rate", cfg.spec.wheel_rate);
  read(&root, "max_accel", cfg.spec.max_accel);
  read(&root, "excitation_deg", cfg.spec.excitation_deg);
  read(&root, "excitation_hz", cfg.spec.excitation_hz);
  read(&root, "initial_heading_deg", cfg.spec.initial_heading_deg);

  const toml::node* segs = root.get("segment");
  if (segs == nullptr || !segs->is_array_of_tables()) throw ConfigError("at least one [[segment]] is required");
  for (const auto& node : *segs->as_array()) {
    const toml::table& s = *node.as_table();
    std::string type;
    read(&s, "type", type);
    if (type == "straight") {
      check_keys(s, "straight segment", {"type", "length", "speed"});
      Straight v;
      read(&s, "length", v.length);
      read(&s, "speed", v.speed);
      cfg.spec.segments.push_back(v);
    } else if (type == "arc") {
      check_keys(s, "arc segment", {"type", "turn_deg", "radius", "speed"});
      Arc v;
      read(&s, "turn_deg", v.turn_deg);
      read(&s, "radius", v.radius);
      read(&s, "speed", v.speed);
      cfg.spec.segments.push_back(v);
    } else if (type == "pause") {
      check_keys(s, "pause segment", {"type", "duration"});
      Pause v;
      read(&s, "duration", v.duration);
      cfg.spec.segments.push_back(v);
    } else {
      throw ConfigError("segment type must be straight, arc or pause");
    }
  }
  if (cfg.landmark_count <= 0) throw ConfigError("'landmark_count' must be positive");
  try {
    cfg.spec.validate();
    cfg.rig.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

SimConfig load_sim_config(const std::filesystem::path& path) { return parse_sim_config(read_text(path)); }

void RunConfig::validate() const {
  if (!(engine.bound.mu > 0.0 && engine.bound.mu < 1.0)) throw ConfigError("mu must lie in (0, 1)");
  if (!(engine.bound.ratio > 0.0 && engine.bound.ratio < 1.0)) throw ConfigError("r must lie in (0, 1)");
  if (!(engine.t2 > 0.0)) throw ConfigError("t2 must be positive");
  if (!(engine.turn_threshold_deg > 0.0)) throw ConfigError("turn_threshold_deg must be positive");
  if (obsv_every < 1) throw ConfigError("obsv_every must be at least 1");
  if (paths.sensor_log.empty()) throw ConfigError("paths.sensor_log is required");
  if (paths.rig.empty()) throw ConfigError("paths.rig is required");
  if (paths.output_dir.empty()) throw ConfigError("paths.output_dir is required");
  try {
    engine.validate();
  } catch (const EngineError& e) {
    throw ConfigError(e.what());
  }
}

RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir) {
  const toml::table root = parse_toml(text);
  check_keys(root, "run config", {"seed", "paths", "estimator", "noise", "init", "mode"});
  RunConfig cfg;
  cfg.source_text = std::string(text);
  std::int64_t seed = 1;
  read(&root, "seed", seed);
  if (seed < 0) throw ConfigError("'seed' must be non-negative");
  cfg.seed = static_cast<std::uint64_t>(seed);

  const toml::table* paths = sub_table(root, "paths");
  if (paths == nullptr) throw ConfigError("[paths] is required");
  check_keys(*paths, "[paths]", {"sensor_log", "ground_truth", "rig", "output_dir"});
  std::string s;
  s.clear(), read(paths, "sensor_log", s), cfg.paths.sensor_log = resolve(base_dir, s);
  s.clear(), read(paths, "ground_truth", s), cfg.paths.ground_truth = resolve(base_dir, s);
  s.clear(), read(paths, "rig", s), cfg.paths.rig = resolve(base_dir, s);
  s.clear(), read(paths, "output_dir", s), cfg.paths.output_dir = resolve(base_dir, s);

  EngineConfig& e = cfg.engine;
  if (const toml::table* est = sub_table(root, "estimator")) {
    check_keys(*est, "[estimator]",
               {"window_size", "t2", "turn_threshold_deg", "mu", "r", "pixel_sigma", "keyframe_parallax_px",
                "keyframe_min_tracked", "max_landmarks", "bias_window", "bias_tol", "max_iterations",
                "max_preint_span", "min_triangulation_deg", "rbo_roll_weight", "backward_steps_per_forward"});
    read(est, "window_size", e.window_size);
    read(est, "t2", e.t2);
    read(est, "turn_threshold_deg", e.turn_threshold_deg);
    read(est, "mu", e.bound.mu);
    read(est, "r", e.bound.ratio);
    read(est, "pixel_sigma", e.solver.pixel_sigma);
    read(est, "keyframe_parallax_px", e.keyframe.min_parallax_px);
    read(est, "keyframe_min_tracked", e.keyframe.min_tracked);
    read(est, "max_landmarks", e.max_landmarks);
    read(est, "bias_window", e.bias.window);
    read(est, "bias_tol", e.bias.tol);
    read(est, "max_iterations", e.solver.max_iterations);
    read(est, "max_preint_span", e.max_preint_span);
    read(est, "min_triangulation_deg", e.min_triangulation_deg);
    read(est, "rbo_roll_weight", e.solver.rbo_roll_weight);
    read(est, "backward_steps_per_forward", e.backward_steps_per_forward);
  }
  read_noise(sub_table(root, "noise"), e.solver.noise);
  if (const toml::table* init = sub_table(root, "init")) {
    check_keys(*init, "[init]", {"roll_error_deg"});
    read(init, "roll_error_deg", cfg.roll_error_deg);
  }
  if (const toml::table* mode = sub_table(root, "mode")) {
    check_keys(*mode, "[mode]",
               {"deterministic", "forward_only", "include_prior", "zero_bias_before_turn", "free_extrinsics",
                "obsv_every"});
    read(mode, "deterministic", e.deterministic);
    read(mode, "forward_only", e.forward_only);
    read(mode, "include_prior", cfg.include_prior);
    read(mode, "zero_bias_before_turn", e.zero_bias_before_turn);
    read(mode, "free_extrinsics", e.free_extrinsics);
    read(mode, "obsv_every", cfg.obsv_every);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_text(path), path.has_parent_path() ? path.parent_path() : std::filesystem::path("."));
}

std::string content_hash(std::string_view text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace bvio
