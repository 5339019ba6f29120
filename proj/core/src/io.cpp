#include "bvio/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace bvio {

namespace {

using nlohmann::json;

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  return in;
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
json quat_json(const Quat& q) { return json::array({q.w(), q.x(), q.y(), q.z()}); }

Vec3 json_vec(const json& j) {
  if (!j.is_array() || j.size() != 3) throw IoError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Quat json_quat(const json& j) {
  if (!j.is_array() || j.size() != 4) throw IoError("expected a quaternion [w, x, y, z]");
  return Quat(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()).normalized();
}

}  // namespace

void write_tum(const std::filesystem::path& path, const Trajectory& traj) {
  auto out = open_out(path);
  char buf[256];
  for (const auto& s : traj) {
    const Vec3& p = s.pose.translation;
    const Quat& q = s.pose.rotation;
    std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g %.9g %.9g %.9g %.9g %.9g\n", s.t, p.x(), p.y(), p.z(), q.x(),
                  q.y(), q.z(), q.w());
    out << buf;
  }
}

Trajectory read_tum(const std::filesystem::path& path) {
  auto in = open_in(path);
  Trajectory traj;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    double v[8];
    for (double& x : v) {
      if (!(ss >> x)) throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 8 numbers");
    }
    StampedPose s;
    s.t = v[0];
    s.pose.translation = Vec3(v[1], v[2], v[3]);
    s.pose.rotation = Quat(v[7], v[4], v[5], v[6]).normalized();
    traj.push_back(s);
  }
  return traj;
}

SensorLog sensor_log_from(const SimData& sim) {
  return {sim.imu.samples, sim.wheel, sim.features.frames};
}

std::vector<FrameInput> frame_inputs(const SensorLog& log) {
  std::vector<FrameInput> out;
  out.reserve(log.frames.size());
  double t_prev = 0.0;
  for (const auto& ff : log.frames) {
    FrameInput in;
    in.features = ff;
    if (!out.empty()) {
      in.imu = imu_between(log.imu, t_prev, ff.t);
      in.wheel = wheel_between(log.wheel, t_prev, ff.t);
    }
    t_prev = ff.t;
    out.push_back(std::move(in));
  }
  return out;
}

std::vector<FrameInput> frame_inputs(const SimData& sim) { return frame_inputs(sensor_log_from(sim)); }

void write_sensor_log(const std::filesystem::path& path, const SensorLog& log) {
  auto out = open_out(path);
  std::size_t i = 0, w = 0, f = 0;
  auto next_t = [](const auto& v, std::size_t k) { return k < v.size() ? v[k].t : 1e300; };
  while (i < log.imu.size() || w < log.wheel.size() || f < log.frames.size()) {
    const double ti = next_t(log.imu, i), tw = next_t(log.wheel, w), tf = next_t(log.frames, f);
    json j;
    if (ti <= tw && ti <= tf) {
      const auto& s = log.imu[i++];
      j = {{"type", "imu"}, {"t", s.t}, {"gyro", vec_json(s.gyro)}, {"accel", vec_json(s.accel)}};
    } else if (tw <= tf) {
      const auto& s = log.wheel[w++];
      j = {{"type", "wheel"}, {"t", s.t}, {"speed", s.speed}};
    } else {
      const auto& ff = log.frames[f++];
      json obs = json::array();
      for (const auto& o : ff.observations) obs.push_back(json::array({o.landmark_id, o.uv.x(), o.uv.y()}));
      j = {{"type", "img"}, {"id", ff.frame_id}, {"t", ff.t}, {"obs", obs}};
    }
    out << j.dump() << '\n';
  }
}

SensorLog read_sensor_log(const std::filesystem::path& path) {
  auto in = open_in(path);
  SensorLog log;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      const std::string type = j.at("type").get<std::string>();
      if (type == "imu") {
        log.imu.push_back({j.at("t").get<double>(), json_vec(j.at("gyro")), json_vec(j.at("accel"))});
      } else if (type == "wheel") {
        log.wheel.push_back({j.at("t").get<double>(), j.at("speed").get<double>()});
      } else if (type == "img") {
        FeatureFrame ff;
        ff.frame_id = j.at("id").get<FrameId>();
        ff.t = j.at("t").get<double>();
        for (const auto& o : j.at("obs")) {
          ff.observations.push_back({ff.frame_id, o.at(0).get<LandmarkId>(), Vec2(o.at(1).get<double>(), o.at(2).get<double>())});
        }
        log.frames.push_back(std::move(ff));
      } else {
        throw IoError("unknown record type '" + type + "'");
      }
    } catch (const json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const IoError& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return log;
}

void write_rig(const std::filesystem::path& path, const RigFile& rf) {
  const SensorRig& r = rf.rig;
  const auto& e = r.extrinsics_true;
  const auto& c = r.camera;
  const auto& n = r.noise;
  const auto& s = rf.initial_state;
  json j = {
      {"extrinsics", {{"Rbc", quat_json(e.Rbc)}, {"pbc", vec_json(e.pbc)}, {"Rbo", quat_json(e.Rbo)}, {"pbo", vec_json(e.pbo)}}},
      {"camera", {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}, {"width", c.width}, {"height", c.height}}},
      {"gravity", vec_json(r.gravity_w)},
      {"bias_a", vec_json(r.bias_a_true)},
      {"bias_w", vec_json(r.bias_w_true)},
      {"noise",
       {{"gyro_density", n.gyro_density},
        {"accel_density", n.accel_density},
        {"gyro_bias_walk", n.gyro_bias_walk},
        {"accel_bias_walk", n.accel_bias_walk},
        {"wheel_sigma", n.wheel_sigma},
        {"wheel_lateral_sigma", n.wheel_lateral_sigma}}},
      {"pixel_sigma", r.pixel_sigma},
      {"simulate_bias_walk", r.simulate_bias_walk},
      {"outlier_ratio", r.outlier_ratio},
      {"initial_state", {{"p", vec_json(s.p)}, {"v", vec_json(s.v)}, {"q", quat_json(s.q)}}},
  };
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

RigFile read_rig(const std::filesystem::path& path) {
  auto in = open_in(path);
  RigFile rf;
  try {
    const json j = json::parse(in);
    auto& r = rf.rig;
    const auto& e = j.at("extrinsics");
    r.extrinsics_true.Rbc = json_quat(e.at("Rbc"));
    r.extrinsics_true.pbc = json_vec(e.at("pbc"));
    r.extrinsics_true.Rbo = json_quat(e.at("Rbo"));
    r.extrinsics_true.pbo = json_vec(e.at("pbo"));
    const auto& c = j.at("camera");
    r.camera.fx = c.at("fx").get<double>();
    r.camera.fy = c.at("fy").get<double>();
    r.camera.cx = c.at("cx").get<double>();
    r.camera.cy = c.at("cy").get<double>();
    r.camera.width = c.at("width").get<int>();
    r.camera.height = c.at("height").get<int>();
    r.gravity_w = json_vec(j.at("gravity"));
    r.bias_a_true = json_vec(j.at("bias_a"));
    r.bias_w_true = json_vec(j.at("bias_w"));
    const auto& n = j.at("noise");
    r.noise.gyro_density = n.at("gyro_density").get<double>();
    r.noise.accel_density = n.at("accel_density").get<double>();
    r.noise.gyro_bias_walk = n.at("gyro_bias_walk").get<double>();
    r.noise.accel_bias_walk = n.at("accel_bias_walk").get<double>();
    r.noise.wheel_sigma = n.at("wheel_sigma").get<double>();
    r.noise.wheel_lateral_sigma = n.at("wheel_lateral_sigma").get<double>();
    r.pixel_sigma = j.at("pixel_sigma").get<double>();
    r.simulate_bias_walk = j.at("simulate_bias_walk").get<bool>();
    r.outlier_ratio = j.at("outlier_ratio").get<double>();
    const auto& s = j.at("initial_state");
    rf.initial_state.p = json_vec(s.at("p"));
    rf.initial_state.v = json_vec(s.at("v"));
    rf.initial_state.q = json_quat(s.at("q"));
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return rf;
}

void write_events(const std::filesystem::path& path, const std::vector<PhaseEvent>& events) {
  auto out = open_out(path);
  for (const auto& e : events) out << json{{"event", e.event}, {"t", e.t}, {"frame", e.frame}}.dump() << '\n';
}

Trajectory ground_truth_trajectory(const SimData& sim) {
  Trajectory out;
  for (std::size_t f = 0; f < sim.truth.frame_count(); ++f) out.push_back({sim.truth.frame_time(f), sim.truth.frame(f).state.pose()});
  return out;
}

}  // namespace bvio
