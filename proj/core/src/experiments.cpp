#include "bvio/experiments.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "bvio/version.hpp"
#include "json.hpp"

namespace bvio {

namespace {

constexpr double kDeg = M_PI / 180.0;

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace

Extrinsics perturbed_extrinsics(const Extrinsics& truth, double roll_error_deg) {
  Extrinsics e = truth;
  e.Rbc = (exp_quat(Vec3::UnitX() * roll_error_deg * kDeg) * truth.Rbc).normalized();
  return e;
}

EngineSetup make_setup(const RigFile& rig, double roll_error_deg) {
  EngineSetup s;
  s.initial_state = rig.initial_state;
  s.initial_state.ba.setZero();
  s.initial_state.bw.setZero();
  s.initial_extrinsics = perturbed_extrinsics(rig.rig.extrinsics_true, roll_error_deg);
  s.camera = rig.rig.camera;
  s.gravity_w = rig.rig.gravity_w;
  return s;
}

RunResult run_engine(const SensorLog& log, const RigFile& rig, const RunConfig& cfg, const StepObserver& observer) {
  Engine engine(cfg.engine, make_setup(rig, cfg.roll_error_deg));
  RunResult res;
  for (const auto& in : frame_inputs(log)) {
    const ForwardResult fr = engine.forward_step(in);
    res.accel_bias.push_back(engine.forward_window().frames.back().state.ba);
    res.marg_ratio.push_back(fr.marg_ratio);
    if (observer) observer(engine, fr);
  }
  engine.finish();
  const auto entries = engine.log().snapshot();
  const auto realtime = engine.realtime();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    res.forward.push_back({entries[i].t, entries[i].forward});
    if (entries[i].refined) res.refined.push_back({entries[i].t, *entries[i].refined});
    res.realtime.push_back({entries[i].t, realtime[i]});
  }
  res.events = engine.events();
  res.diagnostics = engine.diagnostics();
  res.final_extrinsics = engine.forward_window().ext;
  return res;
}

std::string manifest_json(const RunConfig& cfg) {
  nlohmann::json j = {
      {"config_hash", content_hash(cfg.source_text)},
      {"seed", cfg.seed},
      {"version", kVersion},
      {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                    std::to_string(EIGEN_MINOR_VERSION)},
      {"deterministic", cfg.engine.deterministic},
      {"inputs",
       {{"sensor_log", cfg.paths.sensor_log.string()},
        {"ground_truth", cfg.paths.ground_truth.string()},
        {"rig", cfg.paths.rig.string()}}},
  };
  return j.dump(2);
}

void write_run_outputs(const RunResult& result, const RunConfig& cfg, const std::filesystem::path& dir) {
  write_tum(dir / "forward.tum", result.forward);
  write_tum(dir / "refined.tum", result.refined);
  write_tum(dir / "realtime.tum", result.realtime);
  write_events(dir / "events.jsonl", result.events);
  auto diag = open_out(dir / "diagnostics.jsonl");
  for (const auto& d : result.diagnostics) diag << d << '\n';
  auto manifest = open_out(dir / "manifest.json");
  manifest << manifest_json(cfg) << '\n';
}

std::vector<ObsvRow> run_obsv(const SensorLog& log, const RigFile& rig, const RunConfig& cfg) {
  RunConfig c = cfg;
  c.engine.forward_only = true;
  ObsvConfig oc;
  oc.include_prior = cfg.include_prior;
  std::vector<ObsvRow> rows;
  Engine engine(c.engine, make_setup(rig, c.roll_error_deg));
  for (const auto& in : frame_inputs(log)) {
    engine.forward_step(in);
    const Window& w = engine.forward_window();
    if (in.features.frame_id % c.obsv_every != 0 || w.frames.size() < 2) continue;
    if ((w.frames.back().state.p - w.frames.front().state.p).norm() <= 0.1) continue;
    rows.push_back({in.features.t, in.features.frame_id, analyze_window(w, oc, c.engine.solver)});
  }
  return rows;
}

void write_obsv_csv(const std::filesystem::path& path, const std::vector<ObsvRow>& rows) {
  auto out = open_out(path);
  out << "t,frame,roll_ratio,small_eig_count,non_gauge_small_count,overlap_pbo_x,overlap_pbo_y,overlap_pbo_z,"
         "overlap_pbc_x,overlap_pbc_y,overlap_pbc_z,overlap_rbc_roll,eig_ms,turning_ms\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.9g,%lld,%.9g,%d,%d", r.t, static_cast<long long>(r.frame), r.report.roll_ratio,
                  r.report.small_eig_count, r.report.non_gauge_small_count);
    out << buf;
    for (double o : r.report.direction_overlaps) {
      std::snprintf(buf, sizeof(buf), ",%.6f", o);
      out << buf;
    }
    std::snprintf(buf, sizeof(buf), ",%.4f,%.4f\n", r.report.eig_ms, r.report.turning_ms);
    out << buf;
  }
}

EngineConfig SweepConfig::sweep_engine_config() {
  EngineConfig e;
  e.zero_bias_before_turn = false;
  e.free_extrinsics = false;
  e.forward_only = true;
  // Roll and pitch of the start are only as good as a gravity alignment.
  e.initial_sigma.segment<2>(state_offset::kTheta).setConstant(0.02);
  return e;
}

std::vector<double> SweepConfig::angles() const {
  std::vector<double> out;
  const int n = static_cast<int>(std::floor((angle_max - angle_min) / angle_step + 1e-9)) + 1;
  for (int i = 0; i < n; ++i) out.push_back(angle_min + i * angle_step);
  return out;
}

void parse_angle_range(const std::string& text, SweepConfig& cfg) {
  double a = 0, b = 0, s = 0;
  char c1 = 0, c2 = 0;
  std::istringstream ss(text);
  if (!(ss >> a >> c1 >> b >> c2 >> s) || c1 != ':' || c2 != ':' || !ss.eof()) {
    throw ConfigError("angle range must look like min:max:step");
  }
  if (!(s > 0.0) || b < a || a < 0.0 || b > 180.0) throw ConfigError("angle range needs 0 <= min <= max <= 180, step > 0");
  cfg.angle_min = a;
  cfg.angle_max = b;
  cfg.angle_step = s;
}

SweepRow run_sweep_angle(const SweepConfig& cfg, double angle_deg) {
  const TrajectorySpec spec =
      single_turn_spec(angle_deg, cfg.straight_before, cfg.straight_after, cfg.speed, cfg.turn_duration);
  const SimData sim = simulate(spec, cfg.rig, cfg.landmark_count, cfg.seed);
  RigFile rig{cfg.rig, sim.truth.frame(0).state};
  RunConfig rc;
  rc.engine = cfg.engine;
  rc.engine.forward_only = true;
  const RunResult res = run_engine(sensor_log_from(sim), rig, rc);

  const auto length = sim.truth.frame_path_length();
  const double turn_end = cfg.straight_before + cfg.speed * cfg.turn_duration;
  SweepRow row;
  row.angle_deg = angle_deg;
  double err = 0.0, diff = 0.0;
  int n = 0;
  for (std::size_t f = 0; f < res.accel_bias.size(); ++f) {
    const double d = f == 0 ? 0.0 : (res.accel_bias[f] - res.accel_bias[f - 1]).norm();
    row.successive_diff.push_back(d);
    if (length[f] < turn_end) continue;
    err += (res.accel_bias[f] - sim.imu.true_ba.at(f * sim.truth.frame_stride)).norm();
    diff += d;
    ++n;
  }
  if (n == 0) throw ConfigError("sweep sequence has no frames after the turn");
  row.mean_bias_error = err / n;
  row.mean_successive_diff = diff / n;
  return row;
}

std::vector<SweepRow> run_sweep(const SweepConfig& cfg) {
  std::vector<SweepRow> rows;
  for (double a : cfg.angles()) rows.push_back(run_sweep_angle(cfg, a));
  return rows;
}

void write_sweep_csv(const std::filesystem::path& summary, const std::filesystem::path& series,
                     const std::vector<SweepRow>& rows) {
  auto out = open_out(summary);
  out << "turn_deg,mean_bias_error,mean_successive_diff\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g\n", r.angle_deg, r.mean_bias_error, r.mean_successive_diff);
    out << buf;
  }
  auto ser = open_out(series);
  ser << "turn_deg,frame,successive_diff\n";
  for (const auto& r : rows) {
    for (std::size_t f = 0; f < r.successive_diff.size(); ++f) {
      std::snprintf(buf, sizeof(buf), "%.9g,%zu,%.9g\n", r.angle_deg, f, r.successive_diff[f]);
      ser << buf;
    }
  }
}

}  // namespace bvio
