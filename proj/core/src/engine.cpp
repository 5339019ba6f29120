#include "bvio/engine.hpp"

#include <algorithm>
#include <cmath>

namespace bvio {

namespace {

constexpr double kTimeEps = 1e-9;

using PendingTracks = std::map<LandmarkId, std::map<FrameId, Vec2>>;

void prune_pending(PendingTracks& pending, const Window& w) {
  for (auto it = pending.begin(); it != pending.end();) {
    auto& obs = it->second;
    for (auto o = obs.begin(); o != obs.end();) o = w.index_of(o->first) < 0 ? obs.erase(o) : std::next(o);
    it = obs.empty() ? pending.erase(it) : std::next(it);
  }
}

// Attach a frame's observations to existing landmarks and promote pending
// tracks that now triangulate. New landmarks are anchored at their earliest
// observation, or their latest when `anchor_latest` is set.
void add_observations(Window& w, PendingTracks& pending, const FeatureFrame& ff, bool anchor_latest,
                      double min_angle_deg, int max_landmarks) {
  for (const auto& o : ff.observations) {
    auto it = w.landmarks.find(o.landmark_id);
    if (it != w.landmarks.end()) {
      it->second.obs[ff.frame_id] = o.uv;
    } else {
      pending[o.landmark_id][ff.frame_id] = o.uv;
    }
  }
  if (static_cast<int>(w.landmarks.size()) >= max_landmarks) return;
  std::vector<LandmarkId> candidates;
  for (const auto& [id, obs] : pending) {
    if (obs.size() >= 2 && obs.count(ff.frame_id)) candidates.push_back(id);
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](LandmarkId a, LandmarkId b) { return pending[a].size() > pending[b].size(); });
  for (const LandmarkId id : candidates) {
    if (static_cast<int>(w.landmarks.size()) >= max_landmarks) break;
    const auto& obs = pending[id];
    const auto first = obs.begin();
    const auto last = std::prev(obs.end());
    const auto& anchor = anchor_latest ? *last : *first;
    const auto& other = anchor_latest ? *first : *last;
    const auto depth = triangulate_depth(w.frame(anchor.first).state, w.frame(other.first).state, anchor.second,
                                         other.second, w.ext, w.camera, min_angle_deg);
    if (!depth) continue;
    WindowLandmark wl;
    wl.lm.id = id;
    wl.lm.anchor_frame = anchor.first;
    wl.lm.first_obs = anchor.second;
    wl.lm.inv_depth = 1.0 / *depth;
    wl.obs = obs;
    w.landmarks[id] = std::move(wl);
    pending.erase(id);
  }
}

bool covers(double lo, double hi, double t0, double t1) { return lo <= t0 + kTimeEps && hi >= t1 - kTimeEps; }

}  // namespace

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::kPreTurn:
      return "PreTurn";
    case Phase::kTurnDetected:
      return "TurnDetected";
    case Phase::kBiasConverged:
      return "BiasConverged";
    case Phase::kExtrinsicsFree:
      return "ExtrinsicsFree";
    case Phase::kBackwardRunning:
      return "BackwardRunning";
    case Phase::kBackwardDone:
      return "BackwardDone";
  }
  return "?";
}

void PhaseState::advance(Phase next) {
  if (static_cast<int>(next) <= static_cast<int>(phase)) {
    throw EngineError(std::string("phase cannot move from ") + phase_name(phase) + " to " + phase_name(next));
  }
  phase = next;
}

void TrajectoryLog::append(FrameId id, double t, const Pose& forward, bool keyframe) {
  std::lock_guard<std::mutex> lock(mu_);
  if (id != static_cast<FrameId>(entries_.size())) throw EngineError("trajectory log frame ids must be contiguous");
  entries_.push_back({id, t, forward, std::nullopt, keyframe});
}

void TrajectoryLog::update_forward(FrameId id, const Pose& forward) {
  std::lock_guard<std::mutex> lock(mu_);
  if (id < 0 || id >= static_cast<FrameId>(entries_.size())) throw EngineError("unknown frame in trajectory log");
  entries_[id].forward = forward;
}

void TrajectoryLog::set_keyframe(FrameId id, bool keyframe) {
  std::lock_guard<std::mutex> lock(mu_);
  if (id < 0 || id >= static_cast<FrameId>(entries_.size())) throw EngineError("unknown frame in trajectory log");
  entries_[id].keyframe = keyframe;
}

void TrajectoryLog::set_refined(FrameId id, const Pose& refined) {
  std::lock_guard<std::mutex> lock(mu_);
  if (id < 0 || id >= static_cast<FrameId>(entries_.size())) throw EngineError("unknown frame in trajectory log");
  entries_[id].refined = refined;
  if (!smallest_refined_ || id < *smallest_refined_) smallest_refined_ = id;
}

std::vector<TrajectoryEntry> TrajectoryLog::snapshot() const {
  std::lock_guard<std::mutex> lock(mu_);
  return entries_;
}

std::optional<FrameId> TrajectoryLog::smallest_refined() const {
  std::lock_guard<std::mutex> lock(mu_);
  return smallest_refined_;
}

std::size_t TrajectoryLog::size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return entries_.size();
}

std::vector<Pose> realtime_stitch(const std::vector<TrajectoryEntry>& log, FrameId j) {
  if (j < 0 || j >= static_cast<FrameId>(log.size()) || !log[j].refined) {
    throw EngineError("stitch junction frame has no refined pose");
  }
  const Pose& ref = *log[j].refined;
  const Pose& fwd = log[j].forward;
  const Quat dq = (ref.rotation * fwd.rotation.conjugate()).normalized();
  std::vector<Pose> out;
  out.reserve(log.size());
  for (const auto& e : log) {
    if (e.id < j) {
      out.push_back(e.refined ? *e.refined : e.forward);
    } else if (e.id == j) {
      out.push_back(ref);
    } else {
      Pose p;
      p.rotation = (dq * e.forward.rotation).normalized();
      p.translation = dq * (e.forward.translation - fwd.translation) + ref.translation;
      out.push_back(p);
    }
  }
  return out;
}

std::vector<Pose> refined_or_forward(const std::vector<TrajectoryEntry>& log) {
  std::vector<Pose> out;
  out.reserve(log.size());
  for (const auto& e : log) out.push_back(e.refined ? *e.refined : e.forward);
  return out;
}

TurnResult detect_turning(const Window& w, double threshold_deg) {
  TurnResult r;
  for (std::size_t i = 0; i < w.frames.size(); ++i) {
    for (std::size_t j = i + 1; j < w.frames.size(); ++j) {
      const Vec3 d = log_quat(w.frames[i].state.q.conjugate() * w.frames[j].state.q);
      r.angle_deg = std::max(r.angle_deg, std::abs(d.z()) * 180.0 / M_PI);
    }
  }
  r.turned = r.angle_deg > threshold_deg;
  return r;
}

bool bias_converged(const std::vector<Vec3>& history, const BiasConvergenceConfig& cfg) {
  if (cfg.window < 1 || static_cast<int>(history.size()) < cfg.window) return false;
  const std::size_t start = history.size() - cfg.window;
  for (std::size_t i = start; i < history.size(); ++i) {
    for (std::size_t j = i + 1; j < history.size(); ++j) {
      if ((history[i] - history[j]).norm() >= cfg.tol) return false;
    }
  }
  return true;
}

void EngineConfig::validate() const {
  if (window_size < 3) throw EngineError("window_size must be at least 3");
  if (!(t2 > 0.0)) throw EngineError("T2 must be positive");
  if (!(turn_threshold_deg > 0.0)) throw EngineError("turning threshold must be positive");
  if (!(bound.mu > 0.0 && bound.mu < 1.0)) throw EngineError("mu must lie in (0, 1)");
  if (!(bound.ratio > 0.0 && bound.ratio < 1.0)) throw EngineError("r must lie in (0, 1)");
  if (bias.window < 2 || !(bias.tol > 0.0)) throw EngineError("bias convergence needs window >= 2 and tol > 0");
  if (!(max_preint_span > 0.0 && max_preint_span <= 1.0)) throw EngineError("max_preint_span must lie in (0, 1]");
  if (max_landmarks < 1) throw EngineError("max_landmarks must be positive");
  if (backward_steps_per_forward < 1) throw EngineError("backward_steps_per_forward must be at least 1");
  if (!(solver.pixel_sigma > 0.0)) throw EngineError("pixel sigma must be positive");
  if ((initial_sigma.array() <= 0.0).any()) throw EngineError("initial sigmas must be positive");
}

std::optional<double> triangulate_depth(const MotionState& a, const MotionState& b, const Vec2& uv_a, const Vec2& uv_b,
                                        const Extrinsics& ext, const CameraModel& cam, double min_angle_deg) {
  const Pose ca = camera_pose(a, ext);
  const Pose cb = camera_pose(b, ext);
  const Vec3 da = (ca.rotation * cam.unproject(uv_a)).normalized();
  const Vec3 db = (cb.rotation * cam.unproject(uv_b)).normalized();
  const double cos_angle = std::clamp(da.dot(db), -1.0, 1.0);
  if (std::acos(cos_angle) < min_angle_deg * M_PI / 180.0) return std::nullopt;
  // Closest points on the two rays.
  Eigen::Matrix<double, 3, 2> A;
  A << da, -db;
  const Eigen::Vector2d st = (A.transpose() * A).ldlt().solve(A.transpose() * (cb.translation - ca.translation));
  if (st(0) <= 0.0 || st(1) <= 0.0) return std::nullopt;
  const Vec3 pw = 0.5 * (ca.translation + st(0) * da + cb.translation + st(1) * db);
  const double depth = (ca.inverse() * pw).z();
  if (depth <= kMinDepth) return std::nullopt;
  return depth;
}

MotionState propagate_forward(const MotionState& s, const Preintegrated& p, const Vec3& g) {
  const CorrectedPreint c = bias_correct(p, s.ba, s.bw, p.lin_Rbo);
  const double dt = p.dt_total;
  MotionState out = s;
  out.q = (s.q * c.gamma).normalized();
  out.v = s.v + g * dt + s.q * c.beta;
  out.p = s.p + s.v * dt + 0.5 * g * dt * dt + s.q * c.alpha;
  return out;
}

MotionState propagate_backward(const MotionState& end, const Preintegrated& p, const Vec3& g) {
  const CorrectedPreint c = bias_correct(p, end.ba, end.bw, p.lin_Rbo);
  const double dt = p.dt_total;
  MotionState out = end;
  out.q = (end.q * c.gamma.conjugate()).normalized();
  out.v = end.v - g * dt - out.q * c.beta;
  out.p = end.p - 0.5 * g * dt * dt - out.v * dt - out.q * c.alpha;
  return out;
}

void anchor_landmarks_at_latest(Window& w) {
  for (auto it = w.landmarks.begin(); it != w.landmarks.end();) {
    WindowLandmark& wl = it->second;
    const FrameId latest = wl.obs.rbegin()->first;
    bool keep = true;
    if (latest != wl.lm.anchor_frame) {
      keep = reanchor_landmark(wl, latest, w.frame(wl.lm.anchor_frame).state, w.frame(latest).state, w.ext, w.camera);
    }
    it = keep ? std::next(it) : w.landmarks.erase(it);
  }
}

Engine::Engine(const EngineConfig& cfg, const EngineSetup& setup) : cfg_(cfg), setup_(setup) {
  cfg_.validate();
  window_.ext = setup.initial_extrinsics;
  window_.camera = setup.camera;
  window_.gravity_w = setup.gravity_w;
  window_.rbo_roll_ref = setup.initial_extrinsics.Rbo;
  apply_policy();
}

Engine::~Engine() {
  if (backward_thread_.joinable()) backward_thread_.join();
}

void Engine::push_event(const std::string& name, double t, FrameId id, std::vector<PhaseEvent>& out) {
  PhaseEvent e{name, t, id};
  events_.push_back(e);
  out.push_back(e);
}

void Engine::apply_policy() {
  ParamPolicy p;
  switch (phase_.phase) {
    case Phase::kPreTurn:
      p.zero_accel_bias = cfg_.zero_bias_before_turn;
      p.fix_accel_bias = cfg_.zero_bias_before_turn;
      p.fix_extrinsics = true;
      break;
    case Phase::kTurnDetected:
      p.fix_extrinsics = true;
      break;
    default:
      p.fix_extrinsics = !cfg_.free_extrinsics;
      break;
  }
  window_.policy = p;
}

ForwardResult Engine::forward_step(const FrameInput& in) {
  const FeatureFrame& ff = in.features;
  const FrameId id = ff.frame_id;
  if (id != static_cast<FrameId>(recorded_.frames.size())) {
    throw EngineError("out-of-order frame " + std::to_string(id) + ", expected " +
                      std::to_string(recorded_.frames.size()));
  }
  ForwardResult res;
  res.frame = id;

  if (id == 0) {
    recorded_.frames.push_back(ff);
    for (const auto& s : in.imu) recorded_.imu.push_back(s);
    for (const auto& s : in.wheel) recorded_.wheel.push_back(s);
    WindowFrame wf;
    wf.id = 0;
    wf.t = ff.t;
    wf.state = setup_.initial_state;
    window_.frames.push_back(wf);
    window_.prior = make_state_prior(0, wf.state, cfg_.initial_sigma);
    add_observations(window_, pending_, ff, false, cfg_.min_triangulation_deg, cfg_.max_landmarks);
    last_keyframe_obs_ = ff.observations;
    log_.append(0, ff.t, wf.state.pose(), true);
    res.pose = wf.state.pose();
    return res;
  }

  const double t_prev = recorded_.frames.back().t;
  if (!(ff.t > t_prev)) throw EngineError("frame timestamps must increase");
  if (in.imu.empty() || !covers(in.imu.front().t, in.imu.back().t, t_prev, ff.t)) {
    throw EngineError("IMU samples do not cover the gap before frame " + std::to_string(id));
  }
  if (in.wheel.empty() || !covers(in.wheel.front().t, in.wheel.back().t, t_prev, ff.t)) {
    throw EngineError("wheel samples do not cover the gap before frame " + std::to_string(id));
  }
  recorded_.frames.push_back(ff);
  for (const auto& s : in.imu) {
    if (recorded_.imu.empty() || s.t > recorded_.imu.back().t + kTimeEps) recorded_.imu.push_back(s);
  }
  for (const auto& s : in.wheel) {
    if (recorded_.wheel.empty() || s.t > recorded_.wheel.back().t + kTimeEps) recorded_.wheel.push_back(s);
  }

  const WindowFrame& last = window_.frames.back();
  WindowPreint wp;
  wp.imu = imu_between(recorded_.imu, t_prev, ff.t);
  wp.wheel = wheel_between(recorded_.wheel, t_prev, ff.t);
  wp.p = integrate(wp.imu, wp.wheel, last.state.ba, last.state.bw, window_.ext.Rbo, cfg_.solver.noise);

  int tracked = 0;
  const double parallax = mean_parallax(last_keyframe_obs_, ff.observations, &tracked);
  WindowFrame wf;
  wf.id = id;
  wf.t = ff.t;
  wf.state = propagate_forward(last.state, wp.p, window_.gravity_w);
  wf.keyframe = is_keyframe(parallax, tracked, cfg_.keyframe);
  if (wf.keyframe) last_keyframe_obs_ = ff.observations;
  window_.frames.push_back(wf);
  window_.preints.push_back(std::move(wp));
  log_.append(id, ff.t, wf.state.pose(), wf.keyframe);

  add_observations(window_, pending_, ff, false, cfg_.min_triangulation_deg, cfg_.max_landmarks);
  apply_policy();
  res.stats = optimize(window_, cfg_.solver);
  for (const auto& f : window_.frames) log_.update_forward(f.id, f.state.pose());
  const double total = res.stats.terms.total();
  res.marg_ratio = total > 0.0 ? res.stats.terms.prior / total : 0.0;
  diagnostics_.push_back(stats_json(window_, res.stats, res.marg_ratio));

  if (phase_.phase != Phase::kPreTurn) bias_history_.push_back(window_.frames.back().state.ba);
  update_phase(ff.t, id, res.events);
  if (phase_.phase == Phase::kPreTurn) {
    bound_marginal_prior(window_.prior, res.stats.terms.prior, total, cfg_.bound);
  }
  manage_window();
  prune_pending(pending_, window_);
  res.pose = window_.frames.back().state.pose();

  if (backward_ && cfg_.deterministic && !backward_->done()) run_backward_steps(cfg_.backward_steps_per_forward);
  if (backward_ && backward_done_ && !backward_done_event_sent_) {
    phase_.advance(Phase::kBackwardDone);
    push_event(phase_name(Phase::kBackwardDone), ff.t, id, res.events);
    backward_done_event_sent_ = true;
  }
  return res;
}

void Engine::update_phase(double t, FrameId id, std::vector<PhaseEvent>& out) {
  if (phase_.phase == Phase::kPreTurn && detect_turning(window_, cfg_.turn_threshold_deg).turned) {
    phase_.advance(Phase::kTurnDetected);
    phase_.turn_time = t;
    push_event(phase_name(Phase::kTurnDetected), t, id, out);
    return;
  }
  if (phase_.phase == Phase::kTurnDetected && bias_converged(bias_history_, cfg_.bias)) {
    phase_.advance(Phase::kBiasConverged);
    push_event(phase_name(Phase::kBiasConverged), t, id, out);
    phase_.advance(Phase::kExtrinsicsFree);
    phase_.extrinsics_free_time = t;
    push_event(phase_name(Phase::kExtrinsicsFree), t, id, out);
    return;
  }
  if (phase_.phase == Phase::kExtrinsicsFree && !cfg_.forward_only &&
      t >= *phase_.extrinsics_free_time + cfg_.t2 - kTimeEps) {
    phase_.advance(Phase::kBackwardRunning);
    push_event(phase_name(Phase::kBackwardRunning), t, id, out);
    spawn_backward();
  }
}

void Engine::manage_window() {
  while (static_cast<int>(window_.frames.size()) > cfg_.window_size) {
    const std::size_t n = window_.frames.size();
    const WindowFrame& second_newest = window_.frames[n - 2];
    const double span = window_.frames[n - 1].t - window_.frames[n - 3].t;
    if (!second_newest.keyframe && span <= cfg_.max_preint_span + kTimeEps) {
      discard_frame(window_, second_newest.id, cfg_.solver);
    } else {
      marginalize_frame(window_, window_.frames.front().id, cfg_.solver);
    }
  }
}

void Engine::spawn_backward() {
  if (phase_.phase != Phase::kBackwardRunning) throw EngineError("backward pass spawned before its phase");
  backward_ = std::make_unique<BackwardEstimator>(window_, recorded_, cfg_, log_);
  if (!cfg_.deterministic) {
    backward_thread_ = std::thread([this] {
      while (backward_->step()) {
      }
      backward_done_ = true;
    });
  }
}

void Engine::run_backward_steps(int n) {
  for (int i = 0; i < n; ++i) {
    if (!backward_->step()) {
      backward_done_ = true;
      break;
    }
  }
}

void Engine::finish() {
  if (!backward_) return;
  if (backward_thread_.joinable()) {
    backward_thread_.join();
  } else {
    while (backward_->step()) {
    }
    backward_done_ = true;
  }
  if (!backward_done_event_sent_) {
    const double t = recorded_.frames.empty() ? 0.0 : recorded_.frames.back().t;
    const FrameId id = recorded_.frames.empty() ? 0 : recorded_.frames.back().frame_id;
    std::vector<PhaseEvent> ignored;
    phase_.advance(Phase::kBackwardDone);
    push_event(phase_name(Phase::kBackwardDone), t, id, ignored);
    backward_done_event_sent_ = true;
  }
}

std::optional<FrameId> Engine::backward_spawn_frame() const {
  if (!backward_) return std::nullopt;
  return backward_->spawn_frame();
}

std::vector<Pose> Engine::realtime() const {
  const auto snap = log_.snapshot();
  const auto j = log_.smallest_refined();
  if (j) return realtime_stitch(snap, *j);
  std::vector<Pose> out;
  for (const auto& e : snap) out.push_back(e.forward);
  return out;
}

BackwardEstimator::BackwardEstimator(const Window& snapshot, const RecordedInputs& recorded, const EngineConfig& cfg,
                                     TrajectoryLog& log)
    : window_(snapshot), recorded_(recorded), cfg_(cfg), log_(log) {
  anchor_landmarks_at_latest(window_);
  spawn_oldest_ = window_.frames.front().id;
  snapshot_newest_ = window_.frames.back().id;
  last_keyframe_ = spawn_oldest_;
  window_.policy = ParamPolicy{};
  window_.policy.fix_extrinsics = !cfg_.free_extrinsics;
}

void BackwardEstimator::write_refined(const WindowFrame& f) {
  if (f.id < snapshot_newest_) log_.set_refined(f.id, f.state.pose());
}

void BackwardEstimator::finish_all() {
  for (const auto& f : window_.frames) write_refined(f);
  // Re-base the refined poses rigidly so the starting point keeps its
  // forward pose.
  const auto entries = log_.snapshot();
  if (!entries.empty() && entries.front().refined) {
    const Pose T = entries.front().forward * entries.front().refined->inverse();
    for (const auto& e : entries) {
      if (e.id > 0 && e.refined) log_.set_refined(e.id, T * *e.refined);
    }
    log_.set_refined(0, entries.front().forward);
  }
  done_ = true;
}

bool BackwardEstimator::step() {
  if (done_) return false;
  const WindowFrame front = window_.frames.front();
  if (front.id == 0) {
    finish_all();
    return false;
  }
  const FrameId id = front.id - 1;
  const FeatureFrame& ff = recorded_.frames.at(id);

  WindowPreint wp;
  wp.imu = imu_between(recorded_.imu, ff.t, front.t);
  wp.wheel = wheel_between(recorded_.wheel, ff.t, front.t);
  if (wp.imu.empty() || wp.wheel.empty()) throw EngineError("missing recorded inputs before frame " + std::to_string(front.id));
  wp.p = integrate(wp.imu, wp.wheel, front.state.ba, front.state.bw, window_.ext.Rbo, cfg_.solver.noise);

  WindowFrame wf;
  wf.id = id;
  wf.t = ff.t;
  wf.state = propagate_backward(front.state, wp.p, window_.gravity_w);
  int tracked = 0;
  const double parallax = mean_parallax(recorded_.frames.at(last_keyframe_).observations, ff.observations, &tracked);
  wf.keyframe = is_keyframe(parallax, tracked, cfg_.keyframe);
  if (wf.keyframe) last_keyframe_ = id;

  window_.frames.insert(window_.frames.begin(), wf);
  window_.preints.insert(window_.preints.begin(), std::move(wp));
  add_observations(window_, pending_, ff, true, cfg_.min_triangulation_deg, cfg_.max_landmarks);
  optimize(window_, cfg_.solver);

  while (static_cast<int>(window_.frames.size()) > cfg_.window_size) {
    const WindowFrame second = window_.frames[1];
    const double span = window_.frames[2].t - window_.frames[0].t;
    if (!second.keyframe && span <= cfg_.max_preint_span + kTimeEps) {
      write_refined(second);
      discard_frame(window_, second.id, cfg_.solver);
    } else {
      write_refined(window_.frames.back());
      marginalize_frame(window_, window_.frames.back().id, cfg_.solver);
    }
  }
  prune_pending(pending_, window_);

  if (id == 0) {
    finish_all();
    return false;
  }
  return true;
}

}  // namespace bvio
