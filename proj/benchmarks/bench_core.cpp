#include <benchmark/benchmark.h>

#include "bvio/engine.hpp"
#include "bvio/obsv.hpp"
#include "test_support.hpp"

namespace {

using namespace bvio;

const SimData& turn_sim() {
  static const SimData sim = [] {
    TrajectorySpec spec;
    spec.segments = {Straight{40.0, 6.0}, Arc{90.0, 12.0, 6.0}, Straight{40.0, 6.0}};
    return simulate(spec, SensorRig::default_rig(), 1500, 4);
  }();
  return sim;
}

void BM_Integrate(benchmark::State& state) {
  const SimData& sim = turn_sim();
  const double t0 = sim.truth.frame_time(30);
  const auto imu = imu_between(sim.imu.samples, t0, t0 + 0.1);
  const auto wheel = wheel_between(sim.wheel, t0, t0 + 0.1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(integrate(imu, wheel, Vec3::Zero(), Vec3::Zero(), sim.rig.extrinsics_true.Rbo, {}));
  }
}
BENCHMARK(BM_Integrate);

void BM_Optimize(benchmark::State& state) {
  const SimData& sim = turn_sim();
  const Window base = testing::truth_window(sim, 40, 10, {}, static_cast<std::size_t>(state.range(0)));
  SolverConfig cfg;
  for (auto _ : state) {
    state.PauseTiming();
    Window w = base;
    for (auto& f : w.frames) f.state.p += Vec3(0.05, -0.03, 0.02);
    state.ResumeTiming();
    benchmark::DoNotOptimize(optimize(w, cfg));
  }
}
BENCHMARK(BM_Optimize)->Arg(50)->Arg(150)->Unit(benchmark::kMillisecond);

void BM_Marginalize(benchmark::State& state) {
  const SimData& sim = turn_sim();
  const Window w = testing::truth_window(sim, 40, 10, {}, 150);
  SolverConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(marginalize(w, w.frames.front().id, cfg));
}
BENCHMARK(BM_Marginalize)->Unit(benchmark::kMillisecond);

// Full observability eigendecomposition against the cheap turning test it is
// replaced by at run time.
void BM_HessianEigen(benchmark::State& state) {
  const SimData& sim = turn_sim();
  const Window w = testing::truth_window(sim, 60, 10, {}, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(analyze_window(w));
}
BENCHMARK(BM_HessianEigen)->Arg(30)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_DetectTurning(benchmark::State& state) {
  const SimData& sim = turn_sim();
  const Window w = testing::truth_window(sim, 60, 10, {}, 30);
  for (auto _ : state) benchmark::DoNotOptimize(detect_turning(w));
}
BENCHMARK(BM_DetectTurning);

}  // namespace

BENCHMARK_MAIN();
