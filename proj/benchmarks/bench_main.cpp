#include <benchmark/benchmark.h>

#include <random>

#include "emboalign/harness.hpp"
#include "emboalign/retarget.hpp"

using namespace emboalign;

namespace {

struct TaskFixture {
  RunConfig config;
  SceneDoc scene;
  BoundConstraintSet constraints;
  GeneratedRollout rollout;

  explicit TaskFixture(TaskTemplate t) {
    config.task = std::string(to_string(t));
    scene = build_task_scene(t);
    constraints = bind(resolve_constraints(config), scene.keypoint_count());
    HallucinationSpec spec{HallucinationMode::misplacement, 0.04, 0.4, 3};
    rollout = generate_rollout(scene, t, spec, config.noise, config.steps);
  }
};

void BM_aggregate_cost(benchmark::State& state) {
  const TaskFixture f(TaskTemplate::place);
  for (auto _ : state) benchmark::DoNotOptimize(aggregate_cost(f.constraints, f.rollout.truth));
}
BENCHMARK(BM_aggregate_cost);

void BM_fit_rigid(benchmark::State& state) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0, 0.2);
  Points3 src(state.range(0), 3);
  for (Eigen::Index i = 0; i < src.size(); ++i) src.data()[i] = n(rng);
  const Points3 dst = apply(Pose::from_rotation_vector(Vec3(0.3, -0.2, 0.5), Vec3(0.1, 0.2, 0.3)), src);
  for (auto _ : state) benchmark::DoNotOptimize(fit_rigid(src, dst));
}
BENCHMARK(BM_fit_rigid)->Arg(4)->Arg(16)->Arg(256);

void BM_visual_plausibility(benchmark::State& state) {
  const TaskFixture f(TaskTemplate::stack);
  const ToyWorldModel wm = make_world_model(f.config, f.scene.keypoint_count());
  for (auto _ : state) benchmark::DoNotOptimize(visual_plausibility(f.rollout.rollout.frames, wm));
}
BENCHMARK(BM_visual_plausibility);

void BM_lift_and_retarget(benchmark::State& state) {
  const TaskFixture f(TaskTemplate::hammer);
  for (auto _ : state) {
    const LiftResult lifted = lift_to_3d(f.rollout.rollout, f.scene);
    benchmark::DoNotOptimize(retarget(lifted.trajectory, f.scene, lifted.visibility));
  }
}
BENCHMARK(BM_lift_and_retarget);

void BM_solve(benchmark::State& state) {
  const TaskFixture f(static_cast<TaskTemplate>(state.range(0)));
  const LiftResult lifted = lift_to_3d(f.rollout.rollout, f.scene);
  const auto init = retarget(lifted.trajectory, f.scene, lifted.visibility).initial_trajectory;
  OptProblem p = OptProblem::make(init, f.constraints, f.scene);
  p.lambda = f.config.lambda;
  for (auto _ : state) benchmark::DoNotOptimize(solve(p));
  state.SetLabel(std::string(to_string(static_cast<TaskTemplate>(state.range(0)))));
}
BENCHMARK(BM_solve)->DenseRange(0, 5)->Unit(benchmark::kMillisecond);

void BM_episode(benchmark::State& state) {
  RunConfig c;
  const SceneDoc scene = build_task_scene(TaskTemplate::stack);
  const auto cs = bind(resolve_constraints(c), scene.keypoint_count());
  std::size_t episode = 0;
  for (auto _ : state) benchmark::DoNotOptimize(run_episode(c, TaskTemplate::stack, scene, cs, episode++));
}
BENCHMARK(BM_episode)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
