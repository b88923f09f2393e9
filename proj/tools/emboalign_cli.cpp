#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "emboalign/errors.hpp"
#include "emboalign/harness.hpp"

namespace fs = std::filesystem;
using namespace emboalign;

namespace {

enum Exit { ok = 0, usage = 1, stage_failure = 2, selection_failed = 3 };

// Flags shared by every subcommand. Unset flags leave the config untouched.
struct Flags {
  std::optional<std::string> config, scene, constraints, task, fallback;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs, n, steps, episodes, max_iters, restarts, max_evaluated;
  std::optional<std::size_t> context, horizon, stride, latent_dim;
  std::optional<double> rate, epsilon, lambda, rot_weight, threshold, goal_slack;
  std::vector<std::string> variants, tasks, modes;
  std::string out = ".";
};

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "Run-config JSON");
  app->add_option("--seed", f.seed, "Master seed");
  app->add_option("--out", f.out, "Output directory");
  app->add_option("--jobs", f.jobs, "Worker threads")->check(CLI::PositiveNumber);
  app->add_option("--scene", f.scene, "Scene JSON");
  app->add_option("--constraints", f.constraints, "Constraint set JSON");
  app->add_option("--task", f.task, "Task archetype for built-in data");
  app->add_option("--n", f.n, "Rollouts per batch");
  app->add_option("--steps", f.steps, "Frames per rollout");
  app->add_option("--rate", f.rate, "Hallucination rate");
  app->add_option("--modes", f.modes, "Failure modes to inject");
  app->add_option("--epsilon", f.epsilon, "Spatial acceptance threshold");
  app->add_option("--fallback", f.fallback, "best_spatial or error");
  app->add_option("--max-evaluated", f.max_evaluated, "Spatial evaluation budget");
  app->add_option("--lambda", f.lambda, "Fidelity weight");
  app->add_option("--rot-weight", f.rot_weight, "Rotation weight in the fidelity term");
  app->add_option("--max-iters", f.max_iters, "Solver iteration cap");
  app->add_option("--restarts", f.restarts, "Extra jittered solver starts");
  app->add_option("--context", f.context, "World-model context frames");
  app->add_option("--horizon", f.horizon, "World-model prediction horizon");
  app->add_option("--stride", f.stride, "Anchor stride");
  app->add_option("--latent-dim", f.latent_dim, "Latent dimension");
  app->add_option("--threshold", f.threshold, "Success threshold on aggregate violation");
  app->add_option("--goal-slack", f.goal_slack, "Largest allowed single constraint value inside its window");
}

RunConfig build_config(const Flags& f) {
  RunConfig c = f.config ? load_run_config(*f.config) : RunConfig{};
  if (f.scene) c.scene_path = *f.scene;
  if (f.constraints) c.constraints_path = *f.constraints;
  if (f.task) c.task = std::string(to_string(parse_task_template(*f.task)));
  if (f.seed) c.seed = *f.seed;
  if (f.jobs) c.jobs = *f.jobs;
  if (f.n) c.n_rollouts = *f.n;
  if (f.steps) c.steps = *f.steps;
  if (f.episodes) c.episodes = *f.episodes;
  if (f.rate) c.hallucination.rate = *f.rate;
  if (!f.modes.empty()) {
    c.hallucination.modes.clear();
    for (const auto& m : f.modes) c.hallucination.modes.push_back(parse_hallucination_mode(m));
  }
  if (f.epsilon) c.selection.epsilon = *f.epsilon;
  if (f.fallback) c.selection.fallback = parse_fallback(*f.fallback);
  if (f.max_evaluated) c.selection.max_evaluated = *f.max_evaluated;
  if (f.lambda) c.lambda = *f.lambda;
  if (f.rot_weight) c.rot_weight = *f.rot_weight;
  if (f.max_iters) c.solver.max_iters = *f.max_iters;
  if (f.restarts) c.solver.restarts = *f.restarts;
  if (f.context) c.world_model.context = *f.context;
  if (f.horizon) c.world_model.horizon = *f.horizon;
  if (f.stride) c.world_model.stride = *f.stride;
  if (f.latent_dim) c.world_model.latent_dim = *f.latent_dim;
  if (f.threshold) c.success_threshold = *f.threshold;
  if (f.goal_slack) c.goal_slack = *f.goal_slack;
  if (!f.variants.empty()) {
    c.variants.clear();
    for (const auto& v : f.variants) c.variants.push_back(parse_variant(v));
  }
  if (!f.tasks.empty()) {
    c.tasks.clear();
    for (const auto& t : f.tasks) c.tasks.push_back(parse_task_template(t));
  }
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constraint-aligned trajectory generation from synthetic video rollouts"};
  app.require_subcommand(1);
  Flags f;
  std::vector<std::string> reports;
  std::string tag;
  std::function<void(const RunConfig&)> action;

  const auto stage = [&](const char* name, const char* help, void (*fn)(const RunConfig&, const fs::path&)) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_common(sub, f);
    sub->callback([&, name, fn] {
      tag = name;
      action = [&, fn](const RunConfig& c) {
        fs::create_directories(f.out);
        fn(c, f.out);
      };
    });
    return sub;
  };
  stage("gen", "Generate a rollout batch into --out", stage_gen);
  stage("score", "Score rollouts under --out for visual plausibility", stage_score);
  stage("select", "Select a rollout and write report.json", stage_select);
  stage("retarget", "Lift and retarget the selected rollout", stage_retarget);
  stage("optimize", "Refine the retargeted trajectory", stage_optimize);
  stage("pipeline", "Run all stages in order", run_pipeline);

  CLI::App* ablate = app.add_subcommand("ablate", "Success rates of the four variants over seeded episodes");
  add_common(ablate, f);
  ablate->add_option("--episodes", f.episodes, "Episodes per task");
  ablate->add_option("--variants", f.variants, "Subset of variants");
  ablate->add_option("--tasks", f.tasks, "Subset of task archetypes");
  ablate->callback([&] {
    tag = "ablate";
    action = [&](const RunConfig& c) {
      const AblationTable t = run_ablation(c);
      write_ablation(t, f.out);
      for (const auto& cell : t.cells) {
        std::printf("%-16s %-7s %3zu/%-3zu %.3f [%.3f, %.3f]\n", std::string(to_string(cell.variant)).c_str(),
                    cell.task.c_str(), cell.successes, cell.episodes, cell.rate, cell.ci_low, cell.ci_high);
      }
    };
  });

  CLI::App* report = app.add_subcommand("report", "Summarize report files into text and CSVs");
  report->add_option("reports", reports, "report.json files");
  report->add_option("--out", f.out, "Directory for CSVs");
  report->callback([&] {
    tag = "report";
    action = [&](const RunConfig&) {
      const ReportSummary s = summarize_reports(std::vector<fs::path>(reports.begin(), reports.end()), f.out);
      std::cout << (s.reports == 0 ? "no reports\n" : s.text);
    };
  });

  CLI::App* make_scene = app.add_subcommand("make-scene", "Write the built-in scene of a task archetype");
  make_scene->add_option("--task", f.task, "Task archetype")->required();
  make_scene->add_option("--out", f.out, "Output directory");
  make_scene->callback([&] {
    tag = "make-scene";
    action = [&](const RunConfig&) {
      fs::create_directories(f.out);
      save_scene(build_task_scene(parse_task_template(*f.task)), fs::path(f.out) / "scene.json");
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : usage;
  }

  RunConfig config;
  try {
    if (tag != "report" && tag != "make-scene") config = build_config(f);
  } catch (const std::exception& e) {
    std::cerr << tag << ": " << e.what() << "\n";
    return usage;
  }
  try {
    action(config);
  } catch (const Error& e) {
    std::cerr << tag << ": " << to_string(e.code()) << ": " << e.what() << "\n";
    return e.code() == Errc::selection_failure ? selection_failed : stage_failure;
  } catch (const std::exception& e) {
    std::cerr << tag << ": " << e.what() << "\n";
    return stage_failure;
  }
  return ok;
}
