#pragma once

// Run configuration, the on-disk pipeline stages, seeded episodes for the
// four ablation variants, and aggregation of reports into tables.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emboalign/documents.hpp"
#include "emboalign/optimize.hpp"
#include "emboalign/rollout.hpp"
#include "emboalign/selection.hpp"
#include "emboalign/tasks.hpp"

namespace emboalign {

enum class Variant { constraints_only, video_only, plus_selection, plus_opt };

inline constexpr std::array<Variant, 4> kAllVariants = {Variant::constraints_only, Variant::video_only,
                                                         Variant::plus_selection, Variant::plus_opt};

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view name);

struct RunConfig {
  std::filesystem::path scene_path;        ///< empty: the built-in scene of `task`
  std::filesystem::path constraints_path;  ///< empty: the shipped file for `task`
  std::string task = "stack";
  std::size_t n_rollouts = 8;
  std::size_t steps = 24;
  HallucinationMix hallucination;
  NoiseParams noise;
  SelectionConfig selection;
  double lambda = 0.1;
  double rot_weight = 1.0;
  SolverParams solver;
  WorldModelParams world_model;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  double success_threshold = 1e-3;
  double goal_slack = 5e-3;
  std::size_t episodes = 100;
  std::vector<Variant> variants{kAllVariants.begin(), kAllVariants.end()};
  std::vector<TaskTemplate> tasks{kAllTasks.begin(), kAllTasks.end()};

  /// Throws Error(invalid_argument) on a broken invariant.
  void validate() const;
};

nlohmann::json run_config_to_json(const RunConfig& c);
/// Missing fields keep their defaults; wrong types raise SchemaError with a path.
RunConfig run_config_from_json(const nlohmann::json& j, const RunConfig& base = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Directory of the shipped task data (scene.json, depth.eatn, constraints.json).
std::filesystem::path default_task_dir(TaskTemplate t);
SceneDoc resolve_scene(const RunConfig& c);
ConstraintSet resolve_constraints(const RunConfig& c);
TaskTemplate resolve_task(const RunConfig& c, const SceneDoc& scene);

/// World model shared by every stage of a run.
ToyWorldModel make_world_model(const RunConfig& c, std::size_t keypoints);

/// Rollout batch of one episode; candidate i uses derive_seed(seed, "rollout", i).
std::vector<GeneratedRollout> generate_batch(const RunConfig& c, const SceneDoc& scene, TaskTemplate task,
                                             std::uint64_t seed);

/// Success rule: aggregate violation of the executed trajectory is within
/// `success_threshold` and no single in-window evaluation exceeds
/// `goal_slack`, so goal constraints hold at the final frame and path
/// constraints such as obstacle clearance hold throughout.
struct SuccessCheck {
  bool success = false;
  double violation = 0;
};
SuccessCheck check_success(const std::vector<Pose>& traj, const SceneDoc& scene, const BoundConstraintSet& cs,
                           const RunConfig& c);

// Pipeline stages over an output directory. Each reads what the previous one
// wrote, so `run_pipeline` is the same as calling them in order.
void stage_gen(const RunConfig& c, const std::filesystem::path& out);
void stage_score(const RunConfig& c, const std::filesystem::path& out);
/// Strict selection without a passing candidate raises Error(selection_failure)
/// and writes nothing.
void stage_select(const RunConfig& c, const std::filesystem::path& out);
void stage_retarget(const RunConfig& c, const std::filesystem::path& out);
void stage_optimize(const RunConfig& c, const std::filesystem::path& out);
void run_pipeline(const RunConfig& c, const std::filesystem::path& out);

struct StageTimings {
  double generate = 0, score = 0, select = 0, retarget = 0, optimize = 0;
};

struct EpisodeOutcome {
  TaskTemplate task = TaskTemplate::stack;
  std::size_t episode = 0;
  Variant variant = Variant::plus_opt;
  bool success = false;
  double final_violation = 0;
  std::optional<std::size_t> selected_index;
  std::string selected_mode;       ///< injected mode of the executed rollout
  std::string failure_category;    ///< empty on success
  std::optional<bool> converged;
  StageTimings timings;            ///< wall-clock seconds, never written to reports
};

/// All requested variants for one (task, episode); the video variants share a
/// single rollout batch.
std::vector<EpisodeOutcome> run_episode(const RunConfig& c, TaskTemplate task, const SceneDoc& scene,
                                        const BoundConstraintSet& cs, std::size_t episode);

struct AblationCell {
  Variant variant;
  std::string task;  ///< task name or "mean"
  std::size_t episodes = 0;
  std::size_t successes = 0;
  double rate = 0;
  double ci_low = 0, ci_high = 0;  ///< Wilson 95% interval
};

struct AblationTable {
  std::vector<AblationCell> cells;
  std::vector<EpisodeOutcome> outcomes;  ///< ordered by task, episode, variant
};

/// Runs `c.episodes` episodes per task on up to `c.jobs` threads.
AblationTable run_ablation(const RunConfig& c);
/// "mean" row of a variant.
const AblationCell& ablation_mean(const AblationTable& t, Variant v);
const AblationCell& ablation_cell(const AblationTable& t, Variant v, std::string_view task);
void write_ablation(const AblationTable& t, const std::filesystem::path& dir);

/// Wilson score interval at 95%.
std::pair<double, double> wilson_interval(std::size_t successes, std::size_t n);

struct ReportSummary {
  std::size_t reports = 0;
  std::size_t successes = 0;
  std::vector<std::pair<std::string, std::size_t>> failures;  ///< category -> count, sorted by name
  std::string text;
};

/// Aggregates reports; writes scores.csv, traces.csv, failures.csv into `out`
/// when it is non-empty.
ReportSummary summarize_reports(const std::vector<std::filesystem::path>& reports, const std::filesystem::path& out);

}  // namespace emboalign
