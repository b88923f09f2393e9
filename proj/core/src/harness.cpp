#include "emboalign/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "emboalign/errors.hpp"
#include "emboalign/parallel.hpp"
#include "emboalign/retarget.hpp"
#include "emboalign/seeding.hpp"

#ifndef EMBOALIGN_DATA_DIR
#define EMBOALIGN_DATA_DIR "data/tasks"
#endif

namespace emboalign {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::constraints_only: return "constraints_only";
    case Variant::video_only: return "video_only";
    case Variant::plus_selection: return "plus_selection";
    case Variant::plus_opt: return "plus_opt";
  }
  return "plus_opt";
}

Variant parse_variant(std::string_view name) {
  for (auto v : kAllVariants) {
    if (to_string(v) == name) return v;
  }
  throw Error(Errc::invalid_argument, "unknown variant '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Run configuration

void RunConfig::validate() const {
  const auto bad = [](const std::string& m) { throw Error(Errc::invalid_argument, m); };
  if (n_rollouts < 1) bad("n_rollouts must be >= 1");
  if (steps < 8) bad("steps must be >= 8");
  if (!(hallucination.rate >= 0 && hallucination.rate <= 1)) bad("hallucination rate must lie in [0, 1]");
  if (!(hallucination.deformation_magnitude >= 0) || !(hallucination.misplacement_magnitude >= 0)) {
    bad("hallucination magnitudes must be >= 0");
  }
  if (!(noise.track_sigma_px >= 0) || !(noise.depth_sigma >= 0) || !(noise.placement_sigma >= 0)) {
    bad("noise sigmas must be >= 0");
  }
  if (!(noise.depth_alpha > 0)) bad("depth_alpha must be positive");
  if (!(selection.epsilon >= 0)) bad("epsilon must be >= 0");
  if (!(lambda >= 0) || !(rot_weight >= 0)) bad("lambda and rot_weight must be >= 0");
  if (!(solver.grad_step > 0)) bad("grad_step must be positive");
  if (world_model.context < 2 || world_model.horizon < 1 || world_model.stride < 1 || world_model.latent_dim < 4) {
    bad("world model needs context >= 2, horizon >= 1, stride >= 1, latent_dim >= 4");
  }
  if (steps < world_model.context + world_model.horizon) bad("steps must cover context + horizon");
  if (jobs < 1) bad("jobs must be >= 1");
  if (episodes < 1) bad("episodes must be >= 1");
  if (!(success_threshold >= 0) || !(goal_slack >= 0)) bad("success thresholds must be >= 0");
}

json run_config_to_json(const RunConfig& c) {
  json modes = json::array();
  for (auto m : c.hallucination.modes) modes.push_back(std::string(to_string(m)));
  json variants = json::array();
  for (auto v : c.variants) variants.push_back(std::string(to_string(v)));
  json tasks = json::array();
  for (auto t : c.tasks) tasks.push_back(std::string(to_string(t)));
  return {
      {"scene", c.scene_path.generic_string()},
      {"constraints", c.constraints_path.generic_string()},
      {"task", c.task},
      {"n_rollouts", c.n_rollouts},
      {"steps", c.steps},
      {"seed", c.seed},
      {"jobs", c.jobs},
      {"episodes", c.episodes},
      {"hallucination",
       {{"rate", c.hallucination.rate},
        {"modes", modes},
        {"deformation_magnitude", c.hallucination.deformation_magnitude},
        {"misplacement_magnitude", c.hallucination.misplacement_magnitude}}},
      {"noise",
       {{"track_sigma_px", c.noise.track_sigma_px},
        {"depth_alpha", c.noise.depth_alpha},
        {"depth_beta", c.noise.depth_beta},
        {"depth_sigma", c.noise.depth_sigma},
        {"placement_sigma", c.noise.placement_sigma}}},
      {"selection",
       {{"epsilon", c.selection.epsilon},
        {"max_evaluated", c.selection.max_evaluated ? json(*c.selection.max_evaluated) : json(nullptr)},
        {"fallback", std::string(to_string(c.selection.fallback))}}},
      {"solver",
       {{"lambda", c.lambda},
        {"rot_weight", c.rot_weight},
        {"max_iters", c.solver.max_iters},
        {"grad_step", c.solver.grad_step},
        {"tol_obj", c.solver.tol_obj},
        {"tol_grad", c.solver.tol_grad},
        {"tol_violation", c.solver.tol_violation},
        {"line_search_budget", c.solver.line_search_budget},
        {"restarts", c.solver.restarts}}},
      {"world_model",
       {{"context", c.world_model.context},
        {"horizon", c.world_model.horizon},
        {"stride", c.world_model.stride},
        {"latent_dim", c.world_model.latent_dim}}},
      {"success", {{"threshold", c.success_threshold}, {"goal_slack", c.goal_slack}}},
      {"variants", variants},
      {"tasks", tasks},
  };
}

namespace {

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw SchemaError(Errc::schema_violation, path_.empty() ? "$" : path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) const {
    const auto it = j_.find(key);
    return it == j_.end() || it->is_null() ? nullptr : &*it;
  }

  void number(const std::string& key, double& out) const {
    if (const json* v = find(key)) {
      if (!v->is_number() || !std::isfinite(v->get<double>())) fail(key, "expected a finite number");
      out = v->get<double>();
    }
  }
  template <class U>
  void count(const std::string& key, U& out) const {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0)) {
        fail(key, "expected a non-negative integer");
      }
      out = v->get<U>();
    }
  }
  void text(const std::string& key, std::string& out) const {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(key, "expected a string");
      out = v->get<std::string>();
    }
  }
  template <class F>
  void each_string(const std::string& key, F&& fn) const {
    if (const json* v = find(key)) {
      if (!v->is_array()) fail(key, "expected an array of strings");
      for (std::size_t i = 0; i < v->size(); ++i) {
        if (!(*v)[i].is_string()) fail(key + "[" + std::to_string(i) + "]", "expected a string");
        try {
          fn((*v)[i].get<std::string>());
        } catch (const SchemaError&) {
          throw;
        } catch (const Error& e) {
          fail(key + "[" + std::to_string(i) + "]", e.what());
        }
      }
    }
  }
  std::optional<Reader> child(const std::string& key) const {
    if (const json* v = find(key)) return Reader(*v, at(key));
    return std::nullopt;
  }
  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    throw SchemaError(Errc::schema_violation, at(key), msg);
  }

 private:
  const json& j_;
  std::string path_;
};

}  // namespace

RunConfig run_config_from_json(const json& j, const RunConfig& base) {
  RunConfig c = base;
  const Reader r(j, "");
  std::string s;
  if (const json* v = r.find("scene")) {
    if (!v->is_string()) r.fail("scene", "expected a string");
    c.scene_path = v->get<std::string>();
  }
  if (const json* v = r.find("constraints")) {
    if (!v->is_string()) r.fail("constraints", "expected a string");
    c.constraints_path = v->get<std::string>();
  }
  r.text("task", c.task);
  r.count("n_rollouts", c.n_rollouts);
  r.count("steps", c.steps);
  r.count("seed", c.seed);
  r.count("jobs", c.jobs);
  r.count("episodes", c.episodes);
  if (auto h = r.child("hallucination")) {
    h->number("rate", c.hallucination.rate);
    if (h->find("modes")) {
      c.hallucination.modes.clear();
      h->each_string("modes", [&](const std::string& m) {
        const auto mode = parse_hallucination_mode(m);
        if (mode == HallucinationMode::none) throw Error(Errc::invalid_argument, "'none' is not a failure mode");
        c.hallucination.modes.push_back(mode);
      });
    }
    h->number("deformation_magnitude", c.hallucination.deformation_magnitude);
    h->number("misplacement_magnitude", c.hallucination.misplacement_magnitude);
  }
  if (auto n = r.child("noise")) {
    n->number("track_sigma_px", c.noise.track_sigma_px);
    n->number("depth_alpha", c.noise.depth_alpha);
    n->number("depth_beta", c.noise.depth_beta);
    n->number("depth_sigma", c.noise.depth_sigma);
    n->number("placement_sigma", c.noise.placement_sigma);
  }
  if (auto sel = r.child("selection")) {
    sel->number("epsilon", c.selection.epsilon);
    if (sel->find("max_evaluated")) {
      std::size_t m = 0;
      sel->count("max_evaluated", m);
      c.selection.max_evaluated = m;
    }
    std::string fb;
    sel->text("fallback", fb);
    if (!fb.empty()) {
      try {
        c.selection.fallback = parse_fallback(fb);
      } catch (const Error& e) {
        sel->fail("fallback", e.what());
      }
    }
  }
  if (auto sv = r.child("solver")) {
    sv->number("lambda", c.lambda);
    sv->number("rot_weight", c.rot_weight);
    sv->count("max_iters", c.solver.max_iters);
    sv->number("grad_step", c.solver.grad_step);
    sv->number("tol_obj", c.solver.tol_obj);
    sv->number("tol_grad", c.solver.tol_grad);
    sv->number("tol_violation", c.solver.tol_violation);
    sv->count("line_search_budget", c.solver.line_search_budget);
    sv->count("restarts", c.solver.restarts);
  }
  if (auto w = r.child("world_model")) {
    w->count("context", c.world_model.context);
    w->count("horizon", c.world_model.horizon);
    w->count("stride", c.world_model.stride);
    w->count("latent_dim", c.world_model.latent_dim);
  }
  if (auto su = r.child("success")) {
    su->number("threshold", c.success_threshold);
    su->number("goal_slack", c.goal_slack);
  }
  if (r.find("variants")) {
    c.variants.clear();
    r.each_string("variants", [&](const std::string& v) { c.variants.push_back(parse_variant(v)); });
  }
  if (r.find("tasks")) {
    c.tasks.clear();
    r.each_string("tasks", [&](const std::string& t) { c.tasks.push_back(parse_task_template(t)); });
  }
  try {
    c.validate();
  } catch (const Error& e) {
    throw SchemaError(Errc::schema_violation, "$", e.what());
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  RunConfig c = run_config_from_json(read_json_file(path));
  // Relative document paths are resolved against the config's directory.
  const fs::path dir = path.parent_path();
  if (!c.scene_path.empty() && c.scene_path.is_relative()) c.scene_path = dir / c.scene_path;
  if (!c.constraints_path.empty() && c.constraints_path.is_relative()) c.constraints_path = dir / c.constraints_path;
  return c;
}

fs::path default_task_dir(TaskTemplate t) {
  const char* env = std::getenv("EMBOALIGN_DATA_DIR");
  const fs::path root = env && *env ? fs::path(env) : fs::path(EMBOALIGN_DATA_DIR);
  return root / std::string(to_string(t));
}

SceneDoc resolve_scene(const RunConfig& c) {
  if (!c.scene_path.empty()) return load_scene(c.scene_path);
  return load_scene(default_task_dir(parse_task_template(c.task)) / "scene.json");
}

ConstraintSet resolve_constraints(const RunConfig& c) {
  if (!c.constraints_path.empty()) return load_constraints(c.constraints_path);
  return load_constraints(default_task_dir(parse_task_template(c.task)) / "constraints.json");
}

TaskTemplate resolve_task(const RunConfig& c, const SceneDoc& scene) {
  return parse_task_template(c.scene_path.empty() || scene.task.empty() ? c.task : scene.task);
}

ToyWorldModel make_world_model(const RunConfig& c, std::size_t keypoints) {
  return ToyWorldModel(3 * keypoints + 1, c.world_model, derive_seed(c.seed, "world_model"));
}

std::vector<GeneratedRollout> generate_batch(const RunConfig& c, const SceneDoc& scene, TaskTemplate task,
                                             std::uint64_t seed) {
  std::vector<GeneratedRollout> out;
  out.reserve(c.n_rollouts);
  for (std::size_t i = 0; i < c.n_rollouts; ++i) {
    const HallucinationSpec spec = sample_hallucination(c.hallucination, derive_seed(seed, "rollout", i));
    out.push_back(generate_rollout(scene, task, spec, c.noise, c.steps));
  }
  return out;
}

SuccessCheck check_success(const std::vector<Pose>& traj, const SceneDoc& scene, const BoundConstraintSet& cs,
                           const RunConfig& c) {
  const KeypointTrajectory k = executed_keypoints(traj, scene);
  SuccessCheck out;
  out.violation = aggregate_cost(cs, k);
  out.success = out.violation <= c.success_threshold && max_violation(cs, k) <= c.goal_slack;
  return out;
}

// ---------------------------------------------------------------------------
// Shared stage logic

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::uint64_t episode_seed(const RunConfig& c, TaskTemplate task, std::size_t episode) {
  return derive_seed(c.seed, "episode:" + std::string(to_string(task)), episode);
}

bool is_calibration_failure(Errc e) {
  return e == Errc::no_valid_pixels || e == Errc::rank_deficient || e == Errc::negative_scale;
}

constexpr double kResidualLimit = 0.005;

OptProblem make_problem(const RunConfig& c, const std::vector<Pose>& init, const BoundConstraintSet& cs,
                        const SceneDoc& scene, std::uint64_t seed) {
  OptProblem p = OptProblem::make(init, cs, scene);
  p.lambda = c.lambda;
  p.rot_weight = c.rot_weight;
  p.solver = c.solver;
  p.solver.restart_seed = seed;
  return p;
}

// Picks the first failure cause in priority order.
std::string categorize(bool calibration_failed, bool hallucinated_or_fallback, bool retarget_bad,
                       std::optional<bool> converged) {
  if (calibration_failed) return "calibration-error";
  if (hallucinated_or_fallback) return "selection-miss";
  if (retarget_bad) return "retarget-residual";
  if (converged && !*converged) return "optimizer-nonconverged";
  return "other";
}

struct Executed {
  std::optional<std::vector<Pose>> initial;
  std::vector<double> residuals;
  DepthCalibration calibration;
  bool calibration_failed = false;
  bool retarget_bad = false;
  std::string error;
};

Executed lift_and_retarget(const Rollout& r, const SceneDoc& scene, const std::optional<LiftResult>& lifted) {
  Executed ex;
  try {
    const LiftResult l = lifted ? *lifted : lift_to_3d(r, scene);
    ex.calibration = l.calibration;
    RetargetResult rr = retarget(l.trajectory, scene, l.visibility);
    ex.residuals = rr.residuals;
    ex.retarget_bad = *std::max_element(rr.residuals.begin(), rr.residuals.end()) > kResidualLimit;
    ex.initial = std::move(rr.initial_trajectory);
  } catch (const Error& e) {
    ex.error = e.what();
    ex.calibration_failed = is_calibration_failure(e.code());
    ex.retarget_bad = !ex.calibration_failed;
  }
  return ex;
}

std::vector<Pose> interpolate(const Pose& a, const Pose& b, std::size_t steps) {
  std::vector<Pose> out;
  const Eigen::Quaterniond qa(a.rotation()), qb(b.rotation());
  for (std::size_t t = 0; t < steps; ++t) {
    const double s = static_cast<double>(t) / static_cast<double>(steps - 1);
    const Eigen::Quaterniond q = qa.slerp(s, qb);
    out.push_back(Pose::from_quaternion(q.w(), q.x(), q.y(), q.z(), (1 - s) * a.translation() + s * b.translation()));
  }
  return out;
}

// Constraint-only planning: reach the end-state constraints from the grasp
// pose, connect start and goal by a straight line, then optimize.
OptResult plan_from_constraints(const RunConfig& c, const SceneDoc& scene, const BoundConstraintSet& cs,
                                std::uint64_t seed) {
  ConstraintSet goal_set;
  for (const auto& con : cs.set().constraints()) {
    if (con.window_end >= 1) goal_set.add({con.name, con.expr, 0.0, 1.0});
  }
  OptProblem goal = make_problem(c, {scene.grasp_transform}, bind(goal_set, scene), scene, seed);
  goal.lambda = 0;
  const Pose target = solve(goal).trajectory.front();
  return solve(make_problem(c, interpolate(scene.grasp_transform, target, c.steps), cs, scene, seed));
}

}  // namespace

// ---------------------------------------------------------------------------
// Episodes

std::vector<EpisodeOutcome> run_episode(const RunConfig& c, TaskTemplate task, const SceneDoc& scene,
                                        const BoundConstraintSet& cs, std::size_t episode) {
  const std::uint64_t seed = episode_seed(c, task, episode);
  const auto wants = [&](Variant v) { return std::find(c.variants.begin(), c.variants.end(), v) != c.variants.end(); };
  const bool video = wants(Variant::video_only) || wants(Variant::plus_selection) || wants(Variant::plus_opt);

  StageTimings timing;
  std::vector<Rollout> batch;
  if (video) {
    auto t0 = Clock::now();
    for (auto& g : generate_batch(c, scene, task, seed)) batch.push_back(std::move(g.rollout));
    timing.generate = seconds_since(t0);
  }

  std::optional<SelectionResult> sel;
  if (wants(Variant::plus_selection) || wants(Variant::plus_opt)) {
    const ToyWorldModel wm = make_world_model(c, scene.keypoint_count());
    auto t0 = Clock::now();
    const auto s_vis = score_batch(batch, wm);
    timing.score = seconds_since(t0);
    t0 = Clock::now();
    SelectionConfig scfg = c.selection;
    scfg.fallback = Fallback::best_spatial;
    sel = select_by_scores(
        s_vis,
        [&](std::size_t i) -> std::pair<double, std::optional<LiftResult>> {
          LiftResult l = lift_to_3d(batch[i], scene);
          const double s = aggregate_cost(cs, l.trajectory);
          return {s, std::move(l)};
        },
        scfg);
    timing.select = seconds_since(t0);
  }

  std::vector<EpisodeOutcome> out;
  const auto base = [&](Variant v) {
    EpisodeOutcome o;
    o.task = task;
    o.episode = episode;
    o.variant = v;
    o.timings = timing;
    return o;
  };
  const auto finish = [&](EpisodeOutcome& o, const std::vector<Pose>& traj, bool calib, bool hallucinated,
                          bool retarget_bad) {
    const SuccessCheck chk = check_success(traj, scene, cs, c);
    o.success = chk.success;
    o.final_violation = chk.violation;
    if (!o.success) o.failure_category = categorize(calib, hallucinated, retarget_bad, o.converged);
  };
  const auto failed = [&](EpisodeOutcome& o, bool calib, bool hallucinated) {
    o.success = false;
    o.final_violation = std::numeric_limits<double>::infinity();
    o.failure_category = categorize(calib, hallucinated, true, o.converged);
  };

  for (Variant v : c.variants) {
    EpisodeOutcome o = base(v);
    if (v == Variant::constraints_only) {
      const auto t0 = Clock::now();
      const OptResult res = plan_from_constraints(c, scene, cs, derive_seed(seed, "solver"));
      o.timings.optimize = seconds_since(t0);
      o.converged = res.converged;
      finish(o, res.trajectory, false, false, false);
      out.push_back(std::move(o));
      continue;
    }
    std::size_t chosen = 0;
    bool fallback = false;
    std::optional<LiftResult> lifted;
    if (v != Variant::video_only) {
      chosen = *sel->selected;
      fallback = sel->fallback;
      lifted = sel->table[chosen].lifted;
    }
    o.selected_index = chosen;
    o.selected_mode = batch[chosen].meta.injected_mode;
    const bool hallucinated = fallback || o.selected_mode != "none";
    auto t0 = Clock::now();
    const Executed ex = lift_and_retarget(batch[chosen], scene, lifted);
    o.timings.retarget = seconds_since(t0);
    if (!ex.initial) {
      failed(o, ex.calibration_failed, hallucinated);
      out.push_back(std::move(o));
      continue;
    }
    if (v == Variant::plus_opt) {
      t0 = Clock::now();
      try {
        const OptResult res = solve(make_problem(c, *ex.initial, cs, scene, derive_seed(seed, "solver")));
        o.converged = res.converged;
        o.timings.optimize = seconds_since(t0);
        finish(o, res.trajectory, false, hallucinated, ex.retarget_bad);
      } catch (const Error&) {
        o.converged = false;
        failed(o, false, hallucinated);
      }
    } else {
      finish(o, *ex.initial, false, hallucinated, ex.retarget_bad);
    }
    out.push_back(std::move(o));
  }
  return out;
}

std::pair<double, double> wilson_interval(std::size_t successes, std::size_t n) {
  if (n == 0) return {0.0, 1.0};
  const double z = 1.959963984540054;
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(successes) / nn;
  const double denom = 1 + z * z / nn;
  const double centre = (p + z * z / (2 * nn)) / denom;
  const double half = z * std::sqrt(p * (1 - p) / nn + z * z / (4 * nn * nn)) / denom;
  // the closed form only reaches the endpoints up to rounding
  const double lo = successes == 0 ? 0.0 : std::max(0.0, centre - half);
  const double hi = successes == n ? 1.0 : std::min(1.0, centre + half);
  return {lo, hi};
}

AblationTable run_ablation(const RunConfig& c) {
  c.validate();
  struct TaskData {
    TaskTemplate task;
    SceneDoc scene;
    BoundConstraintSet cs;
  };
  std::vector<TaskData> data;
  for (TaskTemplate t : c.tasks) {
    RunConfig tc = c;
    tc.task = std::string(to_string(t));
    tc.scene_path.clear();
    tc.constraints_path.clear();
    SceneDoc scene = resolve_scene(tc);
    BoundConstraintSet cs = bind(resolve_constraints(tc), scene);
    data.push_back({t, std::move(scene), std::move(cs)});
  }
  const std::size_t per_task = c.episodes;
  std::vector<std::vector<EpisodeOutcome>> results(data.size() * per_task);
  parallel_for(results.size(), c.jobs, [&](std::size_t i) {
    const TaskData& d = data[i / per_task];
    results[i] = run_episode(c, d.task, d.scene, d.cs, i % per_task);
  });

  AblationTable table;
  for (auto& r : results) {
    for (auto& o : r) table.outcomes.push_back(std::move(o));
  }
  const auto cell = [&](Variant v, const std::string& task, std::size_t n, std::size_t k) {
    AblationCell cl{v, task, n, k, n ? static_cast<double>(k) / static_cast<double>(n) : 0.0, 0, 0};
    std::tie(cl.ci_low, cl.ci_high) = wilson_interval(k, n);
    return cl;
  };
  for (Variant v : c.variants) {
    std::size_t total_n = 0, total_k = 0;
    for (const auto& d : data) {
      std::size_t n = 0, k = 0;
      for (const auto& o : table.outcomes) {
        if (o.variant == v && o.task == d.task) {
          ++n;
          k += o.success ? 1 : 0;
        }
      }
      table.cells.push_back(cell(v, std::string(to_string(d.task)), n, k));
      total_n += n;
      total_k += k;
    }
    table.cells.push_back(cell(v, "mean", total_n, total_k));
  }
  return table;
}

const AblationCell& ablation_cell(const AblationTable& t, Variant v, std::string_view task) {
  for (const auto& c : t.cells) {
    if (c.variant == v && c.task == task) return c;
  }
  throw Error(Errc::invalid_argument, "no ablation cell for " + std::string(to_string(v)) + "/" + std::string(task));
}

const AblationCell& ablation_mean(const AblationTable& t, Variant v) { return ablation_cell(t, v, "mean"); }

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
  if (!os) throw Error(Errc::io_failure, "cannot write " + path.string());
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

void write_ablation(const AblationTable& t, const fs::path& dir) {
  fs::create_directories(dir);
  std::ostringstream csv;
  csv << "variant,task,episodes,successes,rate,ci_low,ci_high\n";
  json cells = json::array();
  for (const auto& c : t.cells) {
    csv << to_string(c.variant) << ',' << c.task << ',' << c.episodes << ',' << c.successes << ',' << fmt(c.rate)
        << ',' << fmt(c.ci_low) << ',' << fmt(c.ci_high) << '\n';
    cells.push_back({{"variant", std::string(to_string(c.variant))},
                     {"task", c.task},
                     {"episodes", c.episodes},
                     {"successes", c.successes},
                     {"rate", c.rate},
                     {"ci95", {c.ci_low, c.ci_high}}});
  }
  write_text(dir / "ablation.csv", csv.str());

  std::ostringstream ep;
  ep << "task,episode,variant,success,final_violation,selected_index,selected_mode,failure_category\n";
  json episodes = json::array();
  for (const auto& o : t.outcomes) {
    ep << to_string(o.task) << ',' << o.episode << ',' << to_string(o.variant) << ',' << (o.success ? 1 : 0) << ','
       << fmt(o.final_violation) << ',' << (o.selected_index ? std::to_string(*o.selected_index) : "") << ','
       << o.selected_mode << ',' << o.failure_category << '\n';
    json jo{{"task", std::string(to_string(o.task))},
            {"episode", o.episode},
            {"variant", std::string(to_string(o.variant))},
            {"success", o.success},
            {"final_violation", finite_or_null(o.final_violation)},
            {"failure_category", o.failure_category}};
    if (o.selected_index) jo["selected_index"] = *o.selected_index;
    if (!o.selected_mode.empty()) jo["selected_mode"] = o.selected_mode;
    if (o.converged) jo["converged"] = *o.converged;
    episodes.push_back(std::move(jo));
  }
  write_text(dir / "episodes.csv", ep.str());
  write_json_file({{"kind", "ablation"}, {"cells", cells}, {"episodes", episodes}}, dir / "ablation.json");
}

// ---------------------------------------------------------------------------
// On-disk pipeline stages

namespace {

fs::path rollout_dir(const fs::path& out, std::size_t i) { return out / ("rollout_" + std::to_string(i)); }

std::vector<Rollout> load_batch(const fs::path& out) {
  std::vector<Rollout> batch;
  for (std::size_t i = 0; fs::exists(rollout_dir(out, i)); ++i) batch.push_back(load_rollout(rollout_dir(out, i)));
  if (batch.empty()) throw Error(Errc::io_failure, "no rollout directories under " + out.string());
  return batch;
}

struct Inputs {
  SceneDoc scene;
  TaskTemplate task;
  BoundConstraintSet cs;
};

Inputs load_inputs(const RunConfig& c) {
  SceneDoc scene = resolve_scene(c);
  const TaskTemplate task = resolve_task(c, scene);
  BoundConstraintSet cs = bind(resolve_constraints(c), scene);
  return {std::move(scene), task, std::move(cs)};
}

std::uint64_t pipeline_seed(const RunConfig& c, TaskTemplate task) { return episode_seed(c, task, 0); }

}  // namespace

void stage_gen(const RunConfig& c, const fs::path& out) {
  c.validate();
  const SceneDoc scene = resolve_scene(c);
  const TaskTemplate task = resolve_task(c, scene);
  const auto batch = generate_batch(c, scene, task, pipeline_seed(c, task));
  for (std::size_t i = 0; i < batch.size(); ++i) save_rollout(batch[i].rollout, rollout_dir(out, i));
}

void stage_score(const RunConfig& c, const fs::path& out) {
  c.validate();
  const auto batch = load_batch(out);
  const ToyWorldModel wm = make_world_model(c, batch.front().keypoints());
  write_json_file({{"s_vis", score_batch(batch, wm, c.jobs)}}, out / "scores.json");
}

void stage_select(const RunConfig& c, const fs::path& out) {
  c.validate();
  const Inputs in = load_inputs(c);
  const auto batch = load_batch(out);
  const json scores = read_json_file(out / "scores.json");
  std::vector<double> s_vis;
  try {
    s_vis = scores.at("s_vis").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw SchemaError(Errc::schema_violation, "s_vis", e.what());
  }
  if (s_vis.size() != batch.size()) throw SchemaError(Errc::schema_violation, "s_vis", "one score per rollout expected");
  const SelectionResult sel = select_by_scores(
      s_vis,
      [&](std::size_t i) -> std::pair<double, std::optional<LiftResult>> {
        return {spatial_score(batch[i], in.scene, in.cs), std::nullopt};
      },
      c.selection);
  ReportDoc r;
  r.rollouts = selection_records(sel, batch);
  r.selected_index = sel.selected;
  r.fallback = sel.fallback;
  r.validate();
  save_report(r, out / "report.json");
}

void stage_retarget(const RunConfig& c, const fs::path& out) {
  c.validate();
  const Inputs in = load_inputs(c);
  ReportDoc r = load_report(out / "report.json");
  if (!r.selected_index) throw Error(Errc::invalid_argument, "report has no selected rollout");
  const Rollout rollout = load_rollout(rollout_dir(out, *r.selected_index));
  const LiftResult lifted = lift_to_3d(rollout, in.scene);
  const RetargetResult rr = retarget(lifted.trajectory, in.scene, lifted.visibility);
  r.calibration_alpha = lifted.calibration.alpha;
  r.calibration_beta = lifted.calibration.beta;
  r.retarget_residuals = rr.residuals;
  r.initial_trajectory = rr.initial_trajectory;
  save_tensor(trajectory_to_tensor(rr.initial_trajectory), out / "initial_trajectory.eatn");
  save_report(r, out / "report.json");
}

void stage_optimize(const RunConfig& c, const fs::path& out) {
  c.validate();
  const Inputs in = load_inputs(c);
  ReportDoc r = load_report(out / "report.json");
  if (r.initial_trajectory.empty()) throw Error(Errc::invalid_argument, "report has no retargeted trajectory");
  const OptResult res =
      solve(make_problem(c, r.initial_trajectory, in.cs, in.scene, derive_seed(pipeline_seed(c, in.task), "solver")));
  r.trace = res.trace;
  r.converged = res.converged;
  r.iterations = res.iterations;
  r.final_trajectory = res.trajectory;

  const SuccessCheck chk = check_success(res.trajectory, in.scene, in.cs, c);
  EpisodeSummary s;
  s.success = chk.success;
  s.final_violation = chk.violation;
  if (!s.success) {
    bool hallucinated = r.fallback;
    if (r.selected_index) {
      for (const auto& rec : r.rollouts) {
        if (rec.index == *r.selected_index && !rec.injected_mode.empty() && rec.injected_mode != "none") {
          hallucinated = true;
        }
      }
    }
    const bool residual_bad =
        !r.retarget_residuals.empty() &&
        *std::max_element(r.retarget_residuals.begin(), r.retarget_residuals.end()) > kResidualLimit;
    s.failure_category = categorize(false, hallucinated, residual_bad, res.converged);
  }
  r.outcome = s;
  save_tensor(trajectory_to_tensor(res.trajectory), out / "final_trajectory.eatn");
  write_trace_csv(res.trace, out / "trace.csv");
  save_report(r, out / "report.json");
}

void run_pipeline(const RunConfig& c, const fs::path& out) {
  stage_gen(c, out);
  stage_score(c, out);
  stage_select(c, out);
  stage_retarget(c, out);
  stage_optimize(c, out);
}

// ---------------------------------------------------------------------------
// Report aggregation

ReportSummary summarize_reports(const std::vector<fs::path>& reports, const fs::path& out) {
  ReportSummary s;
  std::map<std::string, std::size_t> failures;
  std::ostringstream scores, traces;
  scores << "report,index,s_vis,s_spatial,accepted,injected_mode\n";
  traces << "report,iteration,objective,constraint_term,fidelity_term,max_violation\n";
  std::size_t with_outcome = 0;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const ReportDoc r = load_report(reports[i]);
    ++s.reports;
    for (const auto& rec : r.rollouts) {
      scores << i << ',' << rec.index << ',' << fmt(rec.s_vis) << ',' << (rec.s_spatial ? fmt(*rec.s_spatial) : "")
             << ',' << (rec.accepted ? 1 : 0) << ',' << rec.injected_mode << '\n';
    }
    for (const auto& t : r.trace) {
      traces << i << ',' << t.iteration << ',' << fmt(t.objective) << ',' << fmt(t.constraint_term) << ','
             << fmt(t.fidelity_term) << ',' << fmt(t.max_violation) << '\n';
    }
    if (r.outcome) {
      ++with_outcome;
      if (r.outcome->success) {
        ++s.successes;
      } else {
        ++failures[r.outcome->failure_category.empty() ? "other" : r.outcome->failure_category];
      }
    }
  }
  s.failures.assign(failures.begin(), failures.end());
  std::ostringstream text;
  std::ostringstream fcsv;
  fcsv << "category,count,percent\n";
  const std::size_t failed = with_outcome - s.successes;
  if (s.reports > 0) {
    text << "reports=" << s.reports << " success=" << s.successes << "/" << with_outcome << "\n";
    for (const auto& [cat, n] : s.failures) {
      const double pct = 100.0 * static_cast<double>(n) / static_cast<double>(failed);
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.1f", pct);
      text << "  " << cat << ": " << n << " (" << buf << "% of failures)\n";
      fcsv << cat << ',' << n << ',' << fmt(pct) << '\n';
    }
  }
  s.text = text.str();
  if (!out.empty()) {
    fs::create_directories(out);
    write_text(out / "scores.csv", scores.str());
    write_text(out / "traces.csv", traces.str());
    write_text(out / "failures.csv", fcsv.str());
  }
  return s;
}

}  // namespace emboalign
