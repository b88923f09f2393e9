#include "emboalign/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "emboalign/errors.hpp"
#include "emboalign/parallel.hpp"

namespace emboalign {

LiftResult lift_to_3d(const Rollout& r, const SceneDoc& scene) {
  r.validate(scene.intrinsics);
  const std::size_t K = r.keypoints();
  if (K != scene.keypoint_count()) {
    throw Error(Errc::invalid_argument, "rollout keypoint count does not match the scene");
  }
  LiftResult out;
  out.calibration = calibrate_depth(r.depth_frame1, scene.depth, default_depth_validity(scene.depth));
  out.visibility = r.visibility;
  const KeypointConfig initial = scene.initial_keypoints();
  KeypointConfig current = initial;
  out.trajectory.reserve(r.steps());
  for (std::size_t t = 0; t < r.steps(); ++t) {
    const auto ti = static_cast<Eigen::Index>(t);
    std::size_t seen = 0;
    for (std::size_t j = 0; j < K; ++j) {
      const auto ji = static_cast<Eigen::Index>(j);
      if (!r.visibility(ti, ji)) continue;
      const double d = out.calibration.apply(r.depth(ti, ji));
      try {
        const Vec3 pc = back_project(r.tracks[t].row(ji).transpose(), d, scene.intrinsics);
        current.row(ji) = apply(scene.camera_pose, pc).transpose();
      } catch (const Error& e) {
        throw FrameError(e.code(), t + 1, "keypoint " + std::to_string(j) + ": " + e.what());
      }
      ++seen;
    }
    if (seen == 0) throw FrameError(Errc::all_points_invisible, t + 1, "no keypoint is visible");
    out.trajectory.push_back(current);
  }
  return out;
}

double spatial_score(const Rollout& r, const SceneDoc& scene, const BoundConstraintSet& cs) {
  return aggregate_cost(cs, lift_to_3d(r, scene).trajectory);
}

std::string_view to_string(Fallback f) { return f == Fallback::error ? "error" : "best_spatial"; }

Fallback parse_fallback(std::string_view name) {
  if (name == "best_spatial") return Fallback::best_spatial;
  if (name == "error") return Fallback::error;
  throw Error(Errc::invalid_argument, "unknown fallback '" + std::string(name) + "'");
}

SelectionResult select_by_scores(const std::vector<double>& s_vis, const SpatialFn& spatial,
                                 const SelectionConfig& cfg) {
  if (s_vis.empty()) throw Error(Errc::invalid_argument, "selection needs a non-empty batch");
  if (!(cfg.epsilon >= 0)) throw Error(Errc::invalid_argument, "epsilon must be >= 0");
  SelectionResult out;
  out.table.resize(s_vis.size());
  for (std::size_t i = 0; i < s_vis.size(); ++i) {
    out.table[i].index = i;
    out.table[i].s_vis = s_vis[i];
  }
  out.visit_order.resize(s_vis.size());
  std::iota(out.visit_order.begin(), out.visit_order.end(), std::size_t{0});
  // NaN plausibility sorts last so a broken score never wins the ranking.
  std::stable_sort(out.visit_order.begin(), out.visit_order.end(), [&](std::size_t a, std::size_t b) {
    const bool na = std::isnan(s_vis[a]), nb = std::isnan(s_vis[b]);
    if (na || nb) return !na && nb;
    return s_vis[a] < s_vis[b];
  });

  const std::size_t budget = std::min(s_vis.size(), cfg.max_evaluated.value_or(s_vis.size()));
  for (std::size_t rank = 0; rank < budget; ++rank) {
    ScoredRollout& row = out.table[out.visit_order[rank]];
    ++out.spatial_evaluations;
    try {
      auto [score, lifted] = spatial(row.index);
      row.s_spatial = score;
      row.lifted = std::move(lifted);
    } catch (const Error& e) {
      row.s_spatial = std::numeric_limits<double>::infinity();
      row.error = std::string(to_string(e.code())) + ": " + e.what();
    }
    if (*row.s_spatial <= cfg.epsilon) {
      row.accepted = true;
      out.selected = row.index;
      return out;
    }
  }

  if (cfg.fallback == Fallback::error) {
    std::ostringstream msg;
    msg << "no candidate within epsilon " << cfg.epsilon << "; evaluated";
    for (std::size_t rank = 0; rank < budget; ++rank) {
      const auto& row = out.table[out.visit_order[rank]];
      msg << " [" << row.index << "]=" << *row.s_spatial;
    }
    throw Error(Errc::selection_failure, msg.str());
  }
  std::optional<std::size_t> best;
  for (std::size_t rank = 0; rank < budget; ++rank) {
    const auto& row = out.table[out.visit_order[rank]];
    if (!best || *row.s_spatial < *out.table[*best].s_spatial) best = row.index;
  }
  out.selected = best;
  out.fallback = true;
  return out;
}

std::vector<double> score_batch(const std::vector<Rollout>& batch, const LatentWorldModel& wm, std::size_t jobs) {
  std::vector<double> s(batch.size());
  parallel_for(batch.size(), jobs, [&](std::size_t i) { s[i] = visual_plausibility(batch[i].frames, wm); });
  return s;
}

SelectionResult select(const std::vector<Rollout>& batch, const SceneDoc& scene, const BoundConstraintSet& cs,
                       const LatentWorldModel& wm, const SelectionConfig& cfg, std::size_t jobs) {
  const auto s_vis = score_batch(batch, wm, jobs);
  return select_by_scores(
      s_vis,
      [&](std::size_t i) -> std::pair<double, std::optional<LiftResult>> {
        LiftResult lifted = lift_to_3d(batch[i], scene);
        const double score = aggregate_cost(cs, lifted.trajectory);
        return {score, std::move(lifted)};
      },
      cfg);
}

std::vector<RolloutRecord> selection_records(const SelectionResult& sel, const std::vector<Rollout>& batch) {
  std::vector<RolloutRecord> out;
  out.reserve(sel.table.size());
  for (const auto& row : sel.table) {
    RolloutRecord rec;
    rec.index = row.index;
    rec.s_vis = row.s_vis;
    // A failed lift has no finite score to report; the error says why.
    if (!row.error) rec.s_spatial = row.s_spatial;
    rec.accepted = row.accepted;
    rec.error = row.error;
    if (row.index < batch.size()) rec.injected_mode = batch[row.index].meta.injected_mode;
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace emboalign
