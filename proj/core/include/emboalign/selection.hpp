#pragma once

// Lifting rollout tracks to metric 3D keypoints, the spatial score, and the
// lexicographic selection rule: rank by plausibility, accept the first
// candidate whose spatial cost is within epsilon.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "emboalign/constraint_dsl.hpp"
#include "emboalign/documents.hpp"
#include "emboalign/rollout.hpp"

namespace emboalign {

struct LiftResult {
  KeypointTrajectory trajectory;  ///< world frame
  DepthCalibration calibration;
  VisibilityMatrix visibility;
};

/// Calibrates the rollout's frame-1 depth against the scene depth once, then
/// back-projects every visible track with alpha * depth + beta. Points that are
/// not visible keep their last visible 3D position, or the scene's frame-1
/// position if never seen. FrameError(all_points_invisible) names the frame.
LiftResult lift_to_3d(const Rollout& r, const SceneDoc& scene);

/// Aggregate cost of the lifted trajectory.
double spatial_score(const Rollout& r, const SceneDoc& scene, const BoundConstraintSet& cs);

enum class Fallback { best_spatial, error };

std::string_view to_string(Fallback f);
Fallback parse_fallback(std::string_view name);

struct SelectionConfig {
  double epsilon = 1e-2;
  std::optional<std::size_t> max_evaluated;
  Fallback fallback = Fallback::best_spatial;
};

struct ScoredRollout {
  std::size_t index = 0;
  double s_vis = 0;
  std::optional<double> s_spatial;
  bool accepted = false;
  std::optional<std::string> error;  ///< why the spatial evaluation failed
  std::optional<LiftResult> lifted;
};

struct SelectionResult {
  std::vector<ScoredRollout> table;  ///< in batch index order
  std::vector<std::size_t> visit_order;
  std::optional<std::size_t> selected;
  bool fallback = false;
  std::size_t spatial_evaluations = 0;
};

/// Spatial evaluation callback: returns the score and optionally the lift.
/// Throwing an Error marks the candidate as failed with an infinite score.
using SpatialFn = std::function<std::pair<double, std::optional<LiftResult>>(std::size_t)>;

/// Selection over precomputed plausibility scores. Visits candidates in
/// ascending s_vis (ties by index), stops at the first s_spatial <= epsilon.
/// Throws Error(selection_failure) when nothing passes and fallback is error.
SelectionResult select_by_scores(const std::vector<double>& s_vis, const SpatialFn& spatial,
                                 const SelectionConfig& cfg);

/// Plausibility of every candidate, computed on up to `jobs` threads.
std::vector<double> score_batch(const std::vector<Rollout>& batch, const LatentWorldModel& wm, std::size_t jobs = 1);

SelectionResult select(const std::vector<Rollout>& batch, const SceneDoc& scene, const BoundConstraintSet& cs,
                       const LatentWorldModel& wm, const SelectionConfig& cfg, std::size_t jobs = 1);

/// Report rows for the selection table (lifted trajectories are dropped).
std::vector<RolloutRecord> selection_records(const SelectionResult& sel, const std::vector<Rollout>& batch);

}  // namespace emboalign
