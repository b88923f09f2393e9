#pragma once

// Object-pose recovery from a lifted keypoint trajectory and the fixed grasp
// transform that turns object motion into end-effector poses.

#include <optional>
#include <vector>

#include "emboalign/constraint_dsl.hpp"
#include "emboalign/documents.hpp"
#include "emboalign/rollout.hpp"

namespace emboalign {

struct RetargetResult {
  std::vector<Pose> initial_trajectory;  ///< xi_t = T_obj_t * T_grasp
  std::vector<Pose> object_poses;        ///< T_obj_t, frame 1 -> frame t
  std::vector<double> residuals;         ///< rms rigid-fit residual per frame, meters
};

/// Fits frame 1 -> frame t on the grasped keypoints visible in both frames.
/// Without a visibility matrix every keypoint counts as visible. Fewer than 3
/// shared keypoints, or a degenerate set, raises FrameError naming the frame.
RetargetResult retarget(const KeypointTrajectory& lifted, const SceneDoc& scene,
                        const std::optional<VisibilityMatrix>& visibility = std::nullopt);

/// Scene keypoints with the grasped entity carried by the end-effector pose:
/// grasped points move by xi * inverse(T_grasp), everything else stays put.
KeypointConfig gripper_keypoints(const Pose& xi, const SceneDoc& scene);

/// gripper_keypoints over a whole trajectory.
KeypointTrajectory executed_keypoints(const std::vector<Pose>& traj, const SceneDoc& scene);

}  // namespace emboalign
