#include "emboalign/retarget.hpp"

#include "emboalign/errors.hpp"

namespace emboalign {

RetargetResult retarget(const KeypointTrajectory& lifted, const SceneDoc& scene,
                        const std::optional<VisibilityMatrix>& visibility) {
  if (lifted.empty()) throw Error(Errc::invalid_argument, "empty keypoint trajectory");
  const auto K = static_cast<Eigen::Index>(scene.keypoint_count());
  const auto idx = scene.grasped_indices();
  if (visibility && (visibility->rows() != static_cast<Eigen::Index>(lifted.size()) || visibility->cols() != K)) {
    throw Error(Errc::invalid_argument, "visibility does not match the trajectory");
  }
  const auto seen = [&](std::size_t t, std::size_t j) {
    return !visibility || (*visibility)(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j));
  };

  RetargetResult out;
  for (std::size_t t = 0; t < lifted.size(); ++t) {
    if (lifted[t].rows() != K) throw FrameError(Errc::invalid_argument, t + 1, "wrong keypoint count");
    Pose obj;
    double residual = 0;
    if (t > 0) {
      std::vector<std::size_t> shared;
      for (std::size_t j : idx) {
        if (seen(0, j) && seen(t, j)) shared.push_back(j);
      }
      if (shared.size() < 3) {
        throw FrameError(Errc::too_few_points, t + 1,
                         std::to_string(shared.size()) + " grasped keypoints visible in frames 1 and " +
                             std::to_string(t + 1));
      }
      Points3 src(static_cast<Eigen::Index>(shared.size()), 3), dst(src.rows(), 3);
      for (std::size_t i = 0; i < shared.size(); ++i) {
        src.row(static_cast<Eigen::Index>(i)) = lifted[0].row(static_cast<Eigen::Index>(shared[i]));
        dst.row(static_cast<Eigen::Index>(i)) = lifted[t].row(static_cast<Eigen::Index>(shared[i]));
      }
      try {
        const RigidFit fit = fit_rigid(src, dst);
        obj = fit.pose;
        residual = fit.rms_residual;
      } catch (const Error& e) {
        throw FrameError(e.code(), t + 1, e.what());
      }
    }
    out.object_poses.push_back(obj);
    out.initial_trajectory.push_back(compose(obj, scene.grasp_transform));
    out.residuals.push_back(residual);
  }
  return out;
}

KeypointConfig gripper_keypoints(const Pose& xi, const SceneDoc& scene) {
  KeypointConfig k = scene.initial_keypoints();
  const Pose obj = compose(xi, invert(scene.grasp_transform));
  const auto g0 = static_cast<Eigen::Index>(scene.entity_offset(scene.grasped_entity));
  const Points3& g = scene.grasped().keypoints;
  k.middleRows(g0, g.rows()) = apply(obj, g);
  return k;
}

KeypointTrajectory executed_keypoints(const std::vector<Pose>& traj, const SceneDoc& scene) {
  KeypointTrajectory out;
  out.reserve(traj.size());
  for (const auto& xi : traj) out.push_back(gripper_keypoints(xi, scene));
  return out;
}

}  // namespace emboalign
