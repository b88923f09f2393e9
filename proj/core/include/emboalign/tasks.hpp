#pragma once

// The six synthetic task archetypes: scene layouts and the nominal rigid
// motion each one asks of the grasped entity.

#include <array>
#include <string_view>
#include <vector>

#include "emboalign/documents.hpp"
#include "emboalign/geometry.hpp"

namespace emboalign {

enum class TaskTemplate { stack, press, hammer, place, open, pour };

inline constexpr std::array<TaskTemplate, 6> kAllTasks = {
    TaskTemplate::stack, TaskTemplate::press, TaskTemplate::hammer,
    TaskTemplate::place, TaskTemplate::open,  TaskTemplate::pour};

std::string_view to_string(TaskTemplate t);
/// Throws Error(unknown_template).
TaskTemplate parse_task_template(std::string_view name);

/// Object displacement at normalized time u, relative to frame 1: points move
/// as k -> pivot + translation + R(rotvec) (k - pivot).
struct MotionKey {
  double u = 0;
  Vec3 translation = Vec3::Zero();
  Vec3 rotvec = Vec3::Zero();
};

struct TaskMotion {
  Vec3 pivot = Vec3::Zero();
  std::vector<MotionKey> keys;  ///< sorted by u, first key at u = 0 is the identity
  /// Time at which the object comes to rest; held until u = 1.
  double settle_u() const { return keys.back().u; }
};

TaskMotion task_motion(TaskTemplate t, const SceneDoc& scene);

/// Cubic ease 3s^2 - 2s^3 on [0, 1], clamped outside.
double ease(double s);

/// Rigid delta mapping frame-1 object keypoints to their position at time u.
/// Each segment between keys is cubic-eased; rotation is slerped.
Pose object_pose_at(const TaskMotion& m, double u);

/// Reference depth of the table plane z = 0 seen through the scene camera;
/// pixels whose ray misses the plane within 10 m are 0.
Image render_table_depth(const Intrinsics& intr, const Pose& world_from_camera);

/// Fully populated scene for the archetype, including rendered depth.
/// `depth_path` is set to "depth.eatn".
SceneDoc build_task_scene(TaskTemplate t);

}  // namespace emboalign
