#include "emboalign/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>

#include "emboalign/errors.hpp"

namespace emboalign {
namespace {

Points3 points(std::initializer_list<Vec3> pts) {
  Points3 out(static_cast<Eigen::Index>(pts.size()), 3);
  Eigen::Index r = 0;
  for (const auto& p : pts) out.row(r++) = p.transpose();
  return out;
}

Pose look_at(const Vec3& eye, const Vec3& target) {
  const Vec3 forward = (target - eye).normalized();
  const Vec3 right = forward.cross(Vec3::UnitZ()).normalized();
  const Vec3 down = forward.cross(right);
  Mat3 r;
  r.col(0) = right;
  r.col(1) = down;
  r.col(2) = forward;
  const Eigen::Quaterniond q(r);
  return Pose::from_quaternion(q.w(), q.x(), q.y(), q.z(), eye);
}

// Rigid delta that moves `from` onto `to` with rotation `rotvec` about `pivot`.
Vec3 translation_for(const Vec3& pivot, const Vec3& rotvec, const Vec3& from, const Vec3& to) {
  const Pose r = Pose::from_rotation_vector(rotvec);
  return to - (pivot + r.rotation() * (from - pivot));
}

const Vec3 kGraspRotvec(0.3, -0.2, 0.1);

Vec3 centroid(const Points3& p) { return p.colwise().mean().transpose(); }

}  // namespace

std::string_view to_string(TaskTemplate t) {
  switch (t) {
    case TaskTemplate::stack: return "stack";
    case TaskTemplate::press: return "press";
    case TaskTemplate::hammer: return "hammer";
    case TaskTemplate::place: return "place";
    case TaskTemplate::open: return "open";
    case TaskTemplate::pour: return "pour";
  }
  return "unknown";
}

TaskTemplate parse_task_template(std::string_view name) {
  for (auto t : kAllTasks) {
    if (to_string(t) == name) return t;
  }
  throw Error(Errc::unknown_template, "unknown task template '" + std::string(name) + "'");
}

double ease(double s) {
  s = std::clamp(s, 0.0, 1.0);
  return s * s * (3.0 - 2.0 * s);
}

Pose object_pose_at(const TaskMotion& m, double u) {
  if (m.keys.empty()) return Pose::identity();
  const MotionKey* a = &m.keys.front();
  const MotionKey* b = a;
  if (u >= m.keys.back().u) {
    a = b = &m.keys.back();
  } else {
    for (std::size_t i = 0; i + 1 < m.keys.size(); ++i) {
      if (u >= m.keys[i].u && u < m.keys[i + 1].u) {
        a = &m.keys[i];
        b = &m.keys[i + 1];
        break;
      }
    }
  }
  const double s = (b->u > a->u) ? ease((u - a->u) / (b->u - a->u)) : 1.0;
  const Vec3 d = (1 - s) * a->translation + s * b->translation;
  const auto qa = Eigen::Quaterniond(Pose::from_rotation_vector(a->rotvec).rotation());
  const auto qb = Eigen::Quaterniond(Pose::from_rotation_vector(b->rotvec).rotation());
  const Eigen::Quaterniond q = qa.slerp(s, qb);
  const Mat3 r = q.toRotationMatrix();
  return Pose::from_quaternion(q.w(), q.x(), q.y(), q.z(), m.pivot + d - r * m.pivot);
}

TaskMotion task_motion(TaskTemplate t, const SceneDoc& scene) {
  const Points3& g = scene.grasped().keypoints;
  TaskMotion m;
  m.keys.push_back({0.0, Vec3::Zero(), Vec3::Zero()});
  switch (t) {
    case TaskTemplate::stack: {
      // Lift, carry over the base block, lower until the bottom rests on its top.
      m.pivot = centroid(g);
      const Vec3 bottom = g.row(0).transpose();
      const Vec3 base_top = scene.entity("red_block").keypoints.row(0).transpose();
      const Vec3 goal = base_top - bottom;
      m.keys.push_back({0.25, Vec3(0, 0, 0.12), Vec3::Zero()});
      m.keys.push_back({0.5, Vec3(goal.x(), goal.y(), 0.12), Vec3::Zero()});
      m.keys.push_back({0.7, goal, Vec3::Zero()});
      break;
    }
    case TaskTemplate::press: {
      // Rotate the arm about its hinge until the tip sits just above the anvil.
      m.pivot = g.row(0).transpose();
      const Vec3 tip = g.row(2).transpose() - m.pivot;
      const double anvil_z = scene.entity("stapler_base").keypoints(1, 2);
      const double target_rel_z = anvil_z + 0.012 - m.pivot.z();
      const double reach = std::hypot(tip.x(), tip.z());
      const double angle = std::atan2(tip.z(), tip.x()) - std::asin(target_rel_z / reach);
      m.keys.push_back({0.7, Vec3::Zero(), Vec3(0, angle, 0)});
      break;
    }
    case TaskTemplate::hammer: {
      // Wind up over the block, then strike its top with the face.
      m.pivot = g.row(0).transpose();
      const Vec3 face = g.row(3).transpose();
      const Vec3 target = scene.entity("block").keypoints.row(0).transpose();
      const Vec3 windup(0, -0.25, 0);
      m.keys.push_back({0.45, translation_for(m.pivot, windup, face, target + Vec3(0, 0, 0.12)), windup});
      m.keys.push_back({0.7, target - face, Vec3::Zero()});
      break;
    }
    case TaskTemplate::place: {
      // Up and over the bottle, then down onto the target pad.
      m.pivot = centroid(g);
      const Vec3 goal = scene.entity("target").keypoints.row(0).transpose() - g.row(0).transpose();
      m.keys.push_back({0.2, Vec3(0, 0, 0.25), Vec3::Zero()});
      m.keys.push_back({0.5, Vec3(goal.x(), goal.y(), 0.25), Vec3::Zero()});
      m.keys.push_back({0.7, goal, Vec3::Zero()});
      break;
    }
    case TaskTemplate::open: {
      m.pivot = centroid(g);
      m.keys.push_back({0.7, Vec3(0, 0, 0.12), Vec3::Zero()});
      break;
    }
    case TaskTemplate::pour: {
      // Carry the cup above the bowl, then tip it until the spout points down.
      m.pivot = g.row(1).transpose();
      const Vec3 spout = g.row(2).transpose();
      const Vec3 bowl = scene.entity("bowl").keypoints.row(0).transpose();
      const Vec3 tilt(0, 1.75, 0);
      const Pose r = Pose::from_rotation_vector(tilt);
      const Vec3 spout_off = r.rotation() * (spout - m.pivot);
      const Vec3 rim_goal(bowl.x() - spout_off.x(), bowl.y() - spout_off.y(), 0.20);
      const Vec3 carry = rim_goal - m.pivot;
      m.keys.push_back({0.4, carry, Vec3::Zero()});
      m.keys.push_back({0.7, carry, tilt});
      break;
    }
  }
  return m;
}

Image render_table_depth(const Intrinsics& intr, const Pose& world_from_camera) {
  Image depth = Image::Zero(intr.height, intr.width);
  const Mat3& r = world_from_camera.rotation();
  const Vec3& c = world_from_camera.translation();
  for (int y = 0; y < intr.height; ++y) {
    for (int x = 0; x < intr.width; ++x) {
      const Vec3 ray_cam((x - intr.cx) / intr.fx, (y - intr.cy) / intr.fy, 1.0);
      const double dz = (r * ray_cam).z();
      if (dz >= 0) continue;
      const double s = -c.z() / dz;  // ray has unit camera-z, so s is the depth
      if (s > 0 && s <= 10.0) depth(y, x) = s;
    }
  }
  return depth;
}

SceneDoc build_task_scene(TaskTemplate t) {
  SceneDoc s;
  s.task = std::string(to_string(t));
  s.intrinsics = {300.0, 300.0, 160.0, 120.0, 320, 240};
  s.camera_pose = look_at(Vec3(0.0, -0.5, 0.8), Vec3(0.0, 0.08, 0.05));
  s.workspace = {Vec3(-0.5, -0.4, -0.1), Vec3(0.5, 0.5, 0.6)};
  s.depth_path = "depth.eatn";
  Vec3 grasp_point;
  switch (t) {
    case TaskTemplate::stack:
      s.entities = {
          {"green_block",
           points({{-0.12, 0.0, 0.0}, {-0.14, -0.02, 0.04}, {-0.10, -0.02, 0.04}, {-0.10, 0.02, 0.04}, {-0.14, 0.02, 0.04}}),
           {}},
          {"red_block", points({{0.10, 0.08, 0.05}, {0.125, 0.105, 0.05}, {0.075, 0.055, 0.05}, {0.10, 0.08, 0.0}}), {}},
      };
      grasp_point = {-0.12, 0.0, 0.04};
      break;
    case TaskTemplate::press:
      s.entities = {
          {"stapler_arm",
           points({{-0.08, 0.06, 0.06}, {0.0, 0.06, 0.0825}, {0.08, 0.06, 0.105}, {0.0, 0.08, 0.0825}, {0.0, 0.04, 0.0825}}),
           {}},
          {"stapler_base", points({{-0.08, 0.06, 0.03}, {0.08, 0.06, 0.03}, {0.0, 0.06, 0.0}}), {}},
      };
      grasp_point = {0.06, 0.06, 0.10};
      break;
    case TaskTemplate::hammer:
      s.entities = {
          {"hammer",
           points({{-0.25, -0.02, 0.12}, {-0.16, -0.02, 0.12}, {-0.07, -0.02, 0.12}, {-0.07, -0.02, 0.095}, {-0.07, 0.0, 0.12}}),
           {}},
          {"block", points({{0.12, 0.08, 0.04}, {0.14, 0.10, 0.04}, {0.12, 0.08, 0.0}}), {}},
      };
      grasp_point = {-0.20, -0.02, 0.12};
      break;
    case TaskTemplate::place:
      s.entities = {
          {"block",
           points({{-0.2, 0.02, 0.0}, {-0.22, 0.0, 0.04}, {-0.18, 0.0, 0.04}, {-0.18, 0.04, 0.04}, {-0.22, 0.04, 0.04}}),
           {}},
          {"target", points({{0.2, 0.02, 0.0}, {0.23, 0.05, 0.0}}), {}},
          {"bottle", points({{0.0, 0.02, 0.0}, {0.0, 0.02, 0.2}}), {}},
      };
      grasp_point = {-0.2, 0.02, 0.04};
      break;
    case TaskTemplate::open:
      s.entities = {
          {"lid",
           points({{0.0, 0.05, 0.085}, {0.0, 0.05, 0.10}, {0.05, 0.05, 0.085}, {0.0, 0.10, 0.085}, {-0.05, 0.05, 0.085}}),
           {}},
          {"container", points({{0.0, 0.05, 0.08}, {0.05, 0.05, 0.08}, {0.0, 0.05, 0.0}}), {}},
      };
      grasp_point = {0.0, 0.05, 0.10};
      break;
    case TaskTemplate::pour:
      s.entities = {
          {"cup", points({{-0.15, 0.05, 0.0}, {-0.15, 0.05, 0.10}, {-0.12, 0.05, 0.10}, {-0.15, 0.08, 0.10}}), {}},
          {"bowl", points({{0.10, 0.08, 0.02}, {0.16, 0.08, 0.06}, {0.04, 0.08, 0.06}}), {}},
      };
      grasp_point = {-0.15, 0.05, 0.07};
      break;
  }
  s.grasped_entity = s.entities.front().id;
  s.grasp_transform = Pose::from_rotation_vector(kGraspRotvec, grasp_point);
  s.depth = render_table_depth(s.intrinsics, s.camera_pose);
  s.validate();
  return s;
}

}  // namespace emboalign
