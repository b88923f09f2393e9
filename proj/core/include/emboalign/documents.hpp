#pragma once

// JSON documents shared by the pipeline stages: scene, constraint set, report.
// Loaders validate every invariant and raise SchemaError with a field path.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emboalign/constraint_dsl.hpp"
#include "emboalign/geometry.hpp"
#include "emboalign/tensorio.hpp"

namespace emboalign {

struct Entity {
  std::string id;
  Points3 keypoints;  ///< frame-1 positions, world frame
  std::optional<std::string> mask_path;
};

struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Ones();
};

struct SceneDoc {
  std::string task;  ///< optional motion template name
  Intrinsics intrinsics;
  /// world_from_camera; identity means the world frame is the camera frame.
  Pose camera_pose;
  std::vector<Entity> entities;
  std::string grasped_entity;
  Pose grasp_transform;
  Aabb workspace;
  std::string depth_path;  ///< as written in the document
  Image depth;             ///< reference depth D, H x W meters

  std::size_t keypoint_count() const;
  /// Global index of the entity's first keypoint (entities concatenated in order).
  std::size_t entity_offset(const std::string& id) const;
  const Entity& entity(const std::string& id) const;
  const Entity& grasped() const { return entity(grasped_entity); }
  std::vector<std::size_t> grasped_indices() const;
  /// All keypoints concatenated in entity order.
  KeypointConfig initial_keypoints() const;

  /// Throws SchemaError on any broken invariant.
  void validate() const;
};

nlohmann::json scene_to_json(const SceneDoc& scene);
/// `base_dir` resolves a relative depth_path; the depth tensor is loaded when
/// `load_depth` is set.
SceneDoc scene_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir,
                         bool load_depth = true);
SceneDoc load_scene(const std::filesystem::path& path);
/// Writes the document and the depth tensor next to it (at depth_path).
void save_scene(const SceneDoc& scene, const std::filesystem::path& path);

nlohmann::json constraints_to_json(const ConstraintSet& cs);
ConstraintSet constraints_from_json(const nlohmann::json& j);
ConstraintSet load_constraints(const std::filesystem::path& path);
void save_constraints(const ConstraintSet& cs, const std::filesystem::path& path);

nlohmann::json pose_to_json(const Pose& p);
Pose pose_from_json(const nlohmann::json& j, const std::string& path);

struct RolloutRecord {
  std::size_t index = 0;
  double s_vis = 0;
  std::optional<double> s_spatial;  ///< absent when not evaluated
  bool accepted = false;
  std::string injected_mode;          ///< generator metadata, may be empty
  std::optional<std::string> error;   ///< lift failure that rejected the candidate
};

struct TraceEntry {
  std::size_t iteration = 0;
  double objective = 0;
  double constraint_term = 0;
  double fidelity_term = 0;
  double max_violation = 0;
};

struct EpisodeSummary {
  bool success = false;
  double final_violation = 0;
  std::string failure_category;  ///< empty on success
};

struct ReportDoc {
  std::vector<RolloutRecord> rollouts;
  std::optional<std::size_t> selected_index;
  bool fallback = false;

  std::optional<double> calibration_alpha;
  std::optional<double> calibration_beta;
  std::vector<double> retarget_residuals;
  std::vector<Pose> initial_trajectory;

  std::vector<TraceEntry> trace;
  std::optional<bool> converged;
  std::size_t iterations = 0;
  std::vector<Pose> final_trajectory;

  std::optional<EpisodeSummary> outcome;

  /// Exactly one accepted record unless `fallback` is set.
  void validate() const;
};

nlohmann::json report_to_json(const ReportDoc& r);
ReportDoc report_from_json(const nlohmann::json& j);
ReportDoc load_report(const std::filesystem::path& path);
void save_report(const ReportDoc& r, const std::filesystem::path& path);

/// Reads a whole JSON file; SchemaError(json_parse) on malformed text.
nlohmann::json read_json_file(const std::filesystem::path& path);
/// Stable formatting (2-space indent, trailing newline) so equal documents
/// give equal bytes.
void write_json_file(const nlohmann::json& j, const std::filesystem::path& path);

/// Trajectory as a T x 7 tensor: translation xyz, quaternion wxyz.
Tensor trajectory_to_tensor(const std::vector<Pose>& traj);
std::vector<Pose> trajectory_from_tensor(const Tensor& t);

Image image_from_tensor(const Tensor& t);
Tensor tensor_from_image(const Image& img);

}  // namespace emboalign
