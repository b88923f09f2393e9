#pragma once

// Trajectory refinement: squared-hinge constraint penalty plus a fidelity
// term to the initial trajectory, minimized over box-normalized pose
// variables by projected BFGS with finite-difference gradients.

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "emboalign/constraint_dsl.hpp"
#include "emboalign/documents.hpp"

namespace emboalign {

/// Translation box from the scene workspace; rotation vectors live in [-pi, pi]^3.
/// Each pose becomes 6 numbers in [0, 1]: translation then rotation vector.
struct VariableBounds {
  Aabb translation;
};

struct EncodeReport {
  std::size_t clamped = 0;  ///< coordinates pulled back into [0, 1]
};

/// Poses further than 1% of the box width outside raise Error(pose_out_of_bounds);
/// smaller excursions are clamped and counted.
Eigen::VectorXd encode_variables(const std::vector<Pose>& traj, const VariableBounds& b,
                                 EncodeReport* report = nullptr);
std::vector<Pose> decode_variables(const Eigen::VectorXd& x, const VariableBounds& b);

struct SolverParams {
  std::size_t max_iters = 200;
  double grad_step = 1e-6;       ///< central-difference step, normalized units
  double tol_obj = 1e-12;        ///< stop when one step improves less than this
  double tol_grad = 1e-8;        ///< stop when the projected gradient is smaller (inf-norm)
  double tol_violation = 1e-9;   ///< with a small gradient: violation considered repaired
  std::size_t line_search_budget = 40;
  std::size_t restarts = 0;      ///< extra starts jittered within 1% of the box
  std::uint64_t restart_seed = 0;
};

/// Keypoints carried by the gripper: the grasped entity's frame-1 points
/// follow xi * inverse(T_grasp), the rest of the scene is static.
struct GripperModel {
  KeypointConfig base;
  Points3 grasped;
  Eigen::Index offset = 0;
  Pose grasp_inverse;

  static GripperModel from_scene(const SceneDoc& scene);
  KeypointConfig keypoints(const Pose& xi) const;
};

struct OptProblem {
  std::vector<Pose> initial;
  BoundConstraintSet constraints;
  GripperModel gripper;
  VariableBounds bounds;
  double lambda = 0.1;
  double rot_weight = 1.0;  ///< radians^2 counted as rot_weight meters^2
  SolverParams solver;

  static OptProblem make(const std::vector<Pose>& initial, const BoundConstraintSet& cs, const SceneDoc& scene);
};

struct ObjectiveTerms {
  double total = 0;       ///< constraint + lambda * fidelity
  double constraint = 0;  ///< aggregate squared hinge
  double fidelity = 0;    ///< sum_t |dt|^2 + rot_weight |drotvec|^2, unweighted by lambda
  double max_violation = 0;
};

ObjectiveTerms objective_terms(const Eigen::VectorXd& x, const OptProblem& p);
double objective(const Eigen::VectorXd& x, const OptProblem& p);
/// Central differences with step p.solver.grad_step in every coordinate.
Eigen::VectorXd objective_gradient(const Eigen::VectorXd& x, const OptProblem& p);

struct OptResult {
  std::vector<Pose> trajectory;
  std::vector<TraceEntry> trace;  ///< entry 0 is the starting point
  bool converged = true;
  std::size_t iterations = 0;
  std::size_t clamped = 0;
};

/// Starts from the encoded initial trajectory. Timesteps are independent
/// blocks unless a constraint reads the previous frame. Blocks whose start is
/// already optimal (objective exactly 0) are returned untouched.
OptResult solve(const OptProblem& p);

void write_trace_csv(const std::vector<TraceEntry>& trace, const std::filesystem::path& path);

}  // namespace emboalign
