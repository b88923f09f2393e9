#pragma once

// Synthetic candidate rollouts: a rigid nominal motion per task archetype,
// optional hallucination injection, noisy 2D tracks and affinely distorted
// depth, plus a latent world model used to score visual plausibility.

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "emboalign/constraint_dsl.hpp"
#include "emboalign/documents.hpp"
#include "emboalign/geometry.hpp"
#include "emboalign/tasks.hpp"

namespace emboalign {

enum class HallucinationMode { none, deformation, disappearance, misplacement, wrong_object };

inline constexpr std::array<HallucinationMode, 4> kHallucinationModes = {
    HallucinationMode::deformation, HallucinationMode::disappearance,
    HallucinationMode::misplacement, HallucinationMode::wrong_object};

std::string_view to_string(HallucinationMode m);
/// Throws Error(invalid_argument).
HallucinationMode parse_hallucination_mode(std::string_view name);
/// 0.02 m drift for deformation, 0.08 m offset for misplacement, 0 otherwise.
double default_magnitude(HallucinationMode m);

struct HallucinationSpec {
  HallucinationMode mode = HallucinationMode::none;
  double magnitude = 0;
  /// Frames t (1-based) with t > onset_frac * T are affected.
  double onset_frac = 0.5;
  std::uint64_t seed = 0;
};

struct NoiseParams {
  double track_sigma_px = 0.5;
  double depth_alpha = 1.25;  ///< estimated = (true - beta) / alpha + noise
  double depth_beta = 0.15;
  double depth_sigma = 0.002;
  /// Horizontal imprecision of where the generator puts the object down,
  /// ramped in over the motion. Present on every rollout, hallucinated or not.
  double placement_sigma = 0.01;

  static NoiseParams zero() { return {0.0, 1.0, 0.0, 0.0, 0.0}; }
};

using Tracks = Eigen::Matrix<double, Eigen::Dynamic, 2>;  ///< K x 2 pixels (x, y)
using VisibilityMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct RolloutMeta {
  std::uint64_t seed = 0;
  std::string task;
  std::string injected_mode = "none";
  double magnitude = 0;
  double onset_frac = 0;
};

struct Rollout {
  Eigen::MatrixXd frames;       ///< T x F latent features, F = 3K + 1
  std::vector<Tracks> tracks;   ///< T entries
  Eigen::MatrixXd depth;        ///< T x K estimated depth at each tracked point
  Image depth_frame1;           ///< H x W estimated depth of frame 1
  VisibilityMatrix visibility;  ///< T x K
  RolloutMeta meta;

  std::size_t steps() const { return static_cast<std::size_t>(frames.rows()); }
  std::size_t keypoints() const { return static_cast<std::size_t>(visibility.cols()); }
  /// Shapes agree and visible tracks lie inside the image; Error(invalid_argument).
  void validate(const Intrinsics& intr) const;
};

struct GeneratedRollout {
  Rollout rollout;
  KeypointTrajectory truth;        ///< depicted world keypoints, before sensor noise
  std::vector<Pose> object_poses;  ///< grasped entity, frame 1 -> t
  std::vector<Pose> ee_path;       ///< object_poses[t] * T_grasp
};

/// Deterministic in (scene, task, spec, noise, steps). Requires steps >= 8.
/// Throws Error(behind_camera) when a keypoint comes within 5 cm of the
/// camera plane.
GeneratedRollout generate_rollout(const SceneDoc& scene, TaskTemplate task, const HallucinationSpec& spec,
                                  const NoiseParams& noise, std::size_t steps);

/// How a batch is corrupted: each candidate is hallucinated with probability
/// `rate`, with a mode drawn uniformly from `modes`.
struct HallucinationMix {
  double rate = 0.5;
  std::vector<HallucinationMode> modes{kHallucinationModes.begin(), kHallucinationModes.end()};
  double deformation_magnitude = 0.02;
  double misplacement_magnitude = 0.08;
};

/// Spec for one candidate; onset is uniform in [0.2, 0.5] and `seed` becomes
/// the rollout seed.
HallucinationSpec sample_hallucination(const HallucinationMix& mix, std::uint64_t seed);

void save_rollout(const Rollout& r, const std::filesystem::path& dir);
Rollout load_rollout(const std::filesystem::path& dir);

struct WorldModelParams {
  std::size_t context = 4;  ///< C
  std::size_t horizon = 2;  ///< M
  std::size_t stride = 1;
  std::size_t latent_dim = 32;  ///< d
};

/// Encoder/predictor pair scored by `visual_plausibility`. Windows are frame
/// matrices with one frame per row.
class LatentWorldModel {
 public:
  virtual ~LatentWorldModel() = default;
  virtual Eigen::VectorXd encode(const Eigen::MatrixXd& window) const = 0;
  /// Latent of the context window extended by `horizon` predicted frames.
  virtual Eigen::VectorXd predict(const Eigen::MatrixXd& context, std::size_t horizon) const = 0;
  virtual const WorldModelParams& params() const = 0;
};

/// Encode: mean frame times a fixed seeded orthonormal F x d map. Predict:
/// per-frame encodings are extrapolated at the velocity of the last two
/// context frames, and the result is the mean over context plus future.
class ToyWorldModel final : public LatentWorldModel {
 public:
  ToyWorldModel(std::size_t feature_dim, const WorldModelParams& params, std::uint64_t seed);
  Eigen::VectorXd encode(const Eigen::MatrixXd& window) const override;
  Eigen::VectorXd predict(const Eigen::MatrixXd& context, std::size_t horizon) const override;
  const WorldModelParams& params() const override { return params_; }
  const Eigen::MatrixXd& map() const { return map_; }

 private:
  WorldModelParams params_;
  Eigen::MatrixXd map_;  ///< F x d
};

/// Mean over anchors s = C, C + stride, ..., T - M of one minus the cosine
/// between predict(frames s-C+1..s, M) and encode(frames s-C+1..s+M).
/// A zero-norm latent contributes 1. Error(window_too_short) without anchors.
double visual_plausibility(const Eigen::MatrixXd& frames, const LatentWorldModel& wm);

}  // namespace emboalign
