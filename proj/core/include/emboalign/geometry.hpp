#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace emboalign {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
/// One point per row.
using Points3 = Eigen::Matrix<double, Eigen::Dynamic, 3>;
/// Row-major H x W image (row = y, column = x).
using Image = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Rigid transform in SE(3): p -> R p + t.
class Pose {
 public:
  Pose() = default;
  /// Throws Error(invalid_argument) unless R is orthonormal with det +1 (1e-9).
  Pose(const Mat3& rotation, const Vec3& translation);

  static Pose identity() { return {}; }
  static Pose from_rotation_vector(const Vec3& rotvec, const Vec3& translation = Vec3::Zero());
  /// Quaternion is normalized; a zero quaternion is an error.
  static Pose from_quaternion(double w, double x, double y, double z,
                              const Vec3& translation = Vec3::Zero());
  static Pose from_translation(const Vec3& translation) {
    return from_rotation_vector(Vec3::Zero(), translation);
  }

  const Mat3& rotation() const noexcept { return rotation_; }
  const Vec3& translation() const noexcept { return translation_; }

  /// Axis-angle vector with angle in [0, pi]. At exactly pi the axis is
  /// chosen with its first nonzero component positive.
  Vec3 rotation_vector() const;
  /// Unit quaternion (w, x, y, z) with w >= 0.
  Eigen::Vector4d quaternion_wxyz() const;

  bool is_valid(double tol = 1e-9) const;

 private:
  Mat3 rotation_ = Mat3::Identity();
  Vec3 translation_ = Vec3::Zero();
};

Pose compose(const Pose& a, const Pose& b);
Pose invert(const Pose& a);
Vec3 apply(const Pose& a, const Vec3& p);
/// Applies the pose to every row.
Points3 apply(const Pose& a, const Points3& points);

/// Geodesic angle between two rotations, radians.
double rotation_distance(const Mat3& a, const Mat3& b);

struct Intrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  /// Throws Error(invalid_argument) when the invariants do not hold.
  void validate() const;
  bool contains(const Vec2& px) const;
};

Vec3 back_project(const Vec2& px, double depth, const Intrinsics& intr);
Vec2 project(const Vec3& p, const Intrinsics& intr);

struct RigidFit {
  Pose pose;
  /// sqrt(sum_j w_j |R src_j + t - dst_j|^2 / sum_j w_j), meters.
  double rms_residual = 0;
};

/// Weighted least-squares rigid alignment src -> dst (no scale), with the
/// reflection-correcting sign on the SVD.
RigidFit fit_rigid(const Points3& src, const Points3& dst,
                   std::optional<std::span<const double>> weights = std::nullopt);

struct DepthCalibration {
  double alpha = 1;  ///< scale
  double beta = 0;   ///< shift, meters

  double apply(double estimated) const { return alpha * estimated + beta; }
};

/// Reference pixels with depth in (0, 10] meters.
Mask default_depth_validity(const Image& reference);

/// Least-squares (alpha, beta) minimizing sum over valid pixels of
/// (alpha * estimated + beta - reference)^2.
DepthCalibration calibrate_depth(const Image& estimated, const Image& reference, const Mask& valid);

/// The four axis extrema of the mask (min-x, max-x, min-y, max-y; ties go to
/// the lower other coordinate) followed by `n_interior` uniform samples of
/// pixels whose 4-neighborhood lies inside the mask. Returned as (x, y).
std::vector<Vec2> sample_keypoints(const Mask& mask, std::size_t n_interior, std::uint64_t seed);

}  // namespace emboalign
