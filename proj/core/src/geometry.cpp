#include "emboalign/geometry.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "emboalign/errors.hpp"

namespace emboalign {
namespace {

constexpr double kPoseTol = 1e-9;

bool orthonormal(const Mat3& r, double tol) {
  return (r * r.transpose() - Mat3::Identity()).norm() <= tol && std::abs(r.determinant() - 1.0) <= tol;
}

}  // namespace

Pose::Pose(const Mat3& rotation, const Vec3& translation)
    : rotation_(rotation), translation_(translation) {
  if (!rotation.allFinite() || !translation.allFinite()) {
    throw Error(Errc::invalid_argument, "pose has non-finite entries");
  }
  if (!orthonormal(rotation, kPoseTol)) {
    throw Error(Errc::invalid_argument, "pose rotation is not a proper orthonormal matrix");
  }
}

Pose Pose::from_rotation_vector(const Vec3& rotvec, const Vec3& translation) {
  Pose p;
  const double angle = rotvec.norm();
  if (angle > 0) p.rotation_ = Eigen::AngleAxisd(angle, rotvec / angle).toRotationMatrix();
  p.translation_ = translation;
  return p;
}

Pose Pose::from_quaternion(double w, double x, double y, double z, const Vec3& translation) {
  Eigen::Quaterniond q(w, x, y, z);
  const double n = q.norm();
  if (!(n > 1e-12) || !std::isfinite(n)) {
    throw Error(Errc::invalid_argument, "quaternion must be finite and nonzero");
  }
  q.coeffs() /= n;
  Pose p;
  p.rotation_ = q.toRotationMatrix();
  p.translation_ = translation;
  return p;
}

Vec3 Pose::rotation_vector() const {
  const Eigen::AngleAxisd aa(rotation_);
  const double angle = aa.angle();
  if (angle == 0.0) return Vec3::Zero();
  Vec3 axis = aa.axis();
  if (std::numbers::pi - angle < 1e-10) {
    // Antipodal ambiguity: +axis and -axis give the same rotation.
    for (int i = 0; i < 3; ++i) {
      if (std::abs(axis[i]) > 1e-12) {
        if (axis[i] < 0) axis = -axis;
        break;
      }
    }
  }
  return axis * angle;
}

Eigen::Vector4d Pose::quaternion_wxyz() const {
  Eigen::Quaterniond q(rotation_);
  q.normalize();
  Eigen::Vector4d out(q.w(), q.x(), q.y(), q.z());
  if (out[0] < 0) out = -out;
  return out;
}

bool Pose::is_valid(double tol) const {
  return rotation_.allFinite() && translation_.allFinite() && orthonormal(rotation_, tol);
}

Pose compose(const Pose& a, const Pose& b) {
  const Mat3 r = a.rotation() * b.rotation();
  const Vec3 t = a.rotation() * b.translation() + a.translation();
  const Eigen::Quaterniond q(r);
  // Rebuild through the quaternion path so long products stay orthonormal.
  return Pose::from_quaternion(q.w(), q.x(), q.y(), q.z(), t);
}

Pose invert(const Pose& a) {
  const Mat3 rt = a.rotation().transpose();
  const Eigen::Quaterniond q(rt);
  return Pose::from_quaternion(q.w(), q.x(), q.y(), q.z(), -(rt * a.translation()));
}

Vec3 apply(const Pose& a, const Vec3& p) { return a.rotation() * p + a.translation(); }

Points3 apply(const Pose& a, const Points3& points) {
  Points3 out = points * a.rotation().transpose();
  out.rowwise() += a.translation().transpose();
  return out;
}

double rotation_distance(const Mat3& a, const Mat3& b) {
  return Eigen::AngleAxisd(a.transpose() * b).angle();
}

void Intrinsics::validate() const {
  if (!(fx > 0) || !(fy > 0) || !std::isfinite(fx) || !std::isfinite(fy)) {
    throw Error(Errc::invalid_argument, "intrinsics: focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) throw Error(Errc::invalid_argument, "intrinsics: empty image");
  if (!(cx >= 0 && cx < width) || !(cy >= 0 && cy < height)) {
    throw Error(Errc::invalid_argument, "intrinsics: principal point outside image");
  }
}

bool Intrinsics::contains(const Vec2& px) const {
  return px.x() >= 0 && px.x() < width && px.y() >= 0 && px.y() < height;
}

Vec3 back_project(const Vec2& px, double depth, const Intrinsics& intr) {
  if (!(depth > 0) || !std::isfinite(depth)) {
    throw Error(Errc::non_positive_depth, "back_project: depth must be positive");
  }
  if (!intr.contains(px)) throw Error(Errc::out_of_bounds, "back_project: pixel outside image");
  return {(px.x() - intr.cx) * depth / intr.fx, (px.y() - intr.cy) * depth / intr.fy, depth};
}

Vec2 project(const Vec3& p, const Intrinsics& intr) {
  if (!(p.z() > 0)) throw Error(Errc::non_positive_depth, "project: point not in front of camera");
  return {intr.fx * p.x() / p.z() + intr.cx, intr.fy * p.y() / p.z() + intr.cy};
}

RigidFit fit_rigid(const Points3& src, const Points3& dst,
                   std::optional<std::span<const double>> weights) {
  const Eigen::Index k = src.rows();
  if (dst.rows() != k) throw Error(Errc::invalid_argument, "fit_rigid: point count mismatch");
  if (k < 3) throw Error(Errc::too_few_points, "fit_rigid: need at least 3 correspondences");
  if (!src.allFinite() || !dst.allFinite()) {
    throw Error(Errc::invalid_argument, "fit_rigid: non-finite coordinates");
  }

  Eigen::VectorXd w = Eigen::VectorXd::Ones(k);
  if (weights) {
    if (static_cast<Eigen::Index>(weights->size()) != k) {
      throw Error(Errc::invalid_argument, "fit_rigid: weight count mismatch");
    }
    for (Eigen::Index i = 0; i < k; ++i) {
      const double wi = (*weights)[static_cast<std::size_t>(i)];
      if (!(wi >= 0) || !std::isfinite(wi)) {
        throw Error(Errc::invalid_argument, "fit_rigid: weights must be finite and non-negative");
      }
      w[i] = wi;
    }
    if ((w.array() > 0).count() < 3) {
      throw Error(Errc::too_few_points, "fit_rigid: fewer than 3 positively weighted points");
    }
  }
  const double wsum = w.sum();
  const Vec3 src_mean = (src.transpose() * w) / wsum;
  const Vec3 dst_mean = (dst.transpose() * w) / wsum;
  const Points3 sc = src.rowwise() - src_mean.transpose();
  const Points3 dc = dst.rowwise() - dst_mean.transpose();

  const Mat3 spread = sc.transpose() * w.asDiagonal() * sc;
  const Eigen::SelfAdjointEigenSolver<Mat3> eig(spread);
  const Vec3 ev = eig.eigenvalues();  // ascending
  const double scale2 = std::max(ev[2], 0.0);
  if (scale2 <= 1e-24 || ev[1] <= 1e-12 * scale2) {
    throw Error(Errc::degenerate_configuration,
                "fit_rigid: source points are coincident or collinear");
  }

  const Mat3 cross = sc.transpose() * w.asDiagonal() * dc;
  const Eigen::JacobiSVD<Mat3> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  if ((v * u.transpose()).determinant() < 0) d(2, 2) = -1;
  const Mat3 r = v * d * u.transpose();
  const Eigen::Quaterniond q(r);

  RigidFit fit;
  fit.pose = Pose::from_quaternion(q.w(), q.x(), q.y(), q.z(), dst_mean - r * src_mean);
  const Points3 moved = apply(fit.pose, src);
  const Eigen::VectorXd sq = (moved - dst).rowwise().squaredNorm();
  fit.rms_residual = std::sqrt(w.dot(sq) / wsum);
  return fit;
}

Mask default_depth_validity(const Image& reference) {
  return (reference > 0.0) && (reference <= 10.0);
}

DepthCalibration calibrate_depth(const Image& estimated, const Image& reference, const Mask& valid) {
  if (estimated.rows() != reference.rows() || estimated.cols() != reference.cols() ||
      valid.rows() != reference.rows() || valid.cols() != reference.cols()) {
    throw Error(Errc::invalid_argument, "calibrate_depth: image shapes differ");
  }
  std::size_t n = 0;
  double sum_e = 0, sum_r = 0;
  for (Eigen::Index i = 0; i < valid.size(); ++i) {
    const double e = estimated.data()[i], r = reference.data()[i];
    if (!valid.data()[i] || !std::isfinite(e) || !std::isfinite(r)) continue;
    ++n;
    sum_e += e;
    sum_r += r;
  }
  if (n == 0) throw Error(Errc::no_valid_pixels, "calibrate_depth: no valid pixels");
  const double mean_e = sum_e / static_cast<double>(n);
  const double mean_r = sum_r / static_cast<double>(n);
  double sxx = 0, sxy = 0;
  for (Eigen::Index i = 0; i < valid.size(); ++i) {
    const double e = estimated.data()[i], r = reference.data()[i];
    if (!valid.data()[i] || !std::isfinite(e) || !std::isfinite(r)) continue;
    sxx += (e - mean_e) * (e - mean_e);
    sxy += (e - mean_e) * (r - mean_r);
  }
  const double floor = 1e-12 * std::max(1.0, std::abs(mean_e));
  if (n < 2 || sxx <= static_cast<double>(n) * floor * floor) {
    throw Error(Errc::rank_deficient, "calibrate_depth: estimated depth is constant on valid pixels");
  }
  DepthCalibration cal;
  cal.alpha = sxy / sxx;
  cal.beta = mean_r - cal.alpha * mean_e;
  if (!(cal.alpha > 0)) {
    throw Error(Errc::negative_scale, "calibrate_depth: least-squares scale is not positive");
  }
  return cal;
}

std::vector<Vec2> sample_keypoints(const Mask& mask, std::size_t n_interior, std::uint64_t seed) {
  const Eigen::Index h = mask.rows(), w = mask.cols();
  // (x, y) of each extremum; the comparisons encode the tie-breaks.
  std::optional<Eigen::Vector2i> min_x, max_x, min_y, max_y;
  std::vector<Eigen::Vector2i> interior;
  auto inside = [&](Eigen::Index y, Eigen::Index x) {
    return y >= 0 && y < h && x >= 0 && x < w && mask(y, x);
  };
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      if (!mask(y, x)) continue;
      const Eigen::Vector2i p(static_cast<int>(x), static_cast<int>(y));
      if (!min_x || p.x() < min_x->x()) min_x = p;
      if (!max_x || p.x() > max_x->x()) max_x = p;
      if (!min_y || p.y() < min_y->y()) min_y = p;
      if (!max_y || p.y() > max_y->y()) max_y = p;
      if (inside(y - 1, x) && inside(y + 1, x) && inside(y, x - 1) && inside(y, x + 1)) {
        interior.push_back(p);
      }
    }
  }
  if (!min_x) throw Error(Errc::empty_mask, "sample_keypoints: mask is empty");
  if (n_interior > 0 && interior.empty()) {
    throw Error(Errc::no_interior_pixels, "sample_keypoints: mask has no interior pixels");
  }
  std::vector<Vec2> out;
  for (const auto& p : {*min_x, *max_x, *min_y, *max_y}) out.emplace_back(p.x(), p.y());
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, interior.empty() ? 0 : interior.size() - 1);
  for (std::size_t i = 0; i < n_interior; ++i) {
    const auto& p = interior[pick(rng)];
    out.emplace_back(p.x(), p.y());
  }
  return out;
}

}  // namespace emboalign
