#include "streamrec/geomath.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <Eigen/SVD>

#include "streamrec/errors.hpp"

namespace streamrec {

namespace {

constexpr double kUnitTolerance = 1e-6;

void require_unit(const Quaternion& q, const char* what) {
  if (!q.is_finite()) {
    throw std::invalid_argument(std::string(what) + ": non-finite quaternion");
  }
  if (std::abs(q.norm() - 1.0) > kUnitTolerance) {
    throw std::invalid_argument(std::string(what) + ": quaternion is not unit");
  }
}

Quaternion hamilton(const Quaternion& a, const Quaternion& b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
          a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
          a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

}  // namespace

Quaternion Quaternion::unit(double w, double x, double y, double z) {
  const Quaternion raw{w, x, y, z};
  if (!raw.is_finite()) throw std::invalid_argument("Quaternion::unit: non-finite input");
  const double n = raw.norm();
  if (n == 0.0) throw std::invalid_argument("Quaternion::unit: zero quaternion");
  return Quaternion{w / n, x / n, y / n, z / n}.canonical();
}

Quaternion Quaternion::from_axis_angle(const Vec3& axis, double angle_rad) {
  const double n = axis.norm();
  if (!(n > 0.0)) throw std::invalid_argument("from_axis_angle: zero axis");
  const Vec3 u = axis / n;
  const double s = std::sin(0.5 * angle_rad);
  return unit(std::cos(0.5 * angle_rad), s * u.x(), s * u.y(), s * u.z());
}

Quaternion Quaternion::from_matrix(const Mat3& r) {
  // Shepperd's method: pick the largest diagonal term for stability.
  const double trace = r.trace();
  double w, x, y, z;
  if (trace > r(0, 0) && trace > r(1, 1) && trace > r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + trace);
    w = 0.25 * s;
    x = (r(2, 1) - r(1, 2)) / s;
    y = (r(0, 2) - r(2, 0)) / s;
    z = (r(1, 0) - r(0, 1)) / s;
  } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2));
    w = (r(2, 1) - r(1, 2)) / s;
    x = 0.25 * s;
    y = (r(0, 1) + r(1, 0)) / s;
    z = (r(0, 2) + r(2, 0)) / s;
  } else if (r(1, 1) > r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2));
    w = (r(0, 2) - r(2, 0)) / s;
    x = (r(0, 1) + r(1, 0)) / s;
    y = 0.25 * s;
    z = (r(1, 2) + r(2, 1)) / s;
  } else {
    const double s = 2.0 * std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1));
    w = (r(1, 0) - r(0, 1)) / s;
    x = (r(0, 2) + r(2, 0)) / s;
    y = (r(1, 2) + r(2, 1)) / s;
    z = 0.25 * s;
  }
  return unit(w, x, y, z);
}

double Quaternion::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Quaternion Quaternion::canonical() const {
  bool flip = w < 0.0;
  if (w == 0.0) {
    if (x != 0.0) {
      flip = x < 0.0;
    } else if (y != 0.0) {
      flip = y < 0.0;
    } else {
      flip = z < 0.0;
    }
  }
  return flip ? negated() : *this;
}

Mat3 Quaternion::to_matrix() const {
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

bool Quaternion::is_finite() const {
  return std::isfinite(w) && std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
}

Quaternion quat_mul(const Quaternion& a, const Quaternion& b) {
  require_unit(a, "quat_mul");
  require_unit(b, "quat_mul");
  const Quaternion p = hamilton(a, b);
  return Quaternion::unit(p.w, p.x, p.y, p.z);
}

Quaternion quat_conjugate(const Quaternion& q) { return {q.w, -q.x, -q.y, -q.z}; }

Vec3 rotate(const Vec3& t, const Quaternion& q) {
  // t + 2w (u x t) + 2 u x (u x t), valid for unit q.
  const Vec3 u(q.x, q.y, q.z);
  const Vec3 c = u.cross(t);
  return t + 2.0 * q.w * c + 2.0 * u.cross(c);
}

Pose Pose::inverse() const {
  const Quaternion qi = quat_conjugate(rotation);
  return {qi.canonical(), -rotate(translation, qi)};
}

Pose Pose::compose(const Pose& rhs) const {
  return {quat_mul(rotation, rhs.rotation), rotate(rhs.translation, rotation) + translation};
}

Pose relative_pose(const Pose& pose_i, const Pose& pose_j) {
  const Quaternion qj_conj = quat_conjugate(pose_j.rotation);
  return {quat_mul(qj_conj, pose_i.rotation), rotate(pose_i.translation - pose_j.translation, qj_conj)};
}

SimilarityTransform umeyama_align(std::span<const Vec3> source, std::span<const Vec3> target,
                                  bool with_scale) {
  if (source.size() != target.size()) {
    throw ShapeError("umeyama_align: source and target sizes differ");
  }
  const std::size_t n = source.size();
  if (n < 3) throw DegenerateError("umeyama_align: need at least 3 correspondences");

  Vec3 mu_src = Vec3::Zero();
  Vec3 mu_dst = Vec3::Zero();
  for (std::size_t k = 0; k < n; ++k) {
    mu_src += source[k];
    mu_dst += target[k];
  }
  mu_src /= static_cast<double>(n);
  mu_dst /= static_cast<double>(n);

  Mat3 cov = Mat3::Zero();
  double var_src = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const Vec3 ds = source[k] - mu_src;
    cov += (target[k] - mu_dst) * ds.transpose();
    var_src += ds.squaredNorm();
  }
  cov /= static_cast<double>(n);
  var_src /= static_cast<double>(n);

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(1) <= 1e-12 * sv(0)) {
    throw DegenerateError("umeyama_align: covariance rank < 2 (collinear or coincident points)");
  }

  Vec3 signs = Vec3::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) signs(2) = -1.0;
  const Mat3 r = svd.matrixU() * signs.asDiagonal() * svd.matrixV().transpose();

  const double scale = with_scale ? sv.dot(signs) / var_src : 1.0;
  SimilarityTransform out;
  out.scale = scale;
  out.rotation = Quaternion::from_matrix(r);
  out.translation = mu_dst - scale * r * mu_src;
  return out;
}

double rotation_angle_deg(const Quaternion& a, const Quaternion& b) {
  // 2 acos(|<a,b>|) evaluated through atan2 of the difference rotation, which
  // keeps precision near 0 degrees.
  const Quaternion d = hamilton(quat_conjugate(a), b);
  const double vec = std::sqrt(d.x * d.x + d.y * d.y + d.z * d.z);
  return rad_to_deg(2.0 * std::atan2(vec, std::abs(d.w)));
}

double direction_angle_deg(const Vec3& a, const Vec3& b) {
  if (a.norm() == 0.0 || b.norm() == 0.0) return 180.0;
  return rad_to_deg(std::atan2(a.cross(b).norm(), a.dot(b)));
}

}  // namespace streamrec
