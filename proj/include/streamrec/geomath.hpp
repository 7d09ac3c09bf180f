#pragma once

#include <span>

#include <Eigen/Core>

namespace streamrec {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Hamilton quaternion, scalar first. Unit quaternions built through
/// `unit()` are normalized and sign-canonical (w >= 0; when w == 0 the first
/// nonzero vector component is positive).
struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  static Quaternion identity() { return {}; }
  /// Normalizes and canonicalizes. Throws std::invalid_argument on a zero or
  /// non-finite input.
  static Quaternion unit(double w, double x, double y, double z);
  static Quaternion from_axis_angle(const Vec3& axis, double angle_rad);
  static Quaternion from_matrix(const Mat3& rotation);

  double norm() const;
  double dot(const Quaternion& other) const { return w * other.w + x * other.x + y * other.y + z * other.z; }
  Quaternion negated() const { return {-w, -x, -y, -z}; }
  Quaternion canonical() const;
  Mat3 to_matrix() const;
  bool is_finite() const;
};

Quaternion quat_mul(const Quaternion& a, const Quaternion& b);
Quaternion quat_conjugate(const Quaternion& q);
/// R(q) * t.
Vec3 rotate(const Vec3& t, const Quaternion& q);

/// World-from-camera rigid transform: x_world = R(rotation) * x_cam + translation.
struct Pose {
  Quaternion rotation;
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotate(p, rotation) + translation; }
  Pose inverse() const;
  /// (*this) after `rhs`: x -> this(rhs(x)).
  Pose compose(const Pose& rhs) const;
};

/// Relative camera parameters from view i to view j:
/// q_ij = q_j^* (x) q_i, t_ij = rotate(t_i - t_j, q_j^*).
Pose relative_pose(const Pose& pose_i, const Pose& pose_j);

struct SimilarityTransform {
  double scale = 1.0;
  Quaternion rotation;
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return scale * rotate(p, rotation) + translation; }
};

/// Least-squares similarity (or rigid, when `with_scale` is false) transform
/// mapping `source` onto `target`. Always returns a proper rotation.
/// Throws DegenerateError for fewer than 3 points or covariance rank < 2.
SimilarityTransform umeyama_align(std::span<const Vec3> source, std::span<const Vec3> target,
                                  bool with_scale = true);

/// Geodesic angle between two rotations in degrees, in [0, 180]. Insensitive
/// to the quaternion double cover.
double rotation_angle_deg(const Quaternion& a, const Quaternion& b);

/// Angle between two directions in degrees; 180 when either is zero-length.
double direction_angle_deg(const Vec3& a, const Vec3& b);

constexpr double kPi = 3.14159265358979323846;
constexpr double deg_to_rad(double deg) { return deg * kPi / 180.0; }
constexpr double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

}  // namespace streamrec
