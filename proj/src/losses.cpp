#include "streamrec/losses.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Geometry>

#include "streamrec/errors.hpp"

namespace streamrec {

namespace {

using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;

Vec4 as_vec(const Quaternion& q) { return {q.w, q.x, q.y, q.z}; }

// a (x) b == left_mul(a) * b
Mat4 left_mul(const Vec4& a) {
  Mat4 m;
  m << a(0), -a(1), -a(2), -a(3),
       a(1),  a(0), -a(3),  a(2),
       a(2),  a(3),  a(0), -a(1),
       a(3), -a(2),  a(1),  a(0);
  return m;
}

// a (x) b == right_mul(b) * a
Mat4 right_mul(const Vec4& b) {
  Mat4 m;
  m << b(0), -b(1), -b(2), -b(3),
       b(1),  b(0),  b(3), -b(2),
       b(2), -b(3),  b(0),  b(1),
       b(3),  b(2), -b(1),  b(0);
  return m;
}

Mat3 skew(const Vec3& u) {
  Mat3 m;
  m << 0, -u.z(), u.y(), u.z(), 0, -u.x(), -u.y(), u.x(), 0;
  return m;
}

// Polynomial rotation v + 2w (u x v) + 2 u x (u x v) and its Jacobians with
// respect to v and to (w, u).
struct RotateJacobian {
  Vec3 value;
  Mat3 d_v;
  Eigen::Matrix<double, 3, 4> d_q;
};

RotateJacobian rotate_with_jacobian(const Vec3& v, const Vec4& q) {
  const double w = q(0);
  const Vec3 u = q.tail<3>();
  const Mat3 su = skew(u);
  RotateJacobian out;
  out.value = v + 2.0 * w * u.cross(v) + 2.0 * u.cross(u.cross(v));
  out.d_v = Mat3::Identity() + 2.0 * w * su + 2.0 * su * su;
  out.d_q.col(0) = 2.0 * u.cross(v);
  for (int k = 0; k < 3; ++k) {
    const Vec3 e = Vec3::Unit(k);
    out.d_q.col(k + 1) = 2.0 * w * e.cross(v) + 2.0 * (e * u.dot(v) + u * v(k) - 2.0 * v * u(k));
  }
  return out;
}

double sgn(double v) { return (v > 0.0) - (v < 0.0); }

struct NormStats {
  double value = 0.0;
  double denom = 0.0;
  bool uniform = false;
};

// Norm factor of `points` over the pixels valid in `mask_source`, weighted by
// log(conf).
NormStats weighted_norm(std::span<const PointMap> points, std::span<const ConfidenceMap> conf,
                        std::span<const PointMap> mask_source, double eps) {
  double weighted = 0.0;
  double weights = 0.0;
  double plain = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t j = 0; j < points[i].pixel_count(); ++j) {
      if (!mask_source[i].valid[j]) continue;
      const double r = points[i].points[j].norm();
      const double w = std::log(conf[i].conf[j]);
      weighted += r * w;
      weights += w;
      plain += r;
      ++count;
    }
  }
  if (count == 0) throw EmptyInputError("norm_factor: no valid pixels");
  NormStats s;
  if (weights > 0.0) {
    s.denom = weights + eps;
    s.value = weighted / s.denom;
  } else {
    s.uniform = true;
    s.denom = static_cast<double>(count);
    s.value = plain / s.denom;
  }
  if (!(s.value > 0.0)) throw DegenerateError("norm_factor: point maps have zero scale");
  return s;
}

// Adds d(loss)/d(norm) * d(norm)/d(points, conf) into the gradient buffers.
void backprop_norm(const NormStats& s, double grad_norm, std::span<const PointMap> points,
                   std::span<const ConfidenceMap> conf, std::span<const PointMap> mask_source,
                   std::vector<std::vector<Vec3>>* grad_points, std::vector<std::vector<double>>& grad_conf) {
  if (grad_norm == 0.0) return;
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t j = 0; j < points[i].pixel_count(); ++j) {
      if (!mask_source[i].valid[j]) continue;
      const Vec3& p = points[i].points[j];
      const double r = p.norm();
      const double c = conf[i].conf[j];
      const double w = std::log(c);
      if (grad_points && r > 0.0) {
        const double dr = s.uniform ? 1.0 / s.denom : w / s.denom;
        (*grad_points)[i][j] += grad_norm * dr * p / r;
      }
      if (!s.uniform) grad_conf[i][j] += grad_norm * (r - s.value) / s.denom / c;
    }
  }
}

void check_frames(std::span<const PointMap> pred, std::span<const ConfidenceMap> conf,
                  std::span<const PointMap> gt) {
  if (pred.size() != conf.size() || pred.size() != gt.size()) {
    throw ShapeError("loss: prediction, confidence and ground-truth frame counts differ");
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].pixel_count() != gt[i].pixel_count() || conf[i].conf.size() != gt[i].pixel_count() ||
        gt[i].valid.size() != gt[i].pixel_count()) {
      throw ShapeError("loss: frame " + std::to_string(i) + " shapes differ");
    }
  }
}

struct PmapPartials {
  double value = 0.0;
  NormStats pred_norm;
  NormStats gt_norm;
  double grad_norm_pred = 0.0;
  double grad_norm_gt = 0.0;
  std::vector<std::vector<Vec3>> grad_points;
  std::vector<std::vector<double>> grad_conf;  // d/dC, direct terms only
};

PmapPartials pmap_partials(std::span<const PointMap> pred, std::span<const ConfidenceMap> conf,
                           std::span<const PointMap> gt, const LossConfig& cfg) {
  check_frames(pred, conf, gt);
  PmapPartials out;
  out.pred_norm = weighted_norm(pred, conf, gt, cfg.epsilon_norm);
  out.gt_norm = weighted_norm(gt, conf, gt, cfg.epsilon_norm);
  const double np = out.pred_norm.value;
  const double ng = out.gt_norm.value;

  out.grad_points.resize(pred.size());
  out.grad_conf.resize(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    out.grad_points[i].assign(pred[i].pixel_count(), Vec3::Zero());
    out.grad_conf[i].assign(pred[i].pixel_count(), 0.0);
    for (std::size_t j = 0; j < pred[i].pixel_count(); ++j) {
      if (!gt[i].valid[j]) continue;
      const double c = conf[i].conf[j];
      const Vec3& ph = pred[i].points[j];
      const Vec3& pg = gt[i].points[j];
      const Vec3 d = ph / np - pg / ng;
      out.value += c * d.squaredNorm() - cfg.alpha * std::log(c);
      out.grad_points[i][j] = 2.0 * c * d / np;
      out.grad_norm_pred += 2.0 * c * d.dot(-ph / (np * np));
      out.grad_norm_gt += 2.0 * c * d.dot(pg / (ng * ng));
      out.grad_conf[i][j] = d.squaredNorm() - cfg.alpha / c;
    }
  }
  return out;
}

std::vector<std::vector<double>> to_raw_conf_grad(std::vector<std::vector<double>> grad_conf,
                                                  std::span<const ConfidenceMap> conf) {
  for (std::size_t i = 0; i < grad_conf.size(); ++i) {
    for (std::size_t j = 0; j < grad_conf[i].size(); ++j) grad_conf[i][j] *= conf[i].conf[j] - 1.0;
  }
  return grad_conf;
}

}  // namespace

double norm_factor(std::span<const PointMap> point_maps, std::span<const ConfidenceMap> confs,
                   double epsilon_norm) {
  if (point_maps.size() != confs.size()) throw ShapeError("norm_factor: map and confidence counts differ");
  for (std::size_t i = 0; i < point_maps.size(); ++i) {
    if (point_maps[i].pixel_count() != confs[i].conf.size()) throw ShapeError("norm_factor: shape mismatch");
  }
  return weighted_norm(point_maps, confs, point_maps, epsilon_norm).value;
}

PmapLoss pmap_loss(std::span<const PointMap> pred, std::span<const ConfidenceMap> conf,
                   std::span<const PointMap> gt, const LossConfig& cfg) {
  PmapPartials p = pmap_partials(pred, conf, gt, cfg);
  backprop_norm(p.pred_norm, p.grad_norm_pred, pred, conf, gt, &p.grad_points, p.grad_conf);
  backprop_norm(p.gt_norm, p.grad_norm_gt, gt, conf, gt, nullptr, p.grad_conf);

  PmapLoss out;
  out.value = p.value;
  out.norm_factor_pred = p.pred_norm.value;
  out.norm_factor_gt = p.gt_norm.value;
  out.grad_points = std::move(p.grad_points);
  out.grad_raw_conf = to_raw_conf_grad(std::move(p.grad_conf), conf);
  return out;
}

CameraLoss camera_loss(std::span<const Pose> pred, std::span<const Pose> gt, double norm_pred, double norm_gt) {
  const std::size_t n = pred.size();
  if (n != gt.size()) throw ShapeError("camera_loss: prediction and ground-truth counts differ");
  if (n < 2) throw std::invalid_argument("camera_loss: need at least 2 poses");
  if (!(norm_pred > 0.0) || !(norm_gt > 0.0)) throw std::invalid_argument("camera_loss: norm factors must be > 0");

  const Mat4 conj = Eigen::Vector4d(1, -1, -1, -1).asDiagonal();
  std::vector<Vec4> q(n), q_gt(n);
  std::vector<Vec3> t(n), t_gt(n);
  for (std::size_t i = 0; i < n; ++i) {
    q[i] = as_vec(pred[i].rotation);
    q_gt[i] = as_vec(gt[i].rotation);
    t[i] = pred[i].translation / norm_pred;
    t_gt[i] = gt[i].translation / norm_gt;
  }

  const double pair_weight = 1.0 / static_cast<double>(n * (n - 1));
  std::vector<Vec4> g_q(n, Vec4::Zero());
  std::vector<Vec3> g_t(n, Vec3::Zero());  // with respect to normalized translations
  CameraLoss out;
  double sum = 0.0;
  double grad_gt_norm = 0.0;

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const Vec4 cj = conj * q[j];
      const Vec4 rel_q = left_mul(cj) * q[i];
      const RotateJacobian rel_t = rotate_with_jacobian(t[i] - t[j], cj);

      const Vec4 cj_gt = conj * q_gt[j];
      const Vec4 rel_q_gt = left_mul(cj_gt) * q_gt[i];
      const Vec3 rel_t_gt = rotate_with_jacobian(t_gt[i] - t_gt[j], cj_gt).value;

      const double s = rel_q.dot(rel_q_gt) < 0.0 ? -1.0 : 1.0;
      const Vec4 dq = s * rel_q - rel_q_gt;
      const Vec3 dt = rel_t.value - rel_t_gt;
      sum += dq.cwiseAbs().sum() + dt.cwiseAbs().sum();

      const Vec4 g_rel_q = s * dq.unaryExpr(&sgn);
      const Vec3 g_rel_t = dt.unaryExpr(&sgn);
      g_q[i] += left_mul(cj).transpose() * g_rel_q;
      g_q[j] += conj * (right_mul(q[i]).transpose() * g_rel_q + rel_t.d_q.transpose() * g_rel_t);
      const Vec3 g_v = rel_t.d_v.transpose() * g_rel_t;
      g_t[i] += g_v;
      g_t[j] -= g_v;
      grad_gt_norm += g_rel_t.dot(rel_t_gt) / norm_gt;
    }
  }

  out.value = sum * pair_weight;
  out.grad_rotation.resize(n);
  out.grad_translation.resize(n);
  double grad_pred_norm = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    // Project onto the tangent of the unit sphere: the loss sees normalize(raw).
    const Vec4 g = pair_weight * (g_q[i] - q[i] * q[i].dot(g_q[i]));
    out.grad_rotation[i] = {g(0), g(1), g(2), g(3)};
    out.grad_translation[i] = pair_weight * g_t[i] / norm_pred;
    grad_pred_norm -= pair_weight * g_t[i].dot(t[i]) / norm_pred;
  }
  out.grad_norm_pred = grad_pred_norm;
  out.grad_norm_gt = pair_weight * grad_gt_norm;
  return out;
}

LossBreakdown total_loss(std::span<const PointMap> pred_points, std::span<const ConfidenceMap> pred_conf,
                         std::span<const Pose> pred_poses, std::span<const PointMap> gt_points,
                         std::span<const Pose> gt_poses, const LossConfig& cfg) {
  PmapPartials p = pmap_partials(pred_points, pred_conf, gt_points, cfg);
  CameraLoss cam = camera_loss(pred_poses, gt_poses, p.pred_norm.value, p.gt_norm.value);

  backprop_norm(p.pred_norm, p.grad_norm_pred + cam.grad_norm_pred, pred_points, pred_conf, gt_points,
                &p.grad_points, p.grad_conf);
  backprop_norm(p.gt_norm, p.grad_norm_gt + cam.grad_norm_gt, gt_points, pred_conf, gt_points, nullptr,
                p.grad_conf);

  LossBreakdown out;
  out.norm_factor_pred = p.pred_norm.value;
  out.norm_factor_gt = p.gt_norm.value;
  out.pmap_loss = p.value;
  out.camera_loss = cam.value;
  out.total = out.pmap_loss + out.camera_loss;
  out.grad_points = std::move(p.grad_points);
  out.grad_raw_conf = to_raw_conf_grad(std::move(p.grad_conf), pred_conf);
  out.grad_rotation = std::move(cam.grad_rotation);
  out.grad_translation = std::move(cam.grad_translation);
  return out;
}

}  // namespace streamrec
