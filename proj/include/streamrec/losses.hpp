#pragma once

#include <array>
#include <span>
#include <vector>

#include "streamrec/geomath.hpp"
#include "streamrec/heads.hpp"

namespace streamrec {

struct LossConfig {
  double alpha = 0.2;            // weight of the -log(confidence) reward
  double epsilon_norm = 1e-12;   // floor added to norm-factor denominators
};

/// Confidence-weighted mean point distance from the camera centre over each
/// map's valid pixels:
///   sum ||P|| log C / (sum log C + epsilon_norm).
/// When every weight is zero (confidence == 1 everywhere) the plain mean is
/// used. Throws EmptyInputError when no pixel is valid and DegenerateError
/// when the factor is zero.
double norm_factor(std::span<const PointMap> point_maps, std::span<const ConfidenceMap> confs,
                   double epsilon_norm = 1e-12);

/// Gradients are taken with respect to predicted points, raw confidences
/// (conf = 1 + exp(raw)), the four un-normalized rotation components of each
/// predicted pose (evaluated at the current unit quaternion), and predicted
/// translations.
using QuatGrad = std::array<double, 4>;

struct PmapLoss {
  double value = 0.0;
  double norm_factor_pred = 0.0;
  double norm_factor_gt = 0.0;
  std::vector<std::vector<Vec3>> grad_points;
  std::vector<std::vector<double>> grad_raw_conf;
};

struct CameraLoss {
  double value = 0.0;
  std::vector<QuatGrad> grad_rotation;
  std::vector<Vec3> grad_translation;
  double grad_norm_pred = 0.0;  // d value / d norm_factor_pred
  double grad_norm_gt = 0.0;
};

struct LossBreakdown {
  double norm_factor_pred = 0.0;
  double norm_factor_gt = 0.0;
  double pmap_loss = 0.0;
  double camera_loss = 0.0;
  double total = 0.0;
  std::vector<std::vector<Vec3>> grad_points;
  std::vector<std::vector<double>> grad_raw_conf;
  std::vector<QuatGrad> grad_rotation;
  std::vector<Vec3> grad_translation;
};

/// Confidence-aware point-map regression: predictions and ground truth are
/// each divided by their own norm factor (both weighted by the predicted
/// confidence over the ground-truth valid mask), then
///   sum over valid pixels of C ||p_hat - p||^2 - alpha log C.
PmapLoss pmap_loss(std::span<const PointMap> pred, std::span<const ConfidenceMap> conf,
                   std::span<const PointMap> gt, const LossConfig& cfg = {});

/// Mean l1 distance between predicted and ground-truth relative cameras over
/// all ordered pairs i != j. Translations are divided by the given norm
/// factors first. Relative quaternions are sign-aligned to the ground truth
/// before differencing. Throws std::invalid_argument for fewer than 2 poses.
CameraLoss camera_loss(std::span<const Pose> pred, std::span<const Pose> gt, double norm_pred, double norm_gt);

/// camera_loss + pmap_loss, with gradients chained through the shared norm
/// factors.
LossBreakdown total_loss(std::span<const PointMap> pred_points, std::span<const ConfidenceMap> pred_conf,
                         std::span<const Pose> pred_poses, std::span<const PointMap> gt_points,
                         std::span<const Pose> gt_poses, const LossConfig& cfg = {});

}  // namespace streamrec
