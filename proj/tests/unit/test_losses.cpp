#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <gtest/gtest.h>

#include "streamrec/errors.hpp"
#include "streamrec/losses.hpp"
#include "test_support.hpp"

using namespace streamrec;
using testing_support::Rand;

namespace {

PointMap map_of(std::vector<Vec3> pts) {
  PointMap m(pts.size(), 1);
  m.points = std::move(pts);
  return m;
}

ConfidenceMap conf_of(std::vector<double> c) {
  ConfidenceMap m(c.size(), 1);
  m.conf = std::move(c);
  return m;
}

struct Problem {
  std::vector<PointMap> pred, gt;
  std::vector<ConfidenceMap> conf;
  std::vector<Pose> pred_poses, gt_poses;
};

Problem random_problem(Rand& rng, std::size_t frames, std::size_t pixels) {
  Problem p;
  for (std::size_t f = 0; f < frames; ++f) {
    PointMap g(pixels, 1), q(pixels, 1);
    ConfidenceMap c(pixels, 1);
    for (std::size_t k = 0; k < pixels; ++k) {
      g.points[k] = rng.vec() + Vec3(0, 0, 4);
      q.points[k] = 1.3 * g.points[k] + 0.3 * rng.vec();
      c.conf[k] = 1.0 + std::exp(rng.normal());
      g.valid[k] = rng.uniform() < 0.8;
    }
    g.valid[0] = 1;
    p.gt.push_back(g);
    p.pred.push_back(q);
    p.conf.push_back(c);
    p.gt_poses.push_back(rng.pose());
    Pose noisy = p.gt_poses.back();
    noisy.translation += 0.3 * rng.vec();
    const Quaternion d = Quaternion::from_axis_angle(rng.vec(), 0.3);
    noisy.rotation = quat_mul(d, noisy.rotation);
    p.pred_poses.push_back(noisy);
  }
  return p;
}

// Flattened parameters: points, raw confidences, raw quaternions, translations.
std::vector<double> flatten(const Problem& p) {
  std::vector<double> x;
  for (const auto& m : p.pred)
    for (const auto& v : m.points) x.insert(x.end(), {v.x(), v.y(), v.z()});
  for (const auto& c : p.conf)
    for (double v : c.conf) x.push_back(std::log(v - 1.0));
  for (const auto& pose : p.pred_poses)
    x.insert(x.end(), {pose.rotation.w, pose.rotation.x, pose.rotation.y, pose.rotation.z});
  for (const auto& pose : p.pred_poses)
    x.insert(x.end(), {pose.translation.x(), pose.translation.y(), pose.translation.z()});
  return x;
}

Problem unflatten(const Problem& base, const std::vector<double>& x) {
  Problem p = base;
  std::size_t k = 0;
  for (auto& m : p.pred)
    for (auto& v : m.points) {
      v = Vec3(x[k], x[k + 1], x[k + 2]);
      k += 3;
    }
  for (auto& c : p.conf)
    for (double& v : c.conf) v = 1.0 + std::exp(x[k++]);
  for (auto& pose : p.pred_poses) {
    pose.rotation = Quaternion::unit(x[k], x[k + 1], x[k + 2], x[k + 3]);
    k += 4;
  }
  for (auto& pose : p.pred_poses) {
    pose.translation = Vec3(x[k], x[k + 1], x[k + 2]);
    k += 3;
  }
  return p;
}

std::vector<double> central_difference(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

double inf_norm_relative(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(b[i]));
  }
  return diff / scale;
}

}  // namespace

TEST(NormFactor, UniformConfidenceUsesPlainMean) {
  const std::vector<PointMap> pts{map_of({Vec3(1, 0, 0), Vec3(0, 3, 0)})};
  const std::vector<ConfidenceMap> c{conf_of({1.0, 1.0})};
  EXPECT_DOUBLE_EQ(norm_factor(pts, c), 2.0);
}

TEST(NormFactor, EqualWeightsGiveMean) {
  const std::vector<PointMap> pts{map_of({Vec3(1, 0, 0)}), map_of({Vec3(0, 0, -3)})};
  const std::vector<ConfidenceMap> c{conf_of({std::exp(1.0)}), conf_of({std::exp(1.0)})};
  // The denominator carries the 1e-12 floor.
  EXPECT_NEAR(norm_factor(pts, c), 4.0 / (2.0 + 1e-12), 1e-15);
}

TEST(NormFactor, LogConfidenceWeighting) {
  // weights 3 and 5: (1*3 + 3*5) / 8.
  const std::vector<PointMap> pts{map_of({Vec3(1, 0, 0), Vec3(0, 3, 0)})};
  const std::vector<ConfidenceMap> c{conf_of({std::exp(3.0), std::exp(5.0)})};
  EXPECT_NEAR(norm_factor(pts, c), 18.0 / (8.0 + 1e-12), 1e-15);
}

TEST(NormFactor, InvalidPixelsAreSkippedAndErrors) {
  PointMap m = map_of({Vec3(1, 0, 0), Vec3(100, 0, 0)});
  m.valid[1] = 0;
  EXPECT_DOUBLE_EQ(norm_factor(std::vector<PointMap>{m}, std::vector<ConfidenceMap>{conf_of({1, 1})}), 1.0);
  m.valid[0] = 0;
  EXPECT_THROW(norm_factor(std::vector<PointMap>{m}, std::vector<ConfidenceMap>{conf_of({1, 1})}),
               EmptyInputError);
  EXPECT_THROW(norm_factor(std::vector<PointMap>{map_of({Vec3::Zero()})}, std::vector<ConfidenceMap>{conf_of({1})}),
               DegenerateError);
  EXPECT_THROW(norm_factor(std::vector<PointMap>{map_of({Vec3::Zero()})}, std::vector<ConfidenceMap>{}), ShapeError);
}

TEST(PmapLoss, PerfectPredictionRewardsConfidence) {
  const std::vector<PointMap> gt{map_of({Vec3(0, 0, 2)})};
  const std::vector<ConfidenceMap> c{conf_of({std::exp(1.0)})};
  const PmapLoss l = pmap_loss(gt, c, gt, {.alpha = 1.0});
  EXPECT_NEAR(l.value, -1.0, 1e-12);
  const PmapLoss zero = pmap_loss(gt, std::vector<ConfidenceMap>{conf_of({1.0})}, gt, {.alpha = 1.0});
  EXPECT_NEAR(zero.value, 0.0, 1e-15);
}

TEST(PmapLoss, ScaleIsFactoredOut) {
  const std::vector<PointMap> gt{map_of({Vec3(1, 0, 0), Vec3(3, 0, 0)})};
  const std::vector<PointMap> pred{map_of({Vec3(5, 0, 0), Vec3(15, 0, 0)})};
  const std::vector<ConfidenceMap> c{conf_of({2.0, 2.0})};
  EXPECT_NEAR(pmap_loss(pred, c, gt).value, -0.4 * std::log(2.0), 1e-10);
}

TEST(PmapLoss, HandComputedResidual) {
  // Normalized pred (1,0,0) twice vs normalized gt (0.5,0,0), (1.5,0,0):
  // residual 0.5 at each pixel, C = 2, alpha = 0.2.
  const std::vector<PointMap> gt{map_of({Vec3(1, 0, 0), Vec3(3, 0, 0)})};
  const std::vector<PointMap> pred{map_of({Vec3(2, 0, 0), Vec3(2, 0, 0)})};
  const std::vector<ConfidenceMap> c{conf_of({2.0, 2.0})};
  const PmapLoss l = pmap_loss(pred, c, gt);
  EXPECT_NEAR(l.value, 2.0 * (2.0 * 0.25 - 0.2 * std::log(2.0)), 1e-10);
  EXPECT_NEAR(l.norm_factor_pred, 2.0, 1e-10);
  EXPECT_NEAR(l.norm_factor_gt, 2.0, 1e-10);
}

TEST(CameraLoss, HandComputedTranslationError) {
  const std::vector<Pose> gt{{Quaternion::identity(), Vec3::Zero()}, {Quaternion::identity(), Vec3(1, 0, 0)}};
  const std::vector<Pose> pred{{Quaternion::identity(), Vec3::Zero()}, {Quaternion::identity(), Vec3(1.1, 0, 0)}};
  EXPECT_NEAR(camera_loss(pred, gt, 1.0, 1.0).value, 0.1, 1e-12);
  EXPECT_NEAR(camera_loss(gt, gt, 1.0, 1.0).value, 0.0, 1e-15);
  EXPECT_THROW(camera_loss(std::vector<Pose>{gt[0]}, std::vector<Pose>{gt[0]}, 1.0, 1.0), std::invalid_argument);
  EXPECT_THROW(camera_loss(pred, gt, 0.0, 1.0), std::invalid_argument);
}

TEST(CameraLoss, QuaternionSignDoesNotMatter) {
  Rand rng(1);
  std::vector<Pose> gt{rng.pose(), rng.pose(), rng.pose()};
  std::vector<Pose> flipped = gt;
  for (auto& p : flipped) p.rotation = p.rotation.negated();
  EXPECT_NEAR(camera_loss(flipped, gt, 1.0, 1.0).value, 0.0, 1e-14);
}

TEST(CameraLoss, RelativeRotationOracle) {
  // Two views, the second rotated by theta about z with equal centres: the
  // relative quaternion differs from identity by (cos(t/2)-1, 0, 0, sin(t/2)).
  const double theta = 0.4;
  const std::vector<Pose> gt{{Quaternion::identity(), Vec3(0, 0, 0)}, {Quaternion::identity(), Vec3(1, 0, 0)}};
  std::vector<Pose> pred = gt;
  pred[1].rotation = Quaternion::from_axis_angle(Vec3::UnitZ(), theta);
  // Pair (1,0): q = q1; pair (0,1): q = conj(q1). Each contributes
  // |cos - 1| + |sin| for rotation, and the translation error.
  const double rot = (1.0 - std::cos(theta / 2)) + std::sin(theta / 2);
  // t_01 = R1^T (t0 - t1) = R1^T (-1,0,0); t_10 = t1 - t0 = (1,0,0).
  const Vec3 t01 = pred[1].rotation.to_matrix().transpose() * Vec3(-1, 0, 0);
  const double trans01 = (t01 - Vec3(-1, 0, 0)).cwiseAbs().sum();
  EXPECT_NEAR(camera_loss(pred, gt, 1.0, 1.0).value, (2 * rot + trans01) / 2.0, 1e-12);
}

TEST(TotalLoss, IsSumOfParts) {
  Rand rng(2);
  const Problem p = random_problem(rng, 3, 5);
  const LossBreakdown b = total_loss(p.pred, p.conf, p.pred_poses, p.gt, p.gt_poses);
  const PmapLoss pm = pmap_loss(p.pred, p.conf, p.gt);
  const CameraLoss cam = camera_loss(p.pred_poses, p.gt_poses, pm.norm_factor_pred, pm.norm_factor_gt);
  EXPECT_NEAR(b.pmap_loss, pm.value, 1e-12);
  EXPECT_NEAR(b.camera_loss, cam.value, 1e-12);
  EXPECT_DOUBLE_EQ(b.total, b.pmap_loss + b.camera_loss);
}

TEST(TotalLoss, GradientsMatchFiniteDifferences) {
  Rand rng(3);
  for (int trial = 0; trial < 3; ++trial) {
    const Problem base = random_problem(rng, 3, 4);
    const auto f = [&](const std::vector<double>& x) {
      const Problem q = unflatten(base, x);
      return total_loss(q.pred, q.conf, q.pred_poses, q.gt, q.gt_poses).total;
    };
    const std::vector<double> x = flatten(base);
    const LossBreakdown b = total_loss(base.pred, base.conf, base.pred_poses, base.gt, base.gt_poses);
    std::vector<double> analytic;
    for (const auto& fr : b.grad_points)
      for (const auto& v : fr) analytic.insert(analytic.end(), {v.x(), v.y(), v.z()});
    for (const auto& fr : b.grad_raw_conf) analytic.insert(analytic.end(), fr.begin(), fr.end());
    for (const auto& g : b.grad_rotation) analytic.insert(analytic.end(), g.begin(), g.end());
    for (const auto& g : b.grad_translation) analytic.insert(analytic.end(), {g.x(), g.y(), g.z()});
    ASSERT_EQ(analytic.size(), x.size());
    const auto numeric = central_difference(f, x, 1e-6);
    EXPECT_LT(inf_norm_relative(analytic, numeric), 1e-5) << "trial " << trial;
  }
}

TEST(PmapLoss, GradientsMatchFiniteDifferences) {
  Rand rng(4);
  const Problem base = random_problem(rng, 2, 6);
  const auto f = [&](const std::vector<double>& x) {
    const Problem q = unflatten(base, x);
    return pmap_loss(q.pred, q.conf, q.gt).value;
  };
  const std::vector<double> x = flatten(base);
  const PmapLoss l = pmap_loss(base.pred, base.conf, base.gt);
  const auto numeric = central_difference(f, x, 1e-6);
  std::vector<double> analytic;
  for (const auto& fr : l.grad_points)
    for (const auto& v : fr) analytic.insert(analytic.end(), {v.x(), v.y(), v.z()});
  for (const auto& fr : l.grad_raw_conf) analytic.insert(analytic.end(), fr.begin(), fr.end());
  analytic.resize(x.size(), 0.0);  // poses do not enter the point-map loss
  EXPECT_LT(inf_norm_relative(analytic, numeric), 1e-5);
}

TEST(TotalLoss, InvariantToGroundTruthSimilarityGauge) {
  Rand rng(5);
  const Problem p = random_problem(rng, 4, 5);
  const double before = total_loss(p.pred, p.conf, p.pred_poses, p.gt, p.gt_poses).total;
  for (int trial = 0; trial < 5; ++trial) {
    const double s = rng.uniform(0.2, 5.0);
    const Pose g{rng.quat(), rng.vec(3.0)};
    Problem q = p;
    for (auto& m : q.gt)
      for (auto& v : m.points) v *= s;
    for (auto& pose : q.gt_poses) {
      pose.translation *= s;
      pose = g.compose(pose);
    }
    const double after = total_loss(q.pred, q.conf, q.pred_poses, q.gt, q.gt_poses).total;
    EXPECT_NEAR(after, before, 1e-10 * std::max(1.0, std::abs(before)));
  }
}

TEST(TotalLoss, ShapeErrors) {
  Rand rng(6);
  Problem p = random_problem(rng, 2, 3);
  p.conf.pop_back();
  EXPECT_THROW(total_loss(p.pred, p.conf, p.pred_poses, p.gt, p.gt_poses), ShapeError);
}
