#include "streamrec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "streamrec/errors.hpp"

namespace streamrec {

KdTree::KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
  std::vector<std::size_t> order(points_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  nodes_.reserve(points_.size());
  root_ = build(order, 0, order.size(), 0);
}

std::ptrdiff_t KdTree::build(std::vector<std::size_t>& order, std::size_t lo, std::size_t hi, int depth) {
  if (lo >= hi) return -1;
  const int axis = depth % 3;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::nth_element(order.begin() + static_cast<std::ptrdiff_t>(lo), order.begin() + static_cast<std::ptrdiff_t>(mid),
                   order.begin() + static_cast<std::ptrdiff_t>(hi),
                   [&](std::size_t a, std::size_t b) { return points_[a](axis) < points_[b](axis); });
  const auto index = static_cast<std::ptrdiff_t>(nodes_.size());
  nodes_.push_back({order[mid], axis, -1, -1});
  const std::ptrdiff_t left = build(order, lo, mid, depth + 1);
  const std::ptrdiff_t right = build(order, mid + 1, hi, depth + 1);
  nodes_[static_cast<std::size_t>(index)].left = left;
  nodes_[static_cast<std::size_t>(index)].right = right;
  return index;
}

void KdTree::search(std::ptrdiff_t node, const Vec3& q, double& best_sq) const {
  if (node < 0) return;
  const Node& n = nodes_[static_cast<std::size_t>(node)];
  const Vec3& p = points_[n.point];
  best_sq = std::min(best_sq, (p - q).squaredNorm());
  const double diff = q(n.axis) - p(n.axis);
  const std::ptrdiff_t near = diff < 0.0 ? n.left : n.right;
  const std::ptrdiff_t far = diff < 0.0 ? n.right : n.left;
  search(near, q, best_sq);
  if (diff * diff <= best_sq) search(far, q, best_sq);
}

double KdTree::nearest_distance(const Vec3& query) const {
  if (root_ < 0) throw EmptyInputError("KdTree: empty point set");
  double best = std::numeric_limits<double>::infinity();
  search(root_, query, best);
  return std::sqrt(best);
}

namespace {

double mean_nearest(std::span<const Vec3> from, const KdTree& to) {
  double sum = 0.0;
  for (const Vec3& p : from) sum += to.nearest_distance(p);
  return sum / static_cast<double>(from.size());
}

}  // namespace

ChamferReport chamfer(std::span<const Vec3> pred, std::span<const Vec3> gt, bool align) {
  if (pred.empty() || gt.empty()) throw EmptyInputError("chamfer: empty point set");
  std::vector<Vec3> moved(pred.begin(), pred.end());
  if (align) {
    const SimilarityTransform sim = umeyama_align(pred, gt, true);
    for (Vec3& p : moved) p = sim.apply(p);
  }
  const KdTree gt_tree(gt);
  const KdTree pred_tree(moved);
  ChamferReport r;
  r.accuracy = mean_nearest(moved, gt_tree);
  r.completeness = mean_nearest(gt, pred_tree);
  r.overall = 0.5 * (r.accuracy + r.completeness);
  return r;
}

double fraction_below(std::span<const double> errors, double threshold_deg) {
  if (errors.empty()) return 0.0;
  const auto hits = std::count_if(errors.begin(), errors.end(), [&](double e) { return e < threshold_deg; });
  return static_cast<double>(hits) / static_cast<double>(errors.size());
}

PoseMetricReport pose_metrics(std::span<const Pose> pred, std::span<const Pose> gt, int max_threshold) {
  if (pred.size() != gt.size()) throw ShapeError("pose_metrics: prediction and ground-truth counts differ");
  if (pred.size() < 2) throw std::invalid_argument("pose_metrics: need at least 2 poses");
  if (max_threshold < 1) throw std::invalid_argument("pose_metrics: max_threshold must be >= 1");

  PoseMetricReport r;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t j = 0; j < pred.size(); ++j) {
      if (i == j) continue;
      const Pose rel_pred = relative_pose(pred[i], pred[j]);
      const Pose rel_gt = relative_pose(gt[i], gt[j]);
      r.rotation_errors_deg.push_back(rotation_angle_deg(rel_pred.rotation, rel_gt.rotation));
      if (rel_gt.translation.norm() > 0.0) {
        r.translation_errors_deg.push_back(direction_angle_deg(rel_pred.translation, rel_gt.translation));
      }
    }
  }
  if (r.translation_errors_deg.empty()) {
    throw DegenerateError("pose_metrics: every ground-truth relative translation is zero");
  }

  double auc = 0.0;
  for (int tau = 1; tau <= max_threshold; ++tau) {
    const double rra = fraction_below(r.rotation_errors_deg, tau);
    const double rta = fraction_below(r.translation_errors_deg, tau);
    r.rra_at[tau] = rra;
    r.rta_at[tau] = rta;
    auc += std::min(rra, rta);
  }
  r.auc30 = auc / static_cast<double>(max_threshold);
  return r;
}

double median(std::vector<double> values) {
  if (values.empty()) throw EmptyInputError("median: no values");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

DepthReport depth_metrics(std::span<const std::vector<double>> pred_depths,
                          std::span<const std::vector<double>> gt_depths,
                          std::span<const std::vector<std::uint8_t>> masks) {
  if (pred_depths.size() != gt_depths.size() || (!masks.empty() && masks.size() != gt_depths.size())) {
    throw ShapeError("depth_metrics: frame counts differ");
  }
  struct Sample {
    double pred;
    double gt;
  };
  std::vector<Sample> samples;
  DepthReport report;
  for (std::size_t f = 0; f < gt_depths.size(); ++f) {
    const auto& p = pred_depths[f];
    const auto& g = gt_depths[f];
    if (p.size() != g.size() || (!masks.empty() && !masks[f].empty() && masks[f].size() != g.size())) {
      throw ShapeError("depth_metrics: frame " + std::to_string(f) + " shapes differ");
    }
    for (std::size_t k = 0; k < g.size(); ++k) {
      if (!masks.empty() && !masks[f].empty() && !masks[f][k]) continue;
      if (!(g[k] > 0.0)) throw std::invalid_argument("depth_metrics: ground-truth depth must be > 0 on the mask");
      if (!(p[k] > 0.0)) {
        ++report.excluded_pixels;
        continue;
      }
      samples.push_back({p[k], g[k]});
    }
  }
  if (samples.empty()) throw EmptyInputError("depth_metrics: no valid pixels");

  std::vector<double> ratios;
  ratios.reserve(samples.size());
  for (const auto& s : samples) ratios.push_back(s.gt / s.pred);
  report.scale = median(std::move(ratios));

  double abs_rel = 0.0;
  std::size_t inliers = 0;
  for (const auto& s : samples) {
    const double d = report.scale * s.pred;
    abs_rel += std::abs(d - s.gt) / s.gt;
    if (std::max(d / s.gt, s.gt / d) < 1.25) ++inliers;
  }
  report.valid_pixels = samples.size();
  report.abs_rel = abs_rel / static_cast<double>(samples.size());
  report.delta_125 = static_cast<double>(inliers) / static_cast<double>(samples.size());
  return report;
}

}  // namespace streamrec
