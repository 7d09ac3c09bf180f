#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "streamrec/geomath.hpp"

namespace streamrec {

/// Exact nearest-neighbour queries over a fixed 3D point set.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> points);

  /// Distance from `query` to the closest stored point.
  double nearest_distance(const Vec3& query) const;
  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    std::size_t point = 0;
    int axis = 0;
    std::ptrdiff_t left = -1;
    std::ptrdiff_t right = -1;
  };

  std::ptrdiff_t build(std::vector<std::size_t>& order, std::size_t lo, std::size_t hi, int depth);
  void search(std::ptrdiff_t node, const Vec3& q, double& best_sq) const;

  std::vector<Vec3> points_;
  std::vector<Node> nodes_;
  std::ptrdiff_t root_ = -1;
};

struct ChamferReport {
  double accuracy = 0.0;
  double completeness = 0.0;
  double overall = 0.0;
};

/// Accuracy: mean nearest distance from each predicted point to the ground
/// truth. Completeness: the reverse. With `align`, the predicted cloud is
/// first mapped by the least-squares similarity onto the ground truth, which
/// requires index correspondence (equal sizes). Throws EmptyInputError on an
/// empty set.
ChamferReport chamfer(std::span<const Vec3> pred, std::span<const Vec3> gt, bool align);

struct PoseMetricReport {
  std::map<int, double> rra_at;  // degrees -> fraction of pairs below
  std::map<int, double> rta_at;
  double auc30 = 0.0;
  std::vector<double> rotation_errors_deg;     // one per ordered pair i != j
  std::vector<double> translation_errors_deg;  // pairs with nonzero GT translation
};

/// Fraction of `errors` strictly below `threshold_deg`.
double fraction_below(std::span<const double> errors, double threshold_deg);

/// Relative rotation / translation-direction accuracy over all ordered pairs,
/// reported at integer thresholds 1..max_threshold; AUC is the mean over
/// those thresholds of min(RRA, RTA). Throws std::invalid_argument for fewer
/// than 2 poses and DegenerateError when every ground-truth relative
/// translation is zero.
PoseMetricReport pose_metrics(std::span<const Pose> pred, std::span<const Pose> gt, int max_threshold = 30);

struct DepthReport {
  double abs_rel = 0.0;
  double delta_125 = 0.0;
  double scale = 1.0;
  std::size_t valid_pixels = 0;
  std::size_t excluded_pixels = 0;  // masked pixels with non-positive prediction
};

/// One depth map per frame, row-major; masks select evaluated pixels (an
/// empty mask selects every pixel). A single scale, the median of gt / pred
/// over all valid pixels of the sequence, aligns the predictions.
DepthReport depth_metrics(std::span<const std::vector<double>> pred_depths,
                          std::span<const std::vector<double>> gt_depths,
                          std::span<const std::vector<std::uint8_t>> masks);

double median(std::vector<double> values);

}  // namespace streamrec
