#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "streamrec/geomath.hpp"
#include "streamrec/heads.hpp"
#include "streamrec/tensor.hpp"
#include "streamrec/windowing.hpp"

namespace streamrec {

enum class Trajectory { orbit, line, random_walk };

std::string_view to_string(Trajectory kind);
/// Accepts "orbit", "line", "random-walk". Throws std::invalid_argument.
Trajectory parse_trajectory(std::string_view name);

/// Pinhole intrinsics; pixel (row, col) samples the ray through its centre.
struct Intrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;

  /// Camera-frame ray with unit z for a (possibly fractional) pixel position.
  Vec3 ray(double col, double row) const { return {(col + 0.5 - cx) / fx, (row + 0.5 - cy) / fy, 1.0}; }
};

/// z = sum_k a_k sin(fx_k x + px_k) cos(fy_k y + py_k).
class HeightField {
 public:
  struct Term {
    double amplitude, freq_x, phase_x, freq_y, phase_y;
  };

  HeightField() = default;
  explicit HeightField(std::vector<Term> terms) : terms_(std::move(terms)) {}
  static HeightField random(SeededRng& rng);

  double height(double x, double y) const;
  /// Smallest s > 0 with origin + s * dir on the surface, if any within
  /// `max_s`. Converges to the last representable bracket.
  std::optional<double> intersect(const Vec3& origin, const Vec3& dir, double max_s = 100.0) const;

  const std::vector<Term>& terms() const { return terms_; }

 private:
  std::vector<Term> terms_;
};

struct SceneSample {
  std::uint64_t seed = 0;
  Trajectory trajectory = Trajectory::orbit;
  std::size_t height = 0;
  std::size_t width = 0;
  Intrinsics intrinsics;
  HeightField surface;
  std::vector<FrameId> frame_ids;
  std::vector<Pose> poses;  // world-from-camera
  std::vector<PointMap> points;

  std::size_t frame_count() const { return poses.size(); }
};

/// Seeded camera trajectory over a height-field surface; every pixel is ray
/// cast into a local point map. Throws std::invalid_argument when frames,
/// height or width is zero.
SceneSample generate_scene(std::uint64_t seed, std::size_t frames, std::size_t height, std::size_t width,
                           Trajectory kind);

/// Frame's local points expressed in world coordinates (valid pixels only).
std::vector<Vec3> world_points(const Pose& pose, const PointMap& points);

struct NoiseLevels {
  double rotation_deg = 0.0;  // world-frame rotation applied to odd frames
  double translation = 0.0;   // stddev of additive translation noise
  double depth_scale = 1.0;   // uniform factor on all predicted points
  double depth_noise = 0.0;   // stddev of per-pixel relative depth noise
  std::uint64_t seed = 0;
};

struct PerturbedPredictions {
  std::vector<Pose> poses;
  std::vector<PointMap> points;
  std::vector<ConfidenceMap> confidence;
};

/// Ground truth corrupted by controlled noise. Odd-indexed frames are rotated
/// by exactly `rotation_deg` about one seeded world axis, so every pair of
/// frames with different parity has exactly that relative rotation error.
/// Confidence falls as the injected per-pixel error grows.
PerturbedPredictions perturb_predictions(const SceneSample& sample, const NoiseLevels& noise);

/// Deterministic tokens carrying a frame's ground truth, for closed-loop
/// runs. Image tokens hold one pixel each (patch size 1): channels 0..2 are
/// the local point, channel 3 a raw confidence of 0. The camera token holds
/// (qw, qx, qy, qz, tx, ty, tz) in channels 0..6. Remaining channels are
/// seeded filler.
class OracleTokenSource {
 public:
  OracleTokenSource(std::uint64_t seed, std::size_t dim);

  struct Tokens {
    Matrix image;                // (H*W) x dim
    std::vector<double> camera;  // dim
  };

  Tokens encode(FrameId frame, const Pose& pose, const PointMap& points) const;
  std::size_t dim() const { return dim_; }

 private:
  std::uint64_t seed_;
  std::size_t dim_;
};

}  // namespace streamrec
