#include "streamrec/synth.hpp"

#include <cmath>
#include <stdexcept>

#include "streamrec/errors.hpp"

namespace streamrec {

namespace {

constexpr double kCameraHeight = 3.0;
constexpr double kMarchStep = 0.02;

// World-from-camera rotation for a camera looking down (-z world), turned by
// `yaw` about world z and tilted by `tilt` about the camera x axis.
Quaternion downward_rotation(double yaw, double tilt) {
  const Quaternion flip = Quaternion::from_axis_angle(Vec3::UnitX(), kPi);
  const Quaternion turn = Quaternion::from_axis_angle(Vec3::UnitZ(), yaw);
  const Quaternion lean = Quaternion::from_axis_angle(Vec3::UnitX(), tilt);
  return quat_mul(turn, quat_mul(flip, lean));
}

std::vector<Pose> make_trajectory(SeededRng& rng, std::size_t frames, Trajectory kind) {
  std::vector<Pose> poses;
  poses.reserve(frames);
  switch (kind) {
    case Trajectory::orbit: {
      const double radius = rng.uniform(0.8, 1.2);
      const double step = rng.uniform(0.08, 0.14);
      for (std::size_t i = 0; i < frames; ++i) {
        const double a = step * static_cast<double>(i);
        poses.push_back({downward_rotation(a + kPi / 2, deg_to_rad(10.0)),
                         Vec3(radius * std::cos(a), radius * std::sin(a), kCameraHeight)});
      }
      break;
    }
    case Trajectory::line: {
      const double heading = rng.uniform(-kPi, kPi);
      const Vec3 dir(std::cos(heading), std::sin(heading), 0.0);
      const double speed = rng.uniform(0.08, 0.15);
      for (std::size_t i = 0; i < frames; ++i) {
        const double s = speed * static_cast<double>(i);
        poses.push_back({downward_rotation(heading, deg_to_rad(5.0)),
                         Vec3(-0.5 * dir.x(), -0.5 * dir.y(), kCameraHeight) + s * dir +
                             Vec3(0.0, 0.0, 0.05 * std::sin(2.0 * s))});
      }
      break;
    }
    case Trajectory::random_walk: {
      Vec3 position(0.0, 0.0, kCameraHeight);
      Vec3 velocity(0.08, 0.0, 0.0);
      double yaw = 0.0;
      double yaw_rate = 0.0;
      for (std::size_t i = 0; i < frames; ++i) {
        poses.push_back({downward_rotation(yaw, deg_to_rad(8.0)), position});
        velocity += Vec3(0.02 * rng.normal(), 0.02 * rng.normal(), 0.005 * rng.normal());
        velocity.z() -= 0.2 * (position.z() - kCameraHeight);
        position += velocity;
        yaw_rate = 0.8 * yaw_rate + 0.03 * rng.normal();
        yaw += yaw_rate;
      }
      break;
    }
  }
  return poses;
}

}  // namespace

std::string_view to_string(Trajectory kind) {
  switch (kind) {
    case Trajectory::orbit: return "orbit";
    case Trajectory::line: return "line";
    case Trajectory::random_walk: return "random-walk";
  }
  return "orbit";
}

Trajectory parse_trajectory(std::string_view name) {
  if (name == "orbit") return Trajectory::orbit;
  if (name == "line") return Trajectory::line;
  if (name == "random-walk" || name == "random_walk") return Trajectory::random_walk;
  throw std::invalid_argument("unknown trajectory kind: " + std::string(name));
}

HeightField HeightField::random(SeededRng& rng) {
  std::vector<Term> terms;
  for (int k = 0; k < 4; ++k) {
    terms.push_back({rng.uniform(0.03, 0.08), rng.uniform(0.6, 1.8), rng.uniform(0.0, 2 * kPi),
                     rng.uniform(0.6, 1.8), rng.uniform(0.0, 2 * kPi)});
  }
  return HeightField(std::move(terms));
}

double HeightField::height(double x, double y) const {
  double z = 0.0;
  for (const auto& t : terms_) z += t.amplitude * std::sin(t.freq_x * x + t.phase_x) * std::cos(t.freq_y * y + t.phase_y);
  return z;
}

std::optional<double> HeightField::intersect(const Vec3& origin, const Vec3& dir, double max_s) const {
  auto above = [&](double s) {
    const Vec3 p = origin + s * dir;
    return p.z() - height(p.x(), p.y());
  };
  if (above(0.0) <= 0.0) return std::nullopt;
  const double step = kMarchStep / dir.norm();
  double lo = 0.0;
  double hi = step;
  while (above(hi) > 0.0) {
    lo = hi;
    hi += step;
    if (hi > max_s) return std::nullopt;
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (above(mid) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

SceneSample generate_scene(std::uint64_t seed, std::size_t frames, std::size_t height, std::size_t width,
                           Trajectory kind) {
  if (frames == 0 || height == 0 || width == 0) {
    throw std::invalid_argument("generate_scene: frames, height and width must be positive");
  }
  SeededRng rng(seed);
  SeededRng surface_rng = rng.fork(1);
  SeededRng path_rng = rng.fork(2);

  SceneSample s;
  s.seed = seed;
  s.trajectory = kind;
  s.height = height;
  s.width = width;
  const double focal = 1.2 * static_cast<double>(std::max(width, height));
  s.intrinsics = {focal, focal, 0.5 * static_cast<double>(width), 0.5 * static_cast<double>(height)};
  s.surface = HeightField::random(surface_rng);
  s.poses = make_trajectory(path_rng, frames, kind);

  for (std::size_t f = 0; f < frames; ++f) {
    s.frame_ids.push_back(static_cast<FrameId>(f));
    const Pose& pose = s.poses[f];
    const Mat3 r = pose.rotation.to_matrix();
    PointMap map(width, height);
    for (std::size_t row = 0; row < height; ++row) {
      for (std::size_t col = 0; col < width; ++col) {
        const Vec3 ray = s.intrinsics.ray(static_cast<double>(col), static_cast<double>(row));
        const auto hit = s.surface.intersect(pose.translation, r * ray);
        if (hit) {
          map.at(row, col) = *hit * ray;
        } else {
          map.valid[row * width + col] = 0;
        }
      }
    }
    s.points.push_back(std::move(map));
  }
  return s;
}

std::vector<Vec3> world_points(const Pose& pose, const PointMap& points) {
  std::vector<Vec3> out;
  out.reserve(points.pixel_count());
  for (std::size_t k = 0; k < points.pixel_count(); ++k) {
    if (points.valid[k]) out.push_back(pose.apply(points.points[k]));
  }
  return out;
}

PerturbedPredictions perturb_predictions(const SceneSample& sample, const NoiseLevels& noise) {
  if (noise.rotation_deg < 0.0 || noise.translation < 0.0 || noise.depth_noise < 0.0 || !(noise.depth_scale > 0.0)) {
    throw std::invalid_argument("perturb_predictions: noise levels must be non-negative, scale positive");
  }
  SeededRng rng(noise.seed);
  SeededRng axis_rng = rng.fork(1);
  SeededRng pose_rng = rng.fork(2);
  SeededRng pixel_rng = rng.fork(3);

  Vec3 axis(axis_rng.normal(), axis_rng.normal(), axis_rng.normal());
  if (axis.norm() == 0.0) axis = Vec3::UnitZ();
  const Quaternion drift = Quaternion::from_axis_angle(axis, deg_to_rad(noise.rotation_deg));

  PerturbedPredictions out;
  for (std::size_t f = 0; f < sample.frame_count(); ++f) {
    Pose p = sample.poses[f];
    if (f % 2 == 1 && noise.rotation_deg > 0.0) p.rotation = quat_mul(drift, p.rotation);
    if (noise.translation > 0.0) {
      p.translation += noise.translation * Vec3(pose_rng.normal(), pose_rng.normal(), pose_rng.normal());
    }
    out.poses.push_back(p);

    const PointMap& gt = sample.points[f];
    PointMap pm = gt;
    ConfidenceMap cm(gt.width, gt.height);
    for (std::size_t k = 0; k < gt.pixel_count(); ++k) {
      const double rel = noise.depth_noise > 0.0 ? noise.depth_noise * pixel_rng.normal() : 0.0;
      pm.points[k] = noise.depth_scale * (1.0 + rel) * gt.points[k];
      cm.conf[k] = 1.0 + 10.0 / (1.0 + 100.0 * std::abs(rel));
    }
    out.points.push_back(std::move(pm));
    out.confidence.push_back(std::move(cm));
  }
  return out;
}

OracleTokenSource::OracleTokenSource(std::uint64_t seed, std::size_t dim) : seed_(seed), dim_(dim) {
  if (dim < 7) throw ShapeError("OracleTokenSource: token width must be >= 7");
}

OracleTokenSource::Tokens OracleTokenSource::encode(FrameId frame, const Pose& pose, const PointMap& points) const {
  SeededRng rng = SeededRng(seed_).fork(static_cast<std::uint64_t>(frame));
  Tokens t;
  t.image = Matrix(points.pixel_count(), dim_);
  for (std::size_t k = 0; k < points.pixel_count(); ++k) {
    auto row = t.image.row(k);
    const Vec3 p = points.valid[k] ? points.points[k] : Vec3::Zero();
    row[0] = p.x();
    row[1] = p.y();
    row[2] = p.z();
    row[3] = 0.0;
    for (std::size_t c = 4; c < dim_; ++c) row[c] = rng.truncated_normal(0.02);
  }
  const Quaternion& q = pose.rotation;
  t.camera = {q.w, q.x, q.y, q.z, pose.translation.x(), pose.translation.y(), pose.translation.z()};
  for (std::size_t c = 7; c < dim_; ++c) t.camera.push_back(rng.truncated_normal(0.02));
  return t;
}

}  // namespace streamrec
