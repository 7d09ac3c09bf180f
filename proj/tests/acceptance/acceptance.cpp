// Acceptance run: one line per criterion, nonzero exit when any fails.
// Every check compares the library against an oracle written here.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <json.hpp>

#include "cli.hpp"
#include "streamrec/attention.hpp"
#include "streamrec/campool.hpp"
#include "streamrec/geomath.hpp"
#include "streamrec/losses.hpp"
#include "streamrec/metrics.hpp"
#include "streamrec/pipeline.hpp"
#include "streamrec/synth.hpp"
#include "streamrec/windowing.hpp"
#include "test_support.hpp"

using namespace streamrec;
using nlohmann::json;
using testing_support::Rand;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Verdict {
  bool ok = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond && ok) detail = what;
    ok = ok && cond;
  }
};

// 1. Window mask against the "key window <= query window" predicate.
Verdict mask_oracle() {
  Verdict v;
  const auto start = Clock::now();
  for (std::size_t w : {2, 4, 8})
    for (std::size_t k : {1, 4})
      for (std::size_t t = 1; t <= 6; ++t) {
        const AttentionMask m = build_window_mask(w, t, k, 6);
        v.require(m.rows == w * k && m.cols == 6 * w * k, "window mask shape");
        for (std::size_t q = 0; q < m.rows; ++q)
          for (std::size_t c = 0; c < m.cols; ++c) {
            const std::size_t key_window = c / (w * k) + 1;
            v.require(m(q, c) == (key_window <= t), "window mask entry");
          }
      }
  for (std::size_t w : {2, 4, 8})
    for (std::size_t windows = 1; windows <= 6; ++windows)
      for (std::size_t k : {1, 4}) {
        const AttentionMask m = build_stacked_window_mask(w, windows, k);
        std::size_t allowed = 0;
        for (std::size_t q = 0; q < m.rows; ++q)
          for (std::size_t c = 0; c < m.cols; ++c) {
            const bool expect = c / (w * k) <= q / (w * k);
            v.require(m(q, c) == expect, "stacked mask entry");
            allowed += m(q, c) ? 1 : 0;
          }
        if (k == 1) v.require(allowed == w * w * windows * (windows + 1) / 2, "allowed-entry count");
      }
  const double secs = seconds_since(start);
  v.require(secs < 1.0, "runtime " + std::to_string(secs) + " s");
  return v;
}

ModelConfig toy_config(std::size_t depth) {
  return {.dim = 16, .heads = 2, .depth = depth, .camera_depth = depth, .state_count = 4, .window_size = 4,
          .patch = 4, .head_width = 8};
}

// 2. Window outputs do not depend on windows appended later.
Verdict causality() {
  Verdict v;
  const auto start = Clock::now();
  for (std::size_t depth : {0, 1, 2})
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Model model = Model::random(toy_config(depth), 100 + seed);
      const SceneSample scene = generate_scene(seed, 12, 8, 8, Trajectory::random_walk);
      const auto obs = observations_from(scene);
      // Prefix of 6 frames yields windows 1..2 without padding; the full
      // stream appends windows 3..5.
      StreamingReconstructor prefix(model, 8, 8), full(model, 8, 8);
      for (std::size_t f = 0; f < 6; ++f) prefix.push(obs[f]);
      for (const auto& o : obs) full.push(o);
      full.finish();
      v.require(prefix.windows().size() == 2 && full.windows().size() == 5, "window counts");
      for (std::size_t k = 0; k < 2; ++k) {
        const WindowRecord& a = prefix.windows()[k];
        const WindowRecord& b = full.windows()[k];
        v.require(a.camera_tokens == b.camera_tokens, "decoder camera tokens changed");
        for (std::size_t s = 0; s < a.poses.size(); ++s) {
          const Pose& p = a.poses[s];
          const Pose& q = b.poses[s];
          v.require(p.rotation.w == q.rotation.w && p.rotation.x == q.rotation.x && p.rotation.y == q.rotation.y &&
                        p.rotation.z == q.rotation.z && p.translation == q.translation,
                    "camera head pose changed");
        }
      }
      // Stacked camera head: rows of the first windows are bitwise equal
      // whether or not later windows are present.
      const Matrix all = full.pool().tokens();
      std::vector<std::size_t> ids;
      for (const auto& e : full.pool().entries()) ids.push_back(e.window);
      const Matrix raw_all = camera_head_raw(all, ids, model.camera_head);
      const std::size_t keep = 2 * model.config.window_size;
      const std::vector<std::size_t> ids_prefix(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(keep));
      const Matrix raw_prefix = camera_head_raw(all.slice_rows(0, keep), ids_prefix, model.camera_head);
      v.require(raw_all.slice_rows(0, keep) == raw_prefix, "stacked camera head rows changed");
    }
  const double secs = seconds_since(start);
  v.require(secs < 10.0, "runtime " + std::to_string(secs) + " s");
  return v;
}

// Toy problem for the loss checks, drawn with the test-side generator.
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
      q.points[k] = rng.uniform(0.5, 2.0) * g.points[k] + 0.3 * rng.vec();
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
    noisy.rotation = quat_mul(Quaternion::from_axis_angle(rng.vec(), rng.uniform(0.05, 0.5)), noisy.rotation);
    p.pred_poses.push_back(noisy);
  }
  return p;
}

// Parameters: points, raw confidences, raw quaternion components, translations.
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

double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max(scale, std::abs(numeric[i]));
  }
  return diff / scale;
}

// 3. Analytic loss gradients against central differences.
Verdict gradient_fidelity() {
  Verdict v;
  const auto start = Clock::now();
  Rand rng(3);
  double worst_total = 0.0, worst_pmap = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Problem base = random_problem(rng, 2 + trial % 3, 3 + trial % 4);
    const std::vector<double> x = flatten(base);

    const auto f_total = [&](const std::vector<double>& y) {
      const Problem q = unflatten(base, y);
      return total_loss(q.pred, q.conf, q.pred_poses, q.gt, q.gt_poses).total;
    };
    const LossBreakdown b = total_loss(base.pred, base.conf, base.pred_poses, base.gt, base.gt_poses);
    std::vector<double> analytic;
    for (const auto& fr : b.grad_points)
      for (const auto& g : fr) analytic.insert(analytic.end(), {g.x(), g.y(), g.z()});
    for (const auto& fr : b.grad_raw_conf) analytic.insert(analytic.end(), fr.begin(), fr.end());
    for (const auto& g : b.grad_rotation) analytic.insert(analytic.end(), g.begin(), g.end());
    for (const auto& g : b.grad_translation) analytic.insert(analytic.end(), {g.x(), g.y(), g.z()});
    v.require(analytic.size() == x.size(), "gradient length");
    if (analytic.size() != x.size()) break;
    worst_total = std::max(worst_total, max_relative_error(analytic, central_difference(f_total, x, 1e-5)));

    const auto f_pmap = [&](const std::vector<double>& y) {
      const Problem q = unflatten(base, y);
      return pmap_loss(q.pred, q.conf, q.gt).value;
    };
    const PmapLoss pm = pmap_loss(base.pred, base.conf, base.gt);
    std::vector<double> pm_grad;
    for (const auto& fr : pm.grad_points)
      for (const auto& g : fr) pm_grad.insert(pm_grad.end(), {g.x(), g.y(), g.z()});
    for (const auto& fr : pm.grad_raw_conf) pm_grad.insert(pm_grad.end(), fr.begin(), fr.end());
    pm_grad.resize(x.size(), 0.0);
    worst_pmap = std::max(worst_pmap, max_relative_error(pm_grad, central_difference(f_pmap, x, 1e-5)));
  }
  v.require(worst_total < 1e-5, "total-loss gradient error " + std::to_string(worst_total));
  v.require(worst_pmap < 1e-5, "point-map gradient error " + std::to_string(worst_pmap));
  const double secs = seconds_since(start);
  v.require(secs < 30.0, "runtime " + std::to_string(secs) + " s");
  if (v.ok) {
    std::ostringstream s;
    s << "max rel err " << std::max(worst_total, worst_pmap);
    v.detail = s.str();
  }
  return v;
}

double relative_change(double after, double before) { return std::abs(after - before) / std::abs(before); }

// 4. Loss invariance under rigid motion and positive scaling of predictions.
Verdict gauge_invariance() {
  Verdict v;
  Rand rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Problem p = random_problem(rng, 4, 6);
    const PmapLoss pm = pmap_loss(p.pred, p.conf, p.gt);
    const double cam = camera_loss(p.pred_poses, p.gt_poses, pm.norm_factor_pred, pm.norm_factor_gt).value;

    const Pose g{rng.quat(), rng.vec(5.0)};
    std::vector<Pose> moved;
    for (const auto& pose : p.pred_poses) moved.push_back(g.compose(pose));
    const double cam_rigid = camera_loss(moved, p.gt_poses, pm.norm_factor_pred, pm.norm_factor_gt).value;
    v.require(std::abs(cam_rigid - cam) <= 1e-9, "camera loss under rigid motion");

    const double s = rng.uniform(0.1, 10.0);
    Problem q = p;
    for (auto& m : q.pred)
      for (auto& x : m.points) x *= s;
    for (auto& pose : q.pred_poses) pose.translation *= s;
    const PmapLoss pm_s = pmap_loss(q.pred, q.conf, q.gt);
    const double cam_s = camera_loss(q.pred_poses, q.gt_poses, pm_s.norm_factor_pred, pm_s.norm_factor_gt).value;
    v.require(relative_change(pm_s.value, pm.value) <= 1e-9, "point-map loss under scaling");
    v.require(relative_change(cam_s, cam) <= 1e-9, "camera loss under scaling");
  }
  return v;
}

// Reference schedule: stride w/2, full windows while they fit, then one
// window padded with the last frame if any frame is still uncovered.
std::vector<std::vector<FrameId>> oracle_schedule(const std::vector<FrameId>& ids, std::size_t w) {
  std::vector<std::vector<FrameId>> out;
  const std::size_t s = w / 2, n = ids.size();
  std::size_t start = 0, covered = 0;
  for (; start + w <= n; start += s) {
    out.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(start),
                     ids.begin() + static_cast<std::ptrdiff_t>(start + w));
    covered = start + w;
  }
  if (n > 0 && covered < n) {
    std::vector<FrameId> pad(ids.begin() + static_cast<std::ptrdiff_t>(start), ids.end());
    while (pad.size() < w) pad.push_back(ids.back());
    out.push_back(pad);
  }
  return out;
}

bool frames_equal(const MergedFrame& a, const MergedFrame& b) {
  return a.pose.translation == b.pose.translation && a.pose.rotation.w == b.pose.rotation.w &&
         a.points.points == b.points.points && a.confidence.conf == b.confidence.conf &&
         a.pose_window == b.pose_window && a.pixel_window == b.pixel_window;
}

// 5. One-by-one and batch feeding agree with each other and the reference.
Verdict streaming_equivalence() {
  Verdict v;
  for (std::size_t w : {2, 4})
    for (std::size_t t = 1; t <= 20; ++t) {
      std::vector<FrameId> ids;
      for (std::size_t f = 1; f <= t; ++f) ids.push_back(static_cast<FrameId>(f));

      StreamState one(w), batch(w);
      std::vector<Window> a, b;
      for (FrameId id : ids)
        if (auto win = one.push_frame(id)) a.push_back(*win);
      if (auto win = one.finalize()) a.push_back(*win);
      b = batch.push_frames(ids);
      if (auto win = batch.finalize()) b.push_back(*win);
      v.require(a == b, "window sequences differ");

      const auto expect = oracle_schedule(ids, w);
      v.require(a.size() == expect.size() && a.size() == expected_window_count(t, w), "window count");
      for (std::size_t k = 0; k < std::min(a.size(), expect.size()); ++k) {
        v.require(a[k].index == k + 1 && a[k].frames == expect[k], "window frames");
        for (std::size_t s = 0; s < w; ++s) {
          const bool dup = s > 0 && expect[k][s] == expect[k][s - 1];
          v.require(a[k].duplicated[s] == dup, "duplication flags");
        }
      }

      // Same predictions merged through both feeding modes.
      Rand rng(static_cast<unsigned>(w * 100 + t));
      for (std::size_t k = 0; k < a.size(); ++k) {
        std::vector<FramePrediction> preds(w);
        for (auto& p : preds) {
          p.pose = rng.pose();
          p.points = PointMap(2, 2);
          p.confidence = ConfidenceMap(2, 2);
          for (std::size_t i = 0; i < 4; ++i) {
            p.points.points[i] = rng.vec();
            p.confidence.conf[i] = 1.0 + rng.integer(0, 3);
          }
        }
        one.merge_overlap(a[k], preds);
        batch.merge_overlap(b[k], preds);
      }
      v.require(one.outputs().size() == t && batch.outputs().size() == t, "merged frame count");
      for (const auto& [id, frame] : one.outputs())
        v.require(batch.outputs().count(id) && frames_equal(frame, batch.outputs().at(id)), "merged outputs differ");
    }

  // Full pipeline: frame-by-frame pushes against the batch driver.
  const Model model = Model::random(toy_config(1), 5);
  for (std::size_t t : {1, 3, 6, 9}) {
    const auto obs = observations_from(generate_scene(t, t, 8, 8, Trajectory::orbit));
    StreamingReconstructor rec(model, 8, 8);
    for (const auto& o : obs) rec.push(o);
    rec.finish();
    const RunResult r = run_stream(model, obs);
    for (std::size_t f = 0; f < t; ++f)
      v.require(rec.outputs().at(obs[f].id).points.points == r.points[f].points, "pipeline outputs differ");
  }

  // Worked examples with 1-based frame ids.
  StreamState six(4);
  std::vector<Window> sw = six.push_frames(std::vector<FrameId>{1, 2, 3, 4, 5, 6});
  if (auto win = six.finalize()) sw.push_back(*win);
  v.require(sw.size() == 2 && sw[0].frames == std::vector<FrameId>{1, 2, 3, 4} &&
                sw[1].frames == std::vector<FrameId>{3, 4, 5, 6},
            "six-frame schedule");
  StreamState five(4);
  std::vector<Window> fw = five.push_frames(std::vector<FrameId>{1, 2, 3, 4, 5});
  const auto last = five.finalize();
  v.require(fw.size() == 1 && last && last->frames == std::vector<FrameId>{3, 4, 5, 5} &&
                last->duplicated == std::vector<bool>{false, false, false, true},
            "five-frame padded window");
  return v;
}

// 6. Randomized overlap cases against a reference merge.
Verdict overlap_merge() {
  Verdict v;
  Rand rng(6);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t w = rng.integer(0, 1) ? 4 : 2;
    const std::size_t t = static_cast<std::size_t>(rng.integer(1, 12));
    const std::size_t px = static_cast<std::size_t>(rng.integer(1, 6));
    std::vector<FrameId> ids;
    FrameId next = rng.integer(0, 3);
    for (std::size_t f = 0; f < t; ++f) {
      ids.push_back(next);
      next += rng.integer(1, 3);
    }
    StreamState state(w);
    std::vector<Window> windows = state.push_frames(ids);
    if (auto win = state.finalize()) windows.push_back(*win);

    struct Best {
      Pose pose;
      std::size_t pose_window = 0;
      std::vector<double> conf;
      std::vector<Vec3> point;
      std::vector<std::size_t> from;
    };
    std::map<FrameId, Best> oracle;
    for (const Window& win : windows) {
      std::vector<FramePrediction> preds(w);
      for (auto& p : preds) {
        p.pose = rng.pose();
        p.points = PointMap(px, 1);
        p.confidence = ConfidenceMap(px, 1);
        for (std::size_t i = 0; i < px; ++i) {
          p.points.points[i] = rng.vec();
          // Few distinct levels so ties are frequent.
          p.confidence.conf[i] = 1.0 + 0.5 * rng.integer(0, 3);
        }
      }
      state.merge_overlap(win, preds);
      for (std::size_t s = 0; s < w; ++s) {
        if (win.duplicated[s]) continue;
        Best& b = oracle[win.frames[s]];
        b.pose = preds[s].pose;
        b.pose_window = win.index;
        if (b.conf.empty()) {
          b.conf = preds[s].confidence.conf;
          b.point = preds[s].points.points;
          b.from.assign(px, win.index);
          continue;
        }
        for (std::size_t i = 0; i < px; ++i) {
          const double c = preds[s].confidence.conf[i];
          if (c > b.conf[i] || c == b.conf[i]) {
            b.conf[i] = c;
            b.point[i] = preds[s].points.points[i];
            b.from[i] = win.index;
          }
        }
      }
    }
    v.require(state.outputs().size() == oracle.size(), "merged frame count");
    for (const auto& [id, b] : oracle) {
      const auto it = state.outputs().find(id);
      if (it == state.outputs().end()) {
        v.require(false, "missing frame");
        continue;
      }
      const MergedFrame& m = it->second;
      v.require(m.pose_window == b.pose_window && m.pose.translation == b.pose.translation &&
                    m.pose.rotation.w == b.pose.rotation.w,
                "pose not from the later window");
      v.require(m.confidence.conf == b.conf && m.points.points == b.point && m.pixel_window == b.from,
                "pixel winner");
    }
  }
  return v;
}

double diameter(const std::vector<Vec3>& pts) {
  double d = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) d = std::max(d, (pts[i] - pts[j]).norm());
  return d;
}

// 7. Similarity recovery on exactly transformed clouds.
Verdict umeyama_recovery() {
  Verdict v;
  double worst = 0.0, worst_chamfer = 0.0;
  for (unsigned seed = 0; seed < 50; ++seed) {
    Rand rng(1000 + seed);
    const std::size_t n = static_cast<std::size_t>(rng.integer(10, 1000));
    const double scale = std::exp(rng.uniform(-2.0, 2.0));
    const Eigen::Matrix3d r = testing_support::eigen_matrix(rng.quat());
    const Vec3 shift = rng.vec(10.0);
    std::vector<Vec3> src, dst;
    for (std::size_t i = 0; i < n; ++i) {
      src.push_back(rng.vec(3.0));
      dst.push_back(scale * r * src.back() + shift);
    }
    const SimilarityTransform s = umeyama_align(src, dst);
    double residual = 0.0;
    for (std::size_t i = 0; i < n; ++i) residual = std::max(residual, (s.apply(src[i]) - dst[i]).norm());
    const double rel = residual / diameter(dst);
    worst = std::max(worst, rel);
    v.require(rel <= 1e-9, "alignment residual");
    const ChamferReport c = chamfer(src, dst, true);
    worst_chamfer = std::max(worst_chamfer, c.overall);
    v.require(c.overall <= 1e-9, "aligned chamfer");
  }
  if (v.ok) {
    std::ostringstream s;
    s << "max residual/diameter " << worst << ", max chamfer " << worst_chamfer;
    v.detail = s.str();
  }
  return v;
}

// Pairwise relative errors enumerated with Eigen rotation matrices.
void enumerate_pairs(const std::vector<Pose>& pred, const std::vector<Pose>& gt, std::vector<double>& rot,
                     std::vector<double>& trans) {
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (std::size_t j = 0; j < pred.size(); ++j) {
      if (i == j) continue;
      const Eigen::Matrix3d ri = testing_support::eigen_matrix(pred[i].rotation);
      const Eigen::Matrix3d rj = testing_support::eigen_matrix(pred[j].rotation);
      const Eigen::Matrix3d gi = testing_support::eigen_matrix(gt[i].rotation);
      const Eigen::Matrix3d gj = testing_support::eigen_matrix(gt[j].rotation);
      const Eigen::Matrix3d e = (rj.transpose() * ri).transpose() * (gj.transpose() * gi);
      rot.push_back(Eigen::AngleAxisd(e).angle() * 180.0 / kPi);
      const Vec3 tp = rj.transpose() * (pred[i].translation - pred[j].translation);
      const Vec3 tg = gj.transpose() * (gt[i].translation - gt[j].translation);
      if (tg.norm() == 0.0) continue;
      const double c = std::clamp(tp.normalized().dot(tg.normalized()), -1.0, 1.0);
      trans.push_back(std::acos(c) * 180.0 / kPi);
    }
}

double share_below(const std::vector<double>& e, int tau) {
  return static_cast<double>(std::count_if(e.begin(), e.end(), [&](double x) { return x < tau; })) /
         static_cast<double>(e.size());
}

// 8. Pose metrics against enumeration, a constructed case and the AUC bound.
Verdict metric_oracles() {
  Verdict v;
  Rand rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Pose> gt, pred;
    for (int i = 0; i < 5; ++i) {
      gt.push_back(rng.pose(3.0));
      Pose p = gt.back();
      p.rotation = quat_mul(Quaternion::from_axis_angle(rng.vec(), deg_to_rad(rng.uniform(0, 40))), p.rotation);
      p.translation += rng.uniform(0.0, 1.5) * rng.vec();
      pred.push_back(p);
    }
    const PoseMetricReport r = pose_metrics(pred, gt);
    std::vector<double> rot, trans;
    enumerate_pairs(pred, gt, rot, trans);
    v.require(r.rotation_errors_deg.size() == 20 && trans.size() == 20, "pair count");
    double auc = 0.0;
    for (int tau = 1; tau <= 30; ++tau) {
      v.require(r.rra_at.at(tau) == share_below(rot, tau), "RRA@" + std::to_string(tau));
      v.require(r.rta_at.at(tau) == share_below(trans, tau), "RTA@" + std::to_string(tau));
      auc += std::min(share_below(rot, tau), share_below(trans, tau));
    }
    v.require(std::abs(r.auc30 - auc / 30.0) <= 1e-15, "AUC@30");
    v.require(r.auc30 <= std::min(r.rra_at.at(30), r.rta_at.at(30)), "AUC bound");
  }

  // Two cameras; the second prediction is turned 5 degrees about its own axis.
  for (int trial = 0; trial < 10; ++trial) {
    const std::vector<Pose> gt{rng.pose(), rng.pose()};
    std::vector<Pose> pred = gt;
    pred[1].rotation = quat_mul(pred[1].rotation, Quaternion::from_axis_angle(rng.vec(), deg_to_rad(5.0)));
    const PoseMetricReport r = pose_metrics(pred, gt);
    v.require(r.rra_at.at(4) == 0.0 && r.rra_at.at(6) == 1.0, "5 degree case");
    v.require(r.auc30 <= std::min(r.rra_at.at(30), r.rta_at.at(30)), "AUC bound");
  }
  return v;
}

struct CliOutcome {
  int code;
  std::string out, err;
};

CliOutcome invoke(const std::vector<std::string>& args) {
  std::istringstream in;
  std::ostringstream out, err;
  const int code = cli::run(args, in, out, err);
  return {code, out.str(), err.str()};
}

// 9. Oracle tokens with identity heads reproduce the scene through the CLI.
Verdict closed_loop(const fs::path& dir) {
  Verdict v;
  const std::string gt = (dir / "gt.srseq").string(), pred = (dir / "pred.srseq").string();
  const CliOutcome s = invoke({"synth", "--frames", "12", "--height", "12", "--width", "16", "--seed", "9", "-o", gt});
  v.require(s.code == 0, "synth failed: " + s.err);
  const CliOutcome r = invoke({"run", "-i", gt, "-o", pred, "--oracle"});
  v.require(r.code == 0, "run failed: " + r.err);
  const CliOutcome e = invoke({"eval", "-p", pred, "-g", gt});
  v.require(e.code == 0, "eval failed: " + e.err);
  if (!v.ok) return v;
  const json m = json::parse(e.out);
  const double auc = m.at("pose").at("auc30").get<double>();
  const double overall = m.at("chamfer").at("overall").get<double>();
  v.require(auc == 1.0, "AUC@30 " + std::to_string(auc));
  v.require(overall <= 1e-9, "chamfer " + std::to_string(overall));
  std::ostringstream d;
  d << "AUC@30 " << auc << ", chamfer " << overall;
  if (v.ok) v.detail = d.str();
  return v;
}

// 10. Pool memory per frame and the key/value-cache ratio, then a timed bench.
Verdict pool_footprint() {
  Verdict v;
  const ModelConfig cfg = toy_config(2);
  const Model model = Model::random(cfg, 10);
  const RunResult run = run_stream(model, observations_from(generate_scene(10, 9, 8, 8, Trajectory::line)));
  const std::size_t c = cfg.dim;
  v.require(run.pool.payload_bytes() == run.pool.size() * 2 * c * 8, "pool bytes per entry");

  const auto start = Clock::now();
  const CliOutcome b = invoke({"bench", "--frames", "100"});
  const double secs = seconds_since(start);
  v.require(b.code == 0, "bench failed: " + b.err);
  if (!v.ok) return v;
  const json j = json::parse(b.out);
  const ModelConfig defaults;
  const std::size_t tokens = (32 / defaults.patch) * (32 / defaults.patch) + 1;
  const std::size_t pool = 2 * defaults.dim * 8;
  const std::size_t kv = defaults.depth * 2 * tokens * defaults.dim * 8;
  const json& mem = j.at("memory");
  v.require(mem.at("pool_bytes_per_frame").get<std::size_t>() == pool, "reported pool bytes");
  v.require(mem.at("measured_pool_bytes_per_entry").get<double>() == static_cast<double>(pool), "measured pool bytes");
  v.require(mem.at("kv_cache_bytes_per_frame").get<std::size_t>() == kv, "reported cache bytes");
  v.require(mem.at("kv_to_pool_ratio").get<double>() == static_cast<double>(kv) / static_cast<double>(pool),
            "reported ratio");
  v.require(j.at("fps").get<double>() > 0.0, "fps");
  v.require(secs < 60.0, "bench runtime " + std::to_string(secs) + " s");
  if (v.ok) {
    std::ostringstream d;
    d << pool << " B/frame vs " << kv << " B/frame cache (ratio " << static_cast<double>(kv) / pool << "), "
      << j.at("fps").get<double>() << " fps, " << secs << " s";
    v.detail = d.str();
  }
  return v;
}

}  // namespace

int main() {
  const fs::path dir = fs::temp_directory_path() / ("streamrec_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"mask oracle", mask_oracle},
      {"causality", causality},
      {"gradient fidelity", gradient_fidelity},
      {"gauge invariance", gauge_invariance},
      {"streaming equivalence", streaming_equivalence},
      {"overlap merge", overlap_merge},
      {"alignment recovery", umeyama_recovery},
      {"metric oracles", metric_oracles},
      {"closed-loop oracle run", [&] { return closed_loop(dir); }},
      {"pool footprint", pool_footprint},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    const auto start = Clock::now();
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v.ok = false;
      v.detail = std::string("exception: ") + e.what();
    }
    std::printf("[%s] AC%zu %s (%.2f s)%s%s\n", v.ok ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                seconds_since(start), v.detail.empty() ? "" : ": ", v.detail.c_str());
    failed += v.ok ? 0 : 1;
  }
  fs::remove_all(dir);
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
