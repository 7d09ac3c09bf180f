#include "streamrec/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "json.hpp"
#include "streamrec/attention.hpp"
#include "streamrec/errors.hpp"
#include "streamrec/geomath.hpp"
#include "streamrec/losses.hpp"
#include "streamrec/metrics.hpp"
#include "streamrec/pipeline.hpp"
#include "streamrec/synth.hpp"
#include "streamrec/windowing.hpp"

namespace streamrec {

namespace {

CheckResult make(std::string name, double measured, double limit, bool passed, std::string detail) {
  return {std::move(name), passed, measured, limit, std::move(detail)};
}

CheckResult check_mask_oracle() {
  std::size_t mismatches = 0;
  std::size_t count_errors = 0;
  for (std::size_t w : {2, 4, 8}) {
    for (std::size_t t = 1; t <= 6; ++t) {
      for (std::size_t tpf : {1, 4}) {
        const auto m = build_window_mask(w, t, tpf);
        const std::size_t per_window = w * tpf;
        for (std::size_t q = 0; q < per_window; ++q) {
          for (std::size_t k = 0; k < m.cols; ++k) {
            const bool expect = k / per_window + 1 <= t;
            if (static_cast<bool>(m(q, k)) != expect) ++mismatches;
          }
        }
      }
      const auto stacked = build_stacked_window_mask(w, t, 1);
      const auto allowed = static_cast<std::size_t>(std::count(stacked.allowed.begin(), stacked.allowed.end(), 1));
      if (allowed != w * w * t * (t + 1) / 2) ++count_errors;
    }
  }
  const double bad = static_cast<double>(mismatches + count_errors);
  return make("mask_oracle", bad, 0.0, bad == 0.0,
              std::to_string(mismatches) + " entry mismatches, " + std::to_string(count_errors) + " count errors");
}

std::vector<FrameObservation> toy_frames(std::uint64_t seed, std::size_t frames, std::size_t size) {
  return observations_from(generate_scene(seed, frames, size, size, Trajectory::orbit));
}

CheckResult check_causality(std::uint64_t seed) {
  std::size_t violations = 0;
  for (std::size_t depth : {0, 1, 2}) {
    for (std::uint64_t s = seed; s < seed + 2; ++s) {
      ModelConfig cfg;
      cfg.dim = 16;
      cfg.heads = 2;
      cfg.depth = depth;
      cfg.camera_depth = depth;
      cfg.state_count = 4;
      cfg.patch = 4;
      cfg.head_width = 8;
      const Model model = Model::random(cfg, s);
      const auto frames = toy_frames(s, 8, 8);

      StreamingReconstructor shortrun(model, 8, 8);
      StreamingReconstructor longrun(model, 8, 8);
      for (std::size_t f = 0; f < 4; ++f) shortrun.push(frames[f]);
      for (const auto& f : frames) longrun.push(f);
      const auto& a = shortrun.windows();
      const auto& b = longrun.windows();
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (!(a[i].camera_tokens == b[i].camera_tokens)) ++violations;
        for (std::size_t k = 0; k < a[i].poses.size(); ++k) {
          const auto& p = a[i].poses[k];
          const auto& q = b[i].poses[k];
          if (p.rotation.w != q.rotation.w || p.rotation.x != q.rotation.x || p.rotation.y != q.rotation.y ||
              p.rotation.z != q.rotation.z || p.translation != q.translation) {
            ++violations;
          }
        }
      }

      // Whole-sequence evaluation with the stacked mask must not let later
      // windows influence earlier rows either.
      const Matrix tokens = longrun.pool().tokens();
      std::vector<std::size_t> ids;
      for (const auto& e : longrun.pool().entries()) ids.push_back(e.window);
      const std::size_t head = a.size() * cfg.window_size;
      const Matrix full = camera_head_raw(tokens, ids, model.camera_head);
      const Matrix part = camera_head_raw(tokens.slice_rows(0, head),
                                          std::span<const std::size_t>(ids).first(head), model.camera_head);
      if (!(full.slice_rows(0, head) == part)) ++violations;
    }
  }
  return make("causality", static_cast<double>(violations), 0.0, violations == 0,
              std::to_string(violations) + " outputs changed when future windows were appended");
}

struct ToyLossInstance {
  std::vector<PointMap> pred, gt;
  std::vector<double> raw_conf;  // flattened over frames
  std::vector<Pose> pred_poses, gt_poses;
  std::size_t frames = 0, pixels = 0;
};

ToyLossInstance toy_loss_instance(SeededRng& rng) {
  ToyLossInstance t;
  t.frames = 3;
  const std::size_t side = 3;
  t.pixels = side * side;
  for (std::size_t f = 0; f < t.frames; ++f) {
    PointMap g(side, side), p(side, side);
    for (std::size_t k = 0; k < t.pixels; ++k) {
      g.points[k] = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(1, 3));
      p.points[k] = g.points[k] + Vec3(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3));
      g.valid[k] = rng.uniform() < 0.85 ? 1 : 0;
      t.raw_conf.push_back(rng.uniform(-1.5, 1.5));
    }
    g.valid[0] = 1;
    t.gt.push_back(g);
    t.pred.push_back(p);
    auto random_pose = [&] {
      const Vec3 axis(rng.normal(), rng.normal(), rng.normal());
      return Pose{Quaternion::from_axis_angle(axis, rng.uniform(0.1, 2.5)),
                  Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2))};
    };
    t.gt_poses.push_back(random_pose());
    t.pred_poses.push_back(random_pose());
  }
  return t;
}

// Parameter layout: points, raw confidences, quaternion components, translations.
std::vector<double> pack(const ToyLossInstance& t) {
  std::vector<double> x;
  for (const auto& m : t.pred) {
    for (const auto& p : m.points) x.insert(x.end(), {p.x(), p.y(), p.z()});
  }
  x.insert(x.end(), t.raw_conf.begin(), t.raw_conf.end());
  for (const auto& p : t.pred_poses) x.insert(x.end(), {p.rotation.w, p.rotation.x, p.rotation.y, p.rotation.z});
  for (const auto& p : t.pred_poses) x.insert(x.end(), {p.translation.x(), p.translation.y(), p.translation.z()});
  return x;
}

LossBreakdown evaluate(const ToyLossInstance& base, std::span<const double> x) {
  ToyLossInstance t = base;
  std::size_t i = 0;
  for (auto& m : t.pred) {
    for (auto& p : m.points) {
      p = Vec3(x[i], x[i + 1], x[i + 2]);
      i += 3;
    }
  }
  std::vector<ConfidenceMap> conf;
  for (std::size_t f = 0; f < t.frames; ++f) {
    ConfidenceMap c(t.pred[f].width, t.pred[f].height);
    for (std::size_t k = 0; k < t.pixels; ++k) c.conf[k] = confidence_from_raw(x[i++]);
    conf.push_back(std::move(c));
  }
  for (auto& p : t.pred_poses) {
    p.rotation = Quaternion::unit(x[i], x[i + 1], x[i + 2], x[i + 3]);
    i += 4;
  }
  for (auto& p : t.pred_poses) {
    p.translation = Vec3(x[i], x[i + 1], x[i + 2]);
    i += 3;
  }
  return total_loss(t.pred, conf, t.pred_poses, t.gt, t.gt_poses);
}

std::vector<double> pack_grad(const LossBreakdown& l) {
  std::vector<double> g;
  for (const auto& m : l.grad_points) {
    for (const auto& p : m) g.insert(g.end(), {p.x(), p.y(), p.z()});
  }
  for (const auto& m : l.grad_raw_conf) g.insert(g.end(), m.begin(), m.end());
  for (const auto& q : l.grad_rotation) g.insert(g.end(), q.begin(), q.end());
  for (const auto& v : l.grad_translation) g.insert(g.end(), {v.x(), v.y(), v.z()});
  return g;
}

CheckResult check_gradients(std::uint64_t seed) {
  SeededRng rng = SeededRng(seed).fork(3);
  double worst = 0.0;
  for (int instance = 0; instance < 20; ++instance) {
    const ToyLossInstance t = toy_loss_instance(rng);
    const auto x = pack(t);
    const auto analytic = pack_grad(evaluate(t, x));
    const auto numeric = finite_difference([&](std::span<const double> v) { return evaluate(t, v).total; }, x, 1e-5);
    double diff = 0.0, scale = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      diff = std::max(diff, std::abs(analytic[k] - numeric[k]));
      scale = std::max(scale, std::abs(numeric[k]));
    }
    worst = std::max(worst, diff / std::max(scale, 1e-300));
  }
  std::ostringstream d;
  d << "max relative gradient error " << worst << " over 20 instances";
  return make("gradients", worst, 1e-5, worst < 1e-5, d.str());
}

CheckResult check_gauge(std::uint64_t seed) {
  SeededRng rng = SeededRng(seed).fork(4);
  double worst = 0.0;
  for (int instance = 0; instance < 5; ++instance) {
    const ToyLossInstance t = toy_loss_instance(rng);
    std::vector<ConfidenceMap> conf;
    std::size_t i = 0;
    for (std::size_t f = 0; f < t.frames; ++f) {
      ConfidenceMap c(t.pred[f].width, t.pred[f].height);
      for (std::size_t k = 0; k < t.pixels; ++k) c.conf[k] = confidence_from_raw(t.raw_conf[i++]);
      conf.push_back(std::move(c));
    }
    const auto base = total_loss(t.pred, conf, t.pred_poses, t.gt, t.gt_poses);

    const Pose g{Quaternion::from_axis_angle(Vec3(rng.normal(), rng.normal(), rng.normal()), rng.uniform(0.1, 3.0)),
                 Vec3(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5))};
    std::vector<Pose> moved;
    for (const auto& p : t.pred_poses) moved.push_back(g.compose(p));
    const double rigid = camera_loss(moved, t.gt_poses, base.norm_factor_pred, base.norm_factor_gt).value;
    worst = std::max(worst, std::abs(rigid - base.camera_loss));

    const double s = rng.uniform(0.2, 5.0);
    auto scaled_points = t.pred;
    for (auto& m : scaled_points) {
      for (auto& p : m.points) p *= s;
    }
    auto scaled_poses = t.pred_poses;
    for (auto& p : scaled_poses) p.translation *= s;
    const auto scaled = total_loss(scaled_points, conf, scaled_poses, t.gt, t.gt_poses);
    worst = std::max(worst, std::abs(scaled.pmap_loss - base.pmap_loss) / std::max(std::abs(base.pmap_loss), 1e-300));
    worst = std::max(worst,
                     std::abs(scaled.camera_loss - base.camera_loss) / std::max(std::abs(base.camera_loss), 1e-300));
  }
  std::ostringstream d;
  d << "max change under rigid transform / positive scaling " << worst;
  return make("gauge_invariance", worst, 1e-9, worst <= 1e-9, d.str());
}

CheckResult check_streaming() {
  std::size_t failures = 0;
  for (std::size_t w : {2, 4}) {
    for (std::size_t T = 1; T <= 20; ++T) {
      std::vector<FrameId> ids(T);
      for (std::size_t k = 0; k < T; ++k) ids[k] = static_cast<FrameId>(k + 1);
      StreamState one(w), batch(w);
      std::vector<Window> a;
      for (FrameId id : ids) {
        if (auto win = one.push_frame(id)) a.push_back(*win);
      }
      if (auto win = one.finalize()) a.push_back(*win);
      auto b = batch.push_frames(ids);
      if (auto win = batch.finalize()) b.push_back(*win);
      if (a != b || a.size() != expected_window_count(T, w)) ++failures;
    }
  }
  StreamState s(4);
  std::vector<FrameId> six{1, 2, 3, 4, 5, 6};
  const auto sched = s.push_frames(six);
  if (sched.size() != 2 || sched[0].frames != std::vector<FrameId>{1, 2, 3, 4} ||
      sched[1].frames != std::vector<FrameId>{3, 4, 5, 6}) {
    ++failures;
  }
  StreamState p(4);
  std::vector<FrameId> five{1, 2, 3, 4, 5};
  p.push_frames(five);
  const auto last = p.finalize();
  if (!last || last->frames != std::vector<FrameId>{3, 4, 5, 5} ||
      last->duplicated != std::vector<bool>{false, false, false, true}) {
    ++failures;
  }
  return make("streaming_equivalence", static_cast<double>(failures), 0.0, failures == 0,
              std::to_string(failures) + " schedule mismatches");
}

CheckResult check_overlap_merge(std::uint64_t seed) {
  SeededRng rng = SeededRng(seed).fork(6);
  std::size_t failures = 0;
  for (int trial = 0; trial < 200; ++trial) {
    StreamState s(4);
    const std::size_t frames = 4 + static_cast<std::size_t>(rng.uniform() * 6);
    std::map<FrameId, std::vector<std::pair<double, std::size_t>>> best;  // per frame, per pixel
    std::map<FrameId, std::size_t> last_window;
    auto feed = [&](const Window& win) {
      std::vector<FramePrediction> preds;
      for (std::size_t slot = 0; slot < win.frames.size(); ++slot) {
        FramePrediction fp;
        fp.pose.translation = Vec3(static_cast<double>(win.index), static_cast<double>(slot), 0.0);
        fp.points = PointMap(2, 2);
        fp.confidence = ConfidenceMap(2, 2);
        for (auto& c : fp.confidence.conf) c = 1.0 + std::floor(rng.uniform() * 3.0);  // ties are common
        if (!win.duplicated[slot]) {
          auto& b = best[win.frames[slot]];
          b.resize(4, {0.0, 0});
          for (std::size_t k = 0; k < 4; ++k) {
            if (fp.confidence.conf[k] >= b[k].first) b[k] = {fp.confidence.conf[k], win.index};
          }
          last_window[win.frames[slot]] = win.index;
        }
        preds.push_back(std::move(fp));
      }
      s.merge_overlap(win, preds);
    };
    for (std::size_t f = 0; f < frames; ++f) {
      if (auto win = s.push_frame(static_cast<FrameId>(f))) feed(*win);
    }
    if (auto win = s.finalize()) feed(*win);
    for (const auto& [id, merged] : s.outputs()) {
      if (merged.pose_window != last_window[id]) ++failures;
      for (std::size_t k = 0; k < 4; ++k) {
        if (merged.confidence.conf[k] != best[id][k].first || merged.pixel_window[k] != best[id][k].second) {
          ++failures;
        }
      }
    }
  }
  return make("overlap_merge", static_cast<double>(failures), 0.0, failures == 0,
              std::to_string(failures) + " merge-rule violations over 200 cases");
}

CheckResult check_umeyama(std::uint64_t seed) {
  SeededRng rng = SeededRng(seed).fork(7);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 10 + static_cast<std::size_t>(rng.uniform() * 200);
    std::vector<Vec3> src(n), dst(n);
    const SimilarityTransform truth{rng.uniform(0.2, 5.0),
                                    Quaternion::from_axis_angle(Vec3(rng.normal(), rng.normal(), rng.normal()),
                                                                rng.uniform(0.0, 3.0)),
                                    Vec3(rng.normal(), rng.normal(), rng.normal())};
    double diameter = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      src[i] = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
      dst[i] = truth.apply(src[i]);
    }
    for (std::size_t i = 0; i < n; ++i) diameter = std::max(diameter, (dst[i] - dst[0]).norm());
    const auto est = umeyama_align(src, dst);
    for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, (est.apply(src[i]) - dst[i]).norm() / diameter);
  }
  std::ostringstream d;
  d << "max residual / diameter " << worst;
  return make("umeyama_recovery", worst, 1e-9, worst <= 1e-9, d.str());
}

CheckResult check_metrics(std::uint64_t seed) {
  std::size_t failures = 0;
  const auto scene = generate_scene(seed, 5, 8, 8, Trajectory::orbit);
  NoiseLevels noise;
  noise.rotation_deg = 5.0;
  noise.seed = seed;
  const auto pert = perturb_predictions(scene, noise);
  const auto r = pose_metrics(pert.poses, scene.poses);
  // Every mixed-parity pair is off by exactly 5 degrees, same-parity pairs by 0.
  std::size_t mixed = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      if (i != j && (i + j) % 2 == 1) ++mixed;
    }
  }
  const double expect_below4 = 1.0 - static_cast<double>(mixed) / 20.0;
  if (std::abs(r.rra_at.at(4) - expect_below4) > 1e-12 || r.rra_at.at(6) != 1.0) ++failures;
  if (r.auc30 > std::min(r.rra_at.at(30), r.rta_at.at(30)) + 1e-15) ++failures;
  const auto perfect = pose_metrics(scene.poses, scene.poses);
  if (perfect.auc30 != 1.0) ++failures;
  return make("metric_oracles", static_cast<double>(failures), 0.0, failures == 0,
              std::to_string(failures) + " metric oracle mismatches");
}

CheckResult check_closed_loop(std::uint64_t seed) {
  const auto scene = generate_scene(seed, 12, 8, 8, Trajectory::orbit);
  const Model model = Model::oracle({}, seed);
  const auto run = run_stream(model, observations_from(scene));
  const auto pose = pose_metrics(run.poses, scene.poses);
  std::vector<Vec3> pred, gt;
  for (std::size_t f = 0; f < scene.frame_count(); ++f) {
    for (std::size_t k = 0; k < scene.points[f].pixel_count(); ++k) {
      if (!scene.points[f].valid[k]) continue;
      gt.push_back(scene.poses[f].apply(scene.points[f].points[k]));
      pred.push_back(run.poses[f].apply(run.points[f].points[k]));
    }
  }
  const auto ch = chamfer(pred, gt, true);
  std::ostringstream d;
  d << "AUC@30 " << pose.auc30 << ", chamfer " << ch.overall;
  return make("closed_loop_oracle", ch.overall, 1e-9, pose.auc30 == 1.0 && ch.overall <= 1e-9, d.str());
}

CheckResult check_pool_footprint(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.dim = 16;
  cfg.heads = 2;
  cfg.depth = 1;
  cfg.camera_depth = 1;
  cfg.state_count = 4;
  cfg.patch = 4;
  cfg.head_width = 8;
  const Model model = Model::random(cfg, seed);
  const auto run = run_stream(model, toy_frames(seed, 9, 8));
  const double measured = static_cast<double>(run.pool.payload_bytes()) / static_cast<double>(run.pool.size());
  const auto fp = memory_footprint(64, 2, 17);
  const bool ok = measured == static_cast<double>(2 * cfg.dim * sizeof(double)) && fp.pool_bytes_per_frame == 1024 &&
                  fp.kv_bytes_per_frame == 34816 && fp.ratio == 34.0;
  std::ostringstream d;
  d << measured << " bytes per pool entry at C=" << cfg.dim << "; C=64 reference ratio " << fp.ratio;
  return make("pool_footprint", measured, static_cast<double>(2 * cfg.dim * sizeof(double)), ok, d.str());
}

CheckResult guarded(const std::string& name, const std::function<CheckResult()>& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    return make(name, 0.0, 0.0, false, std::string("threw: ") + e.what());
  }
}

}  // namespace

std::vector<CheckResult> run_selfchecks(const CheckOptions& options) {
  struct FaultScope {
    explicit FaultScope(bool on) { debug::inject_mask_fault(on); }
    ~FaultScope() { debug::inject_mask_fault(false); }
  } fault(options.inject_mask_fault);

  const auto seed = options.seed;
  std::vector<CheckResult> out;
  out.push_back(guarded("mask_oracle", check_mask_oracle));
  out.push_back(guarded("causality", [&] { return check_causality(seed); }));
  out.push_back(guarded("gradients", [&] { return check_gradients(seed); }));
  out.push_back(guarded("gauge_invariance", [&] { return check_gauge(seed); }));
  out.push_back(guarded("streaming_equivalence", check_streaming));
  out.push_back(guarded("overlap_merge", [&] { return check_overlap_merge(seed); }));
  out.push_back(guarded("umeyama_recovery", [&] { return check_umeyama(seed); }));
  out.push_back(guarded("metric_oracles", [&] { return check_metrics(seed); }));
  out.push_back(guarded("closed_loop_oracle", [&] { return check_closed_loop(seed); }));
  out.push_back(guarded("pool_footprint", [&] { return check_pool_footprint(seed); }));
  return out;
}

bool all_passed(const std::vector<CheckResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed; });
}

std::string checks_json(const std::vector<CheckResult>& results, int indent) {
  nlohmann::ordered_json j;
  j["passed"] = all_passed(results);
  j["checks"] = nlohmann::ordered_json::array();
  for (const auto& r : results) {
    j["checks"].push_back(
        {{"name", r.name}, {"passed", r.passed}, {"measured", r.measured}, {"limit", r.limit}, {"detail", r.detail}});
  }
  return j.dump(indent);
}

}  // namespace streamrec
