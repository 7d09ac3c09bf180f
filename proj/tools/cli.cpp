#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "streamrec/errors.hpp"
#include "streamrec/io.hpp"
#include "streamrec/metrics.hpp"
#include "streamrec/pipeline.hpp"
#include "streamrec/selfcheck.hpp"
#include "streamrec/synth.hpp"

namespace streamrec::cli {

namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonFlags {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string precision = "f64";
};

struct SynthFlags {
  std::size_t frames = 0;
  std::size_t height = 32;
  std::size_t width = 32;
  std::string trajectory = "orbit";
  std::string output;
};

struct RunFlags {
  ModelConfig model;
  std::string input;
  std::string output;
  std::string ply;
  std::string dump_pool;
  std::string checkpoint;
  std::string save_checkpoint;
  bool oracle = false;
};

struct EvalFlags {
  std::string predictions;
  std::string ground_truth;
  std::string output;
  std::optional<double> min_auc;
  std::optional<double> max_chamfer;
};

struct BenchFlags {
  ModelConfig model;
  std::size_t frames = 100;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t warmup = 3;
  std::string output;
};

struct CheckFlags {
  bool inject_mask_fault = false;
  std::string output;
};

void add_model_flags(CLI::App* app, ModelConfig& m) {
  auto positive = CLI::PositiveNumber;
  app->add_option("--window-size", m.window_size, "frames per window (even, >= 2)")->capture_default_str();
  app->add_option("--dim", m.dim, "token width C")->capture_default_str()->check(positive);
  app->add_option("--heads", m.heads, "attention heads")->capture_default_str()->check(positive);
  app->add_option("--depth", m.depth, "decoder depth")->capture_default_str();
  app->add_option("--camera-depth", m.camera_depth, "camera-head depth")->capture_default_str();
  app->add_option("--state-count", m.state_count, "state tokens")->capture_default_str()->check(positive);
  app->add_option("--patch", m.patch, "patch size p")->capture_default_str()->check(positive);
  app->add_option("--head-width", m.head_width, "conv head hidden channels")->capture_default_str()->check(positive);
}

void validate_model(const ModelConfig& m) {
  if (m.window_size < 2 || m.window_size % 2 != 0) throw UsageError("--window-size must be even and >= 2");
  if (m.dim % m.heads != 0) throw UsageError("--dim must be divisible by --heads");
  if (m.dim < 7) throw UsageError("--dim must be at least 7");
}

void validate_common(const CommonFlags& c) {
  if (c.precision != "f64") throw UsageError("--precision " + c.precision + " is not supported; only f64 is");
}

void write_text(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text << '\n';
    return;
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << text << '\n';
}

int cmd_synth(const CommonFlags& common, const SynthFlags& f, std::ostream& out, std::ostream& err) {
  validate_common(common);
  const auto kind = [&] {
    try {
      return parse_trajectory(f.trajectory);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }();
  const auto scene = generate_scene(common.seed, f.frames, f.height, f.width, kind);
  const auto seq = sequence_from_scene(scene);
  if (f.output == "-") {
    write_sequence(out, seq);
  } else {
    write_sequence(fs::path(f.output), seq);
  }
  std::size_t valid = 0;
  for (const auto& m : scene.points) valid += m.valid_count();
  ordered_json j{{"frames", scene.frame_count()},
                 {"height", scene.height},
                 {"width", scene.width},
                 {"seed", scene.seed},
                 {"trajectory", std::string(to_string(kind))},
                 {"valid_fraction", static_cast<double>(valid) /
                                        static_cast<double>(scene.frame_count() * scene.height * scene.width)},
                 {"output", f.output}};
  (f.output == "-" ? err : out) << j.dump() << '\n';
  return kOk;
}

Model build_model(const CommonFlags& common, RunFlags f) {
  if (f.oracle) return Model::oracle(f.model, common.seed);
  if (!f.checkpoint.empty()) return load_checkpoint(fs::path(f.checkpoint), f.model);
  return Model::random(f.model, common.seed);
}

int cmd_run(const CommonFlags& common, const RunFlags& f, std::istream& in, std::ostream& out, std::ostream& err) {
  validate_common(common);
  validate_model(f.model);
  if (f.oracle && !f.checkpoint.empty()) throw UsageError("--oracle and --checkpoint are exclusive");
  if (f.oracle && !f.save_checkpoint.empty()) throw UsageError("oracle models cannot be checkpointed");

  const Model model = build_model(common, f);
  if (!f.save_checkpoint.empty()) save_checkpoint(fs::path(f.save_checkpoint), model);

  std::ifstream file;
  std::istream* src = &in;
  if (f.input != "-") {
    file.open(f.input, std::ios::binary);
    if (!file) throw std::runtime_error("cannot open for reading: " + f.input);
    src = &file;
  }
  SequenceReader reader(*src);
  const auto& manifest = reader.manifest();
  const std::size_t patch = model.config.patch;
  if (manifest.height % patch != 0 || manifest.width % patch != 0) {
    throw UsageError("--patch " + std::to_string(patch) + " does not divide the " + std::to_string(manifest.height) +
                     "x" + std::to_string(manifest.width) + " input");
  }

  // Frames are consumed one record at a time, as they arrive.
  const auto start = std::chrono::steady_clock::now();
  StreamingReconstructor rec(model, manifest.height, manifest.width, common.threads);
  std::size_t frames = 0;
  while (auto frame = reader.next()) {
    rec.push({frame->id, std::move(frame->points), frame->pose});
    ++frames;
  }
  if (frames == 0) throw EmptyInputError("input container holds no frames");
  rec.finish();
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  RunResult result;
  std::vector<Vec3> cloud;
  std::vector<double> cloud_conf;
  for (const auto& [id, merged] : rec.outputs()) {
    result.frame_ids.push_back(id);
    result.poses.push_back(merged.pose);
    result.points.push_back(merged.points);
    result.confidence.push_back(merged.confidence);
    for (std::size_t k = 0; k < merged.points.pixel_count(); ++k) {
      if (!merged.points.valid[k]) continue;
      cloud.push_back(merged.pose.apply(merged.points.points[k]));
      cloud_conf.push_back(merged.confidence.conf[k]);
    }
  }
  auto seq = sequence_from_run(result, common.seed);
  seq.manifest.trajectory = manifest.trajectory;
  seq.manifest.intrinsics = manifest.intrinsics;
  if (f.output == "-") {
    write_sequence(out, seq);
  } else {
    write_sequence(fs::path(f.output), seq);
  }

  std::string ply = f.ply;
  if (ply.empty() && f.output != "-") ply = fs::path(f.output).replace_extension(".ply").string();
  if (!ply.empty()) write_ply(fs::path(ply), cloud, cloud_conf);
  if (!f.dump_pool.empty()) write_pool_dump(fs::path(f.dump_pool), rec.pool());

  ordered_json j{{"frames", frames},
                 {"windows", rec.windows().size()},
                 {"model", f.oracle ? "oracle" : (f.checkpoint.empty() ? "random" : "checkpoint")},
                 {"pool_entries", rec.pool().size()},
                 {"pool_bytes", rec.pool().payload_bytes()},
                 {"seconds", seconds},
                 {"output", f.output},
                 {"ply", ply}};
  (f.output == "-" ? err : out) << j.dump() << '\n';
  return kOk;
}

Sequence load_for_eval(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw std::runtime_error(std::string(what) + " file not found: " + path);
  return read_sequence(fs::path(path));
}

int cmd_eval(const EvalFlags& f, std::ostream& out, std::ostream& err) {
  const auto pred = load_for_eval(f.predictions, "predictions");
  const auto gt = load_for_eval(f.ground_truth, "ground-truth");
  if (pred.frames.size() != gt.frames.size()) {
    throw UsageError("frame count mismatch: predictions " + std::to_string(pred.frames.size()) + ", ground truth " +
                     std::to_string(gt.frames.size()));
  }
  if (pred.manifest.height != gt.manifest.height || pred.manifest.width != gt.manifest.width) {
    throw UsageError("image size mismatch between predictions and ground truth");
  }

  std::vector<Pose> pred_poses, gt_poses;
  std::vector<Vec3> pred_cloud, gt_cloud;
  std::vector<std::vector<double>> pred_depth, gt_depth;
  std::vector<std::vector<std::uint8_t>> masks;
  for (std::size_t i = 0; i < gt.frames.size(); ++i) {
    const auto& p = pred.frames[i];
    const auto& g = gt.frames[i];
    if (p.id != g.id) throw UsageError("frame id mismatch at position " + std::to_string(i));
    pred_poses.push_back(p.pose);
    gt_poses.push_back(g.pose);
    std::vector<double> pd, gd;
    std::vector<std::uint8_t> mask;
    for (std::size_t k = 0; k < g.points.pixel_count(); ++k) {
      const bool both = g.points.valid[k] && p.points.valid[k];
      mask.push_back(both ? 1 : 0);
      pd.push_back(p.points.points[k].z());
      gd.push_back(g.points.points[k].z());
      if (both) {
        pred_cloud.push_back(p.pose.apply(p.points.points[k]));
        gt_cloud.push_back(g.pose.apply(g.points.points[k]));
      }
    }
    pred_depth.push_back(std::move(pd));
    gt_depth.push_back(std::move(gd));
    masks.push_back(std::move(mask));
  }

  MetricsReport report;
  report.chamfer = chamfer(pred_cloud, gt_cloud, true);
  report.depth = depth_metrics(pred_depth, gt_depth, masks);
  bool pose_defined = true;
  try {
    report.pose = pose_metrics(pred_poses, gt_poses);
  } catch (const std::invalid_argument&) {
    pose_defined = false;
    err << "note: pose metrics need at least 2 frames\n";
  } catch (const DegenerateError& e) {
    pose_defined = false;
    err << "note: " << e.what() << '\n';
  }

  auto j = ordered_json::parse(metrics_json(report));
  if (!pose_defined) j["pose"] = {{"rra30", nullptr}, {"rta30", nullptr}, {"auc30", nullptr}};
  write_text(f.output, j.dump(2), out);
  if (!f.output.empty() && f.output != "-") out << j.dump(2) << '\n';

  bool ok = true;
  if (f.min_auc && (!pose_defined || report.pose.auc30 < *f.min_auc)) {
    err << "AUC@30 below required " << *f.min_auc << '\n';
    ok = false;
  }
  if (f.max_chamfer && !(report.chamfer.overall <= *f.max_chamfer)) {
    err << "chamfer overall " << report.chamfer.overall << " above allowed " << *f.max_chamfer << '\n';
    ok = false;
  }
  return ok ? kOk : kCheckFailed;
}

ordered_json summarize(std::vector<double> ms) {
  std::sort(ms.begin(), ms.end());
  const auto p95_index = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(ms.size()))) - 1;
  return {{"median_ms", median(ms)}, {"p95_ms", ms[std::min(p95_index, ms.size() - 1)]}};
}

std::size_t count_windows(std::size_t frames, std::size_t w) {
  StreamState s(w);
  std::size_t n = 0;
  for (std::size_t f = 0; f < frames; ++f) n += s.push_frame(static_cast<FrameId>(f)) ? 1 : 0;
  return n + (s.finalize() ? 1 : 0);
}

int cmd_bench(const CommonFlags& common, const BenchFlags& f, std::ostream& out) {
  validate_common(common);
  validate_model(f.model);
  if (f.height % f.model.patch != 0 || f.width % f.model.patch != 0) {
    throw UsageError("--patch must divide --height and --width");
  }
  const std::size_t w = f.model.window_size;
  const std::size_t timed_windows = expected_window_count(f.frames, w);
  if (timed_windows < 20) throw UsageError("bench needs at least 20 timed windows; raise --frames");

  const Model model = Model::random(f.model, common.seed);
  const auto scene = generate_scene(common.seed, f.frames, f.height, f.width, Trajectory::orbit);
  const auto frames = observations_from(scene);

  {
    // Warm-up windows on a separate reconstructor; results are discarded.
    StreamingReconstructor warm(model, f.height, f.width, common.threads);
    const std::size_t warm_frames = std::min(frames.size(), w + (f.warmup - 1) * (w / 2));
    for (std::size_t i = 0; i < warm_frames; ++i) warm.push(frames[i]);
  }

  const auto start = std::chrono::steady_clock::now();
  StreamingReconstructor rec(model, f.height, f.width, common.threads);
  for (const auto& fr : frames) rec.push(fr);
  rec.finish();
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  std::vector<double> enc, dec, head, cam, merge, total;
  for (const auto& r : rec.windows()) {
    enc.push_back(r.timings.encode.count());
    dec.push_back(r.timings.decoder.count());
    head.push_back(r.timings.point_head.count());
    cam.push_back(r.timings.camera_head.count());
    merge.push_back(r.timings.merge.count());
    total.push_back(r.timings.total().count());
  }

  const std::size_t tokens_per_frame = (f.height / f.model.patch) * (f.width / f.model.patch) + 1;
  const auto fp = memory_footprint(f.model.dim, f.model.depth, tokens_per_frame);
  const double measured_per_entry =
      static_cast<double>(rec.pool().payload_bytes()) / static_cast<double>(rec.pool().size());

  ordered_json schedule = ordered_json::array();
  bool schedule_ok = true;
  for (std::size_t ws : {w, 2 * w}) {
    const std::size_t expected = expected_window_count(f.frames, ws);
    const std::size_t measured = count_windows(f.frames, ws);
    schedule_ok = schedule_ok && expected == measured;
    schedule.push_back({{"window_size", ws},
                        {"stride", ws / 2},
                        {"windows", measured},
                        {"expected_windows", expected},
                        {"windows_per_frame", static_cast<double>(measured) / static_cast<double>(f.frames)}});
  }

  ordered_json j;
  j["frames"] = f.frames;
  j["image"] = {{"height", f.height}, {"width", f.width}, {"patch", f.model.patch}};
  j["warmup_windows"] = f.warmup;
  j["timed_windows"] = rec.windows().size();
  j["seconds"] = seconds;
  j["fps"] = static_cast<double>(f.frames) / seconds;
  j["stages"] = {{"encode", summarize(enc)},     {"decoder", summarize(dec)}, {"point_head", summarize(head)},
                 {"camera_head", summarize(cam)}, {"merge", summarize(merge)}, {"window_total", summarize(total)}};
  j["memory"] = {{"tokens_per_frame", tokens_per_frame},
                 {"pool_bytes_per_frame", fp.pool_bytes_per_frame},
                 {"measured_pool_bytes_per_entry", measured_per_entry},
                 {"pool_entries", rec.pool().size()},
                 {"pool_total_bytes", rec.pool().payload_bytes()},
                 {"kv_cache_bytes_per_frame", fp.kv_bytes_per_frame},
                 {"kv_to_pool_ratio", fp.ratio}};
  j["schedule"] = schedule;
  write_text(f.output, j.dump(2), out);

  const bool ok = schedule_ok && measured_per_entry == static_cast<double>(fp.pool_bytes_per_frame);
  return ok ? kOk : kCheckFailed;
}

int cmd_check(const CommonFlags& common, const CheckFlags& f, std::ostream& out) {
  const auto results = run_selfchecks({common.seed, f.inject_mask_fault});
  write_text(f.output, checks_json(results), out);
  return all_passed(results) ? kOk : kCheckFailed;
}

void add_common(CLI::App* app, CommonFlags& c) {
  app->add_option("--seed", c.seed, "RNG seed")->envname("STREAMREC_SEED")->capture_default_str();
  app->add_option("--threads", c.threads, "worker threads for per-window head evaluation")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  app->add_option("--precision", c.precision, "numeric precision (f64)")->capture_default_str();
}

}  // namespace

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Streaming point-map reconstruction toolkit", "streamrec"};
  app.set_config("--config", "", "TOML file mirroring the command-line flags");
  app.require_subcommand(1);

  CommonFlags common;
  SynthFlags synth;
  RunFlags runf;
  EvalFlags eval;
  BenchFlags bench;
  CheckFlags check;

  auto* s = app.add_subcommand("synth", "generate a synthetic sequence container");
  add_common(s, common);
  s->add_option("--frames", synth.frames, "number of frames")->required()->check(CLI::Range(std::size_t{1}, std::size_t{1} << 20));
  s->add_option("--height", synth.height, "image height")->capture_default_str()->check(CLI::PositiveNumber);
  s->add_option("--width", synth.width, "image width")->capture_default_str()->check(CLI::PositiveNumber);
  s->add_option("--trajectory", synth.trajectory, "orbit | line | random-walk")->capture_default_str();
  s->add_option("--output,-o", synth.output, "container path, '-' for stdout")->required();

  auto* r = app.add_subcommand("run", "stream a sequence through the reconstructor");
  add_common(r, common);
  add_model_flags(r, runf.model);
  r->add_option("--input,-i", runf.input, "input container, '-' for stdin (pipe mode)")->required();
  r->add_option("--output,-o", runf.output, "prediction container, '-' for stdout")->required();
  r->add_option("--ply", runf.ply, "PLY export path (default: output with .ply extension)");
  r->add_option("--dump-pool", runf.dump_pool, "write <stem>.json and <stem>.bin pool dump");
  r->add_option("--checkpoint", runf.checkpoint, "load weights from a checkpoint");
  r->add_option("--save-checkpoint", runf.save_checkpoint, "save the model weights used for this run");
  r->add_flag("--oracle", runf.oracle, "ground-truth tokens with identity-configured heads");

  auto* e = app.add_subcommand("eval", "evaluate predictions against ground truth");
  e->add_option("--predictions,-p", eval.predictions, "prediction container")->required();
  e->add_option("--ground-truth,-g", eval.ground_truth, "ground-truth container")->required();
  e->add_option("--output,-o", eval.output, "metrics JSON path (default: stdout)");
  e->add_option("--min-auc", eval.min_auc, "exit 1 when AUC@30 is lower");
  e->add_option("--max-chamfer", eval.max_chamfer, "exit 1 when overall chamfer is higher");

  auto* b = app.add_subcommand("bench", "time a toy stream and report pool memory");
  add_common(b, common);
  add_model_flags(b, bench.model);
  b->add_option("--frames", bench.frames, "stream length")->capture_default_str()->check(CLI::PositiveNumber);
  b->add_option("--height", bench.height, "image height")->capture_default_str()->check(CLI::PositiveNumber);
  b->add_option("--width", bench.width, "image width")->capture_default_str()->check(CLI::PositiveNumber);
  b->add_option("--warmup", bench.warmup, "warm-up windows")->capture_default_str()->check(CLI::Range(3, 1000));
  b->add_option("--output,-o", bench.output, "report path (default: stdout)");

  auto* c = app.add_subcommand("check", "run the verification suite");
  add_common(c, common);
  c->add_flag("--inject-mask-fault", check.inject_mask_fault, "corrupt the window mask (exercises failure path)");
  c->add_option("--output,-o", check.output, "report path (default: stdout)");

  std::vector<const char*> argv{"streamrec"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& ex) {
    app.exit(ex, out, err);
    return kOk;
  } catch (const CLI::CallForAllHelp& ex) {
    app.exit(ex, out, err);
    return kOk;
  } catch (const CLI::ParseError& ex) {
    app.exit(ex, out, err);
    return kUsageError;
  }

  try {
    if (*s) return cmd_synth(common, synth, out, err);
    if (*r) return cmd_run(common, runf, in, out, err);
    if (*e) return cmd_eval(eval, out, err);
    if (*b) return cmd_bench(common, bench, out);
    if (*c) return cmd_check(common, check, out);
  } catch (const FormatError& ex) {
    err << "error: " << ex.what() << '\n';
    return kUsageError;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kUsageError;
  }
  return kUsageError;
}

}  // namespace streamrec::cli
