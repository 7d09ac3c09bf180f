#include <algorithm>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "streamrec/attention.hpp"
#include "streamrec/errors.hpp"
#include "streamrec/geomath.hpp"
#include "streamrec/io.hpp"
#include "streamrec/metrics.hpp"
#include "streamrec/pipeline.hpp"
#include "streamrec/selfcheck.hpp"
#include "streamrec/synth.hpp"
#include "streamrec/windowing.hpp"

namespace py = pybind11;
using namespace streamrec;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using Mask = py::array_t<bool, py::array::c_style | py::array::forcecast>;

// Poses travel as (T, 7) rows of [qw, qx, qy, qz, tx, ty, tz].
Array poses_to_array(const std::vector<Pose>& poses) {
  Array out({static_cast<py::ssize_t>(poses.size()), py::ssize_t{7}});
  auto a = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const Pose& p = poses[i];
    const double row[7] = {p.rotation.w,      p.rotation.x,      p.rotation.y,     p.rotation.z,
                           p.translation.x(), p.translation.y(), p.translation.z()};
    for (py::ssize_t k = 0; k < 7; ++k) a(i, k) = row[k];
  }
  return out;
}

std::vector<Pose> array_to_poses(const Array& arr) {
  if (arr.ndim() != 2 || arr.shape(1) != 7) throw ShapeError("poses must have shape (T, 7)");
  auto a = arr.unchecked<2>();
  std::vector<Pose> out;
  for (py::ssize_t i = 0; i < a.shape(0); ++i)
    out.push_back({Quaternion::unit(a(i, 0), a(i, 1), a(i, 2), a(i, 3)), Vec3(a(i, 4), a(i, 5), a(i, 6))});
  return out;
}

std::vector<Vec3> array_to_points(const Array& arr) {
  if (arr.ndim() != 2 || arr.shape(1) != 3) throw ShapeError("points must have shape (N, 3)");
  auto a = arr.unchecked<2>();
  std::vector<Vec3> out;
  for (py::ssize_t i = 0; i < a.shape(0); ++i) out.emplace_back(a(i, 0), a(i, 1), a(i, 2));
  return out;
}

Array matrix3(const Mat3& m) {
  Array out({3, 3});
  auto a = out.mutable_unchecked<2>();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) a(r, c) = m(r, c);
  return out;
}

// (T, H, W, 3) points and (T, H, W) validity from per-frame maps.
py::tuple maps_to_arrays(const std::vector<PointMap>& maps) {
  const py::ssize_t t = static_cast<py::ssize_t>(maps.size());
  const py::ssize_t h = t ? static_cast<py::ssize_t>(maps[0].height) : 0;
  const py::ssize_t w = t ? static_cast<py::ssize_t>(maps[0].width) : 0;
  Array points({t, h, w, py::ssize_t{3}});
  Mask valid({t, h, w});
  double* p = points.mutable_data();
  bool* v = valid.mutable_data();
  for (const PointMap& m : maps) {
    for (std::size_t k = 0; k < m.pixel_count(); ++k) {
      *p++ = m.points[k].x();
      *p++ = m.points[k].y();
      *p++ = m.points[k].z();
      *v++ = m.valid[k] != 0;
    }
  }
  return py::make_tuple(points, valid);
}

std::vector<PointMap> arrays_to_maps(const Array& points, const std::optional<Mask>& valid) {
  if (points.ndim() != 4 || points.shape(3) != 3) throw ShapeError("points must have shape (T, H, W, 3)");
  const auto t = static_cast<std::size_t>(points.shape(0));
  const auto h = static_cast<std::size_t>(points.shape(1));
  const auto w = static_cast<std::size_t>(points.shape(2));
  if (valid && (valid->ndim() != 3 || valid->shape(0) != points.shape(0) || valid->shape(1) != points.shape(1) ||
                valid->shape(2) != points.shape(2))) {
    throw ShapeError("valid must have shape (T, H, W)");
  }
  const double* p = points.data();
  const bool* v = valid ? valid->data() : nullptr;
  std::vector<PointMap> out;
  for (std::size_t f = 0; f < t; ++f) {
    PointMap m(w, h);
    for (std::size_t k = 0; k < m.pixel_count(); ++k, p += 3) {
      m.points[k] = Vec3(p[0], p[1], p[2]);
      m.valid[k] = v ? static_cast<std::uint8_t>(*v++) : 1;
    }
    out.push_back(std::move(m));
  }
  return out;
}

Array confidence_to_array(const std::vector<ConfidenceMap>& maps) {
  const py::ssize_t t = static_cast<py::ssize_t>(maps.size());
  const py::ssize_t h = t ? static_cast<py::ssize_t>(maps[0].height) : 0;
  const py::ssize_t w = t ? static_cast<py::ssize_t>(maps[0].width) : 0;
  Array out({t, h, w});
  double* d = out.mutable_data();
  for (const auto& m : maps) d = std::copy(m.conf.begin(), m.conf.end(), d);
  return out;
}

py::dict scene_dict(const SceneSample& s) {
  py::dict d;
  const py::tuple maps = maps_to_arrays(s.points);
  d["frame_ids"] = s.frame_ids;
  d["poses"] = poses_to_array(s.poses);
  d["points"] = maps[0];
  d["valid"] = maps[1];
  d["intrinsics"] = py::dict(py::arg("fx") = s.intrinsics.fx, py::arg("fy") = s.intrinsics.fy,
                             py::arg("cx") = s.intrinsics.cx, py::arg("cy") = s.intrinsics.cy);
  d["trajectory"] = std::string(to_string(s.trajectory));
  d["seed"] = s.seed;
  return d;
}

py::dict reconstruct(const Array& points, const Array& poses, const std::optional<Mask>& valid, bool oracle,
                     std::uint64_t seed, const ModelConfig& config, std::size_t threads) {
  std::vector<PointMap> maps = arrays_to_maps(points, valid);
  const std::vector<Pose> gt = array_to_poses(poses);
  if (gt.size() != maps.size()) throw ShapeError("one pose per frame is required");
  if (maps.empty()) throw EmptyInputError("no frames");
  std::vector<FrameObservation> frames;
  for (std::size_t f = 0; f < maps.size(); ++f) frames.push_back({static_cast<FrameId>(f), std::move(maps[f]), gt[f]});
  const Model model = oracle ? Model::oracle(config, seed) : Model::random(config, seed);

  RunResult r;
  {
    py::gil_scoped_release release;
    r = run_stream(model, frames, threads);
  }
  py::dict d;
  const py::tuple out_maps = maps_to_arrays(r.points);
  d["frame_ids"] = r.frame_ids;
  d["poses"] = poses_to_array(r.poses);
  d["points"] = out_maps[0];
  d["confidence"] = confidence_to_array(r.confidence);
  d["windows"] = r.windows.size();
  d["pool_entries"] = r.pool.size();
  d["pool_bytes"] = r.pool.payload_bytes();
  return d;
}

py::dict pose_report(const PoseMetricReport& r) {
  py::dict d;
  d["rra"] = r.rra_at;
  d["rta"] = r.rta_at;
  d["auc30"] = r.auc30;
  d["rotation_errors_deg"] = r.rotation_errors_deg;
  d["translation_errors_deg"] = r.translation_errors_deg;
  return d;
}

}  // namespace

PYBIND11_MODULE(_streamrec, m) {
  m.doc() = "Streaming point-map reconstruction core";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DegenerateError>(m, "DegenerateError", PyExc_RuntimeError);
  py::register_exception<EmptyInputError>(m, "EmptyInputError", PyExc_RuntimeError);
  py::register_exception<OrderingError>(m, "OrderingError", PyExc_RuntimeError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_RuntimeError);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("dim", &ModelConfig::dim)
      .def_readwrite("heads", &ModelConfig::heads)
      .def_readwrite("depth", &ModelConfig::depth)
      .def_readwrite("camera_depth", &ModelConfig::camera_depth)
      .def_readwrite("state_count", &ModelConfig::state_count)
      .def_readwrite("window_size", &ModelConfig::window_size)
      .def_readwrite("patch", &ModelConfig::patch)
      .def_readwrite("head_width", &ModelConfig::head_width)
      .def_readwrite("slot_embedding", &ModelConfig::slot_embedding);

  m.def(
      "generate_scene",
      [](std::uint64_t seed, std::size_t frames, std::size_t height, std::size_t width, const std::string& trajectory) {
        return scene_dict(generate_scene(seed, frames, height, width, parse_trajectory(trajectory)));
      },
      py::arg("seed"), py::arg("frames"), py::arg("height"), py::arg("width"), py::arg("trajectory") = "orbit",
      "Synthetic height-field scene: poses (T, 7), points (T, H, W, 3), valid (T, H, W).");

  m.def(
      "reconstruct",
      [](const Array& points, const Array& poses, const std::optional<Mask>& valid, bool oracle, std::uint64_t seed,
         const ModelConfig& config,
         std::size_t threads) { return reconstruct(points, poses, valid, oracle, seed, config, threads); },
      py::arg("points"), py::arg("poses"), py::arg("valid") = py::none(), py::arg("oracle") = false,
      py::arg("seed") = 0, py::arg("config") = ModelConfig{}, py::arg("threads") = 1,
      "Streams frames through the model; poses are read only by the oracle encoder.");

  m.def(
      "window_schedule",
      [](std::size_t frames, std::size_t window_size) {
        StreamState s(window_size);
        std::vector<Window> windows;
        for (std::size_t f = 0; f < frames; ++f)
          if (auto w = s.push_frame(static_cast<FrameId>(f))) windows.push_back(*w);
        if (auto w = s.finalize()) windows.push_back(*w);
        py::list out;
        for (const auto& w : windows) out.append(py::make_tuple(w.index, w.frames, w.duplicated));
        return out;
      },
      py::arg("frames"), py::arg("window_size") = 4, "List of (index, frame_ids, duplicated) per window.");

  m.def(
      "window_mask",
      [](std::size_t window_size, std::size_t window_index, std::size_t tokens_per_frame, std::size_t key_windows) {
        const AttentionMask mask = build_window_mask(window_size, window_index, tokens_per_frame, key_windows);
        Mask out({static_cast<py::ssize_t>(mask.rows), static_cast<py::ssize_t>(mask.cols)});
        std::copy(mask.allowed.begin(), mask.allowed.end(), out.mutable_data());
        return out;
      },
      py::arg("window_size"), py::arg("window_index"), py::arg("tokens_per_frame") = 1, py::arg("key_windows") = 0);

  m.def(
      "umeyama_align",
      [](const Array& source, const Array& target, bool with_scale) {
        const SimilarityTransform s = umeyama_align(array_to_points(source), array_to_points(target), with_scale);
        Array t({3});
        std::copy(s.translation.data(), s.translation.data() + 3, t.mutable_data());
        return py::make_tuple(s.scale, matrix3(s.rotation.to_matrix()), t);
      },
      py::arg("source"), py::arg("target"), py::arg("with_scale") = true,
      "Least-squares (scale, rotation, translation) with target ~ scale * R @ source + t.");

  m.def(
      "chamfer",
      [](const Array& pred, const Array& gt, bool align) {
        const ChamferReport r = chamfer(array_to_points(pred), array_to_points(gt), align);
        return py::dict(py::arg("accuracy") = r.accuracy, py::arg("completeness") = r.completeness,
                        py::arg("overall") = r.overall);
      },
      py::arg("pred"), py::arg("gt"), py::arg("align") = false);

  m.def(
      "pose_metrics",
      [](const Array& pred, const Array& gt, int max_threshold) {
        return pose_report(pose_metrics(array_to_poses(pred), array_to_poses(gt), max_threshold));
      },
      py::arg("pred"), py::arg("gt"), py::arg("max_threshold") = 30);

  m.def(
      "memory_footprint",
      [](std::size_t dim, std::size_t depth, std::size_t tokens_per_frame) {
        const MemoryFootprint f = memory_footprint(dim, depth, tokens_per_frame);
        return py::dict(py::arg("pool_bytes_per_frame") = f.pool_bytes_per_frame,
                        py::arg("kv_bytes_per_frame") = f.kv_bytes_per_frame, py::arg("ratio") = f.ratio);
      },
      py::arg("dim"), py::arg("depth"), py::arg("tokens_per_frame"));

  m.def(
      "read_sequence",
      [](const std::string& path) {
        const Sequence seq = read_sequence(std::filesystem::path(path));
        std::vector<Pose> poses;
        std::vector<PointMap> maps;
        std::vector<ConfidenceMap> conf;
        std::vector<FrameId> ids;
        for (const auto& f : seq.frames) {
          ids.push_back(f.id);
          poses.push_back(f.pose);
          maps.push_back(f.points);
          if (f.confidence) conf.push_back(*f.confidence);
        }
        const py::tuple arrays = maps_to_arrays(maps);
        py::dict d;
        d["kind"] = seq.manifest.kind;
        d["frame_ids"] = ids;
        d["poses"] = poses_to_array(poses);
        d["points"] = arrays[0];
        d["valid"] = arrays[1];
        d["confidence"] = seq.manifest.has_confidence ? py::object(confidence_to_array(conf)) : py::none();
        return d;
      },
      py::arg("path"));

  m.def(
      "self_check",
      [](std::uint64_t seed) {
        py::list out;
        for (const auto& r : run_selfchecks({seed, false}))
          out.append(py::dict(py::arg("name") = r.name, py::arg("passed") = r.passed,
                              py::arg("measured") = r.measured, py::arg("limit") = r.limit,
                              py::arg("detail") = r.detail));
        return out;
      },
      py::arg("seed") = 0, "Runs the built-in verification suite.");
}
