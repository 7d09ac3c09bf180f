#include "streamrec/pipeline.hpp"

#include <algorithm>
#include <future>

#include "streamrec/errors.hpp"

namespace streamrec {

namespace {

using Clock = std::chrono::steady_clock;

StageTimings::Duration since(Clock::time_point start) { return Clock::now() - start; }

}  // namespace

DecoderConfig ModelConfig::decoder() const {
  return {dim, heads, depth, state_count, window_size, 2 * dim, slot_embedding};
}

CameraHeadConfig ModelConfig::camera() const { return {2 * dim, heads, camera_depth, 2 * dim}; }

ConvHeadConfig ModelConfig::point_head() const { return {dim, patch, head_width}; }

StageTimings& StageTimings::operator+=(const StageTimings& o) {
  encode += o.encode;
  decoder += o.decoder;
  point_head += o.point_head;
  camera_head += o.camera_head;
  merge += o.merge;
  return *this;
}

PatchEmbedder PatchEmbedder::random(SeededRng& rng, std::size_t patch, std::size_t dim) {
  PatchEmbedder e;
  e.patch = patch;
  e.weight = random_matrix(rng, 3 * patch * patch, dim);
  e.bias.assign(dim, 0.0);
  return e;
}

Matrix PatchEmbedder::encode(const PointMap& image) const {
  if (patch == 0 || image.height % patch != 0 || image.width % patch != 0) {
    throw ShapeError("PatchEmbedder: patch size must divide the image size");
  }
  const std::size_t gh = image.height / patch;
  const std::size_t gw = image.width / patch;
  Matrix patches(gh * gw, 3 * patch * patch);
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      auto row = patches.row(py * gw + px);
      std::size_t c = 0;
      for (std::size_t y = 0; y < patch; ++y) {
        for (std::size_t x = 0; x < patch; ++x) {
          const std::size_t idx = (py * patch + y) * image.width + px * patch + x;
          const Vec3 p = image.valid[idx] ? image.points[idx] : Vec3::Zero();
          row[c++] = p.x();
          row[c++] = p.y();
          row[c++] = p.z();
        }
      }
    }
  }
  return linear(patches, weight, bias);
}

Model Model::random(const ModelConfig& config, std::uint64_t seed) {
  if (config.window_size < 2 || config.window_size % 2 != 0) {
    throw std::invalid_argument("Model: window size must be even and >= 2");
  }
  SeededRng root(seed);
  SeededRng enc_rng = root.fork(10);
  SeededRng dec_rng = root.fork(11);
  SeededRng cam_rng = root.fork(12);
  SeededRng head_rng = root.fork(13);
  Model m;
  m.config = config;
  m.encoder = PatchEmbedder::random(enc_rng, config.patch, config.dim);
  m.decoder = DecoderWeights::random(config.decoder(), dec_rng);
  m.camera_head = CameraHeadWeights::random(config.camera(), cam_rng);
  m.point_head = ConvHeadWeights::random(config.point_head(), head_rng);
  return m;
}

Model Model::oracle(ModelConfig config, std::uint64_t seed) {
  config.depth = 0;
  config.camera_depth = 0;
  config.patch = 1;
  config.slot_embedding = false;
  SeededRng root(seed);
  SeededRng dec_rng = root.fork(11);
  Model m;
  m.config = config;
  m.encoder = OracleTokenSource(seed, config.dim);
  m.decoder = DecoderWeights::random(config.decoder(), dec_rng);
  m.camera_head = CameraHeadWeights::channel_select(2 * config.dim, 0);
  m.point_head = ConvHeadWeights::channel_passthrough(config.point_head());
  return m;
}

StreamingReconstructor::StreamingReconstructor(const Model& model, std::size_t image_height,
                                               std::size_t image_width, std::size_t threads)
    : model_(model),
      height_(image_height),
      width_(image_width),
      threads_(std::max<std::size_t>(threads, 1)),
      state_(model.config.window_size),
      pool_(2 * model.config.dim),
      state_tokens_(model.decoder.initial_state) {}

void StreamingReconstructor::push(const FrameObservation& frame) {
  if (frame.image.height != height_ || frame.image.width != width_) {
    throw ShapeError("StreamingReconstructor: frame size differs from the stream's");
  }
  const auto start = Clock::now();
  Matrix tokens;
  if (const auto* oracle = std::get_if<OracleTokenSource>(&model_.encoder)) {
    auto enc = oracle->encode(frame.id, frame.pose, frame.image);
    const std::size_t dim = enc.camera.size();
    tokens = Matrix::vstack(std::vector<Matrix>{Matrix(1, dim, std::move(enc.camera)), enc.image});
  } else {
    const auto& patch = std::get<PatchEmbedder>(model_.encoder);
    tokens = Matrix::vstack(std::vector<Matrix>{model_.decoder.camera_token, patch.encode(frame.image)});
  }
  const auto encode_time = since(start);

  auto window = state_.push_frame(frame.id);
  encoded_.emplace(frame.id, std::move(tokens));
  if (window) {
    process(*window);
    records_.back().timings.encode += encode_time;
  }
}

void StreamingReconstructor::finish() {
  if (auto window = state_.finalize()) process(*window);
  encoded_.clear();
}

void StreamingReconstructor::process(const Window& window) {
  WindowRecord record;
  record.window = window;
  const std::size_t w = window.frames.size();

  auto start = Clock::now();
  std::vector<Matrix> inputs;
  inputs.reserve(w);
  for (FrameId id : window.frames) inputs.push_back(encoded_.at(id));
  DecoderOutput dec = decoder_forward(inputs, state_tokens_, model_.decoder);
  state_tokens_ = std::move(dec.state);
  record.timings.decoder = since(start);

  start = Clock::now();
  std::vector<std::pair<PointMap, ConfidenceMap>> maps(w);
  auto run_head = [&](std::size_t s) {
    const Matrix& local = dec.local_tokens[s];
    maps[s] = conv_head(local.slice_rows(1, local.rows() - 1), height_, width_, model_.point_head);
  };
  if (threads_ == 1) {
    for (std::size_t s = 0; s < w; ++s) run_head(s);
  } else {
    for (std::size_t first = 0; first < w; first += threads_) {
      std::vector<std::future<void>> jobs;
      for (std::size_t s = first; s < std::min(w, first + threads_); ++s) {
        jobs.push_back(std::async(std::launch::async, run_head, s));
      }
      for (auto& j : jobs) j.get();
    }
  }
  record.timings.point_head = since(start);

  start = Clock::now();
  Matrix cam(w, 2 * model_.config.dim);
  for (std::size_t s = 0; s < w; ++s) {
    const auto token = concat_tokens(dec.local_tokens[s].row(0), dec.global_tokens[s].row(0));
    std::copy(token.begin(), token.end(), cam.row(s).begin());
  }
  record.poses = camera_head(cam, pool_, model_.camera_head);
  pool_.append(cam, window.index, window.frames);
  record.camera_tokens = std::move(cam);
  record.timings.camera_head = since(start);

  start = Clock::now();
  std::vector<FramePrediction> preds;
  preds.reserve(w);
  for (std::size_t s = 0; s < w; ++s) {
    preds.push_back({record.poses[s], std::move(maps[s].first), std::move(maps[s].second)});
  }
  state_.merge_overlap(window, preds);
  // Frames that can no longer appear in a later window are dropped.
  const std::size_t keep = window.duplicated.back() ? 0 : state_.stride();
  std::map<FrameId, Matrix> kept;
  for (std::size_t s = w - keep; s < w; ++s) {
    auto it = encoded_.find(window.frames[s]);
    if (it != encoded_.end()) kept.insert(*it);
  }
  for (auto& [id, tok] : encoded_) {
    if (id > window.frames.back()) kept.emplace(id, std::move(tok));
  }
  encoded_ = std::move(kept);
  record.timings.merge = since(start);

  records_.push_back(std::move(record));
}

RunResult run_stream(const Model& model, std::span<const FrameObservation> frames, std::size_t threads) {
  if (frames.empty()) throw EmptyInputError("run_stream: no frames");
  StreamingReconstructor rec(model, frames.front().image.height, frames.front().image.width, threads);
  for (const auto& f : frames) rec.push(f);
  rec.finish();

  RunResult out;
  for (const auto& [id, merged] : rec.outputs()) {
    out.frame_ids.push_back(id);
    out.poses.push_back(merged.pose);
    out.points.push_back(merged.points);
    out.confidence.push_back(merged.confidence);
  }
  out.windows = rec.windows();
  out.pool = rec.pool();
  return out;
}

std::vector<FrameObservation> observations_from(const SceneSample& scene) {
  std::vector<FrameObservation> out;
  out.reserve(scene.frame_count());
  for (std::size_t f = 0; f < scene.frame_count(); ++f) {
    out.push_back({scene.frame_ids[f], scene.points[f], scene.poses[f]});
  }
  return out;
}

MemoryFootprint memory_footprint(std::size_t dim, std::size_t depth, std::size_t tokens_per_frame) {
  MemoryFootprint m;
  m.pool_bytes_per_frame = 2 * dim * sizeof(double);
  m.kv_bytes_per_frame = depth * 2 * tokens_per_frame * dim * sizeof(double);
  m.ratio = static_cast<double>(m.kv_bytes_per_frame) / static_cast<double>(m.pool_bytes_per_frame);
  return m;
}

}  // namespace streamrec
