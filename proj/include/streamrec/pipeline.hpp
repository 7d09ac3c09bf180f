#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "streamrec/attention.hpp"
#include "streamrec/campool.hpp"
#include "streamrec/heads.hpp"
#include "streamrec/synth.hpp"
#include "streamrec/tensor.hpp"
#include "streamrec/windowing.hpp"

namespace streamrec {

struct ModelConfig {
  std::size_t dim = 64;          // C
  std::size_t heads = 4;
  std::size_t depth = 2;         // decoder alternating pairs
  std::size_t camera_depth = 2;  // camera-head attention blocks
  std::size_t state_count = 16;
  std::size_t window_size = 4;
  std::size_t patch = 8;
  std::size_t head_width = 32;
  bool slot_embedding = true;

  DecoderConfig decoder() const;
  CameraHeadConfig camera() const;
  ConvHeadConfig point_head() const;
};

/// Toy stand-in for the frame encoder: a linear embedding of non-overlapping
/// p x p patches of a 3-channel image.
struct PatchEmbedder {
  std::size_t patch = 8;
  Matrix weight;  // (3 p^2) x dim
  std::vector<double> bias;

  static PatchEmbedder random(SeededRng& rng, std::size_t patch, std::size_t dim);
  /// The frame's local xyz map serves as the 3-channel image.
  Matrix encode(const PointMap& image) const;
};

using Encoder = std::variant<PatchEmbedder, OracleTokenSource>;

struct Model {
  ModelConfig config;
  Encoder encoder;
  DecoderWeights decoder;
  CameraHeadWeights camera_head;
  ConvHeadWeights point_head;

  /// Randomly initialized weights (truncated normal, stddev 0.02).
  static Model random(const ModelConfig& config, std::uint64_t seed);
  /// Ground-truth tokens with identity-configured decoder and heads: the
  /// decoder has no layers, the camera head reads channels 0..6 of the local
  /// camera token and the point head passes channels 0..3 through (patch 1).
  static Model oracle(ModelConfig config, std::uint64_t seed);

  bool uses_oracle() const { return std::holds_alternative<OracleTokenSource>(encoder); }
};

/// One streamed frame as it arrives.
struct FrameObservation {
  FrameId id = 0;
  PointMap image;  // local xyz, also the oracle's ground truth
  Pose pose;       // read only by the oracle encoder
};

struct StageTimings {
  using Duration = std::chrono::duration<double, std::milli>;
  Duration encode{0}, decoder{0}, point_head{0}, camera_head{0}, merge{0};

  Duration total() const { return encode + decoder + point_head + camera_head + merge; }
  StageTimings& operator+=(const StageTimings& o);
};

/// Raw per-window results kept for inspection.
struct WindowRecord {
  Window window;
  std::vector<Pose> poses;
  Matrix camera_tokens;  // w x 2C
  StageTimings timings;
};

/// Drives encoder -> decoder -> heads -> pool -> overlap merge over a frame
/// stream. Single owner; frames must arrive in increasing id order.
class StreamingReconstructor {
 public:
  StreamingReconstructor(const Model& model, std::size_t image_height, std::size_t image_width,
                         std::size_t threads = 1);

  void push(const FrameObservation& frame);
  /// Flushes the padded trailing window. Further pushes throw OrderingError.
  void finish();

  const std::map<FrameId, MergedFrame>& outputs() const { return state_.outputs(); }
  const CameraTokenPool& pool() const { return pool_; }
  const std::vector<WindowRecord>& windows() const { return records_; }
  const Matrix& state_tokens() const { return state_tokens_; }

 private:
  void process(const Window& window);

  const Model& model_;
  std::size_t height_;
  std::size_t width_;
  std::size_t threads_;
  StreamState state_;
  CameraTokenPool pool_;
  Matrix state_tokens_;
  std::map<FrameId, Matrix> encoded_;  // (N+1) x C per buffered frame
  std::vector<WindowRecord> records_;
};

struct RunResult {
  std::vector<FrameId> frame_ids;
  std::vector<Pose> poses;
  std::vector<PointMap> points;
  std::vector<ConfidenceMap> confidence;
  std::vector<WindowRecord> windows;
  CameraTokenPool pool;
};

/// Streams every frame through a reconstructor and collects the merged
/// per-frame outputs in frame order.
RunResult run_stream(const Model& model, std::span<const FrameObservation> frames, std::size_t threads = 1);

std::vector<FrameObservation> observations_from(const SceneSample& scene);

/// Per-frame memory of the camera pool (one 2C f64 token) against a cache of
/// keys and values for all N tokens of a frame in each of `depth` layers.
struct MemoryFootprint {
  std::size_t pool_bytes_per_frame = 0;
  std::size_t kv_bytes_per_frame = 0;
  double ratio = 0.0;
};

MemoryFootprint memory_footprint(std::size_t dim, std::size_t depth, std::size_t tokens_per_frame);

}  // namespace streamrec
