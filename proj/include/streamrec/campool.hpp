#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "streamrec/attention.hpp"
#include "streamrec/geomath.hpp"
#include "streamrec/tensor.hpp"
#include "streamrec/windowing.hpp"

namespace streamrec {

/// Final camera token: [local || global].
std::vector<double> concat_tokens(std::span<const double> local, std::span<const double> global);

struct PoolEntry {
  std::size_t window = 0;
  std::size_t slot = 0;
  FrameId frame = 0;
};

/// Append-only pool of concatenated camera tokens, one entry per
/// (window, slot). Token payloads live in one contiguous f64 buffer.
class CameraTokenPool {
 public:
  explicit CameraTokenPool(std::size_t token_dim = 0) : token_dim_(token_dim) {}

  /// Appends one token per slot for window `window`, which must be exactly
  /// one past the last appended window. Throws OrderingError otherwise.
  void append(const Matrix& window_tokens, std::size_t window, std::span<const FrameId> frames);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t token_dim() const { return token_dim_; }
  std::size_t last_window() const { return entries_.empty() ? 0 : entries_.back().window; }
  const std::vector<PoolEntry>& entries() const { return entries_; }
  std::span<const double> token(std::size_t i) const { return {tokens_.data() + i * token_dim_, token_dim_}; }

  /// All tokens stacked, one per row.
  Matrix tokens() const;
  /// Entries of windows 1..window only.
  CameraTokenPool prefix(std::size_t window) const;

  /// Bytes held by token payloads.
  std::size_t payload_bytes() const { return tokens_.size() * sizeof(double); }

 private:
  std::size_t token_dim_;
  std::vector<PoolEntry> entries_;
  std::vector<double> tokens_;
};

struct CameraHeadConfig {
  std::size_t token_dim = 128;  // 2C
  std::size_t heads = 4;
  std::size_t depth = 2;
  std::size_t mlp_hidden = 128;
};

/// Window-causal self-attention stack over pool + current tokens, then a
/// linear map to 7 raw outputs (quaternion, translation).
struct CameraHeadWeights {
  CameraHeadConfig config;
  std::vector<SelfAttentionBlock> blocks;
  LayerNormParams final_norm;
  bool use_final_norm = true;
  Matrix out_weight;  // token_dim x 7
  std::vector<double> out_bias;

  static CameraHeadWeights random(const CameraHeadConfig& config, SeededRng& rng);
  /// Depth-0 head whose output is token channels `first..first+6` verbatim.
  static CameraHeadWeights channel_select(std::size_t token_dim, std::size_t first = 0);
};

/// Raw 7-vector -> normalized, sign-canonical quaternion + translation.
Pose decode_pose(std::span<const double> raw);

/// Runs the stack over a token sequence with per-token window ids, using the
/// sliding-window causal mask, and returns the raw 7-dim output per token.
Matrix camera_head_raw(const Matrix& tokens, std::span<const std::size_t> window_ids,
                       const CameraHeadWeights& weights);

/// Poses for the current window conditioned on the pool of earlier windows.
/// The current window is numbered pool_before.last_window() + 1.
std::vector<Pose> camera_head(const Matrix& current, const CameraTokenPool& pool_before,
                              const CameraHeadWeights& weights);

}  // namespace streamrec
