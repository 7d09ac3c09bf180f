#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "streamrec/tensor.hpp"

namespace streamrec {

/// Allowed (query, key) pairs. Every query row must allow at least one key.
using AttentionMask = AllowGrid;

/// Queries are the tokens of window `window_index` (1-based); keys are the
/// tokens of windows 1..key_windows (defaults to window_index). A key is
/// visible iff its window is <= the query window.
AttentionMask build_window_mask(std::size_t window_size, std::size_t window_index,
                                std::size_t tokens_per_frame, std::size_t key_windows = 0);

/// Windows 1..window_count stacked on both axes: the block lower-triangular
/// sliding-window mask used when a whole sequence is processed at once.
AttentionMask build_stacked_window_mask(std::size_t window_size, std::size_t window_count,
                                        std::size_t tokens_per_frame);

/// General form: allowed iff key_windows[k] <= query_windows[q].
AttentionMask window_causal_mask(std::span<const std::size_t> query_windows,
                                 std::span<const std::size_t> key_windows);

AttentionMask full_mask(std::size_t queries, std::size_t keys);

namespace debug {
/// Makes the window mask builders leak one future window into the visible
/// set. Only for exercising the verification suite's failure path.
void inject_mask_fault(bool enabled);
bool mask_fault_injected();
}  // namespace debug

struct LayerNormParams {
  std::vector<double> gain;
  std::vector<double> shift;

  static LayerNormParams unit(std::size_t dim);
  Matrix apply(const Matrix& x) const { return layer_norm(x, gain, shift); }
};

struct MhaWeights {
  std::size_t heads = 1;
  Matrix wq, wk, wv, wo;  // each dim x dim
  std::vector<double> bq, bk, bv, bo;

  std::size_t dim() const { return wq.rows(); }
  static MhaWeights random(SeededRng& rng, std::size_t dim, std::size_t heads);
  /// Identity projections, zero biases.
  static MhaWeights identity(std::size_t dim, std::size_t heads);
};

/// Scaled dot-product attention per head over the allowed keys, heads
/// concatenated then output-projected.
Matrix mha(const Matrix& queries, const Matrix& keys, const Matrix& values, const AttentionMask& mask,
           const MhaWeights& weights);

/// Pre-norm self-attention block with a GELU MLP.
struct SelfAttentionBlock {
  LayerNormParams norm_attn;
  MhaWeights attn;
  LayerNormParams norm_mlp;
  Matrix w1, w2;
  std::vector<double> b1, b2;

  static SelfAttentionBlock random(SeededRng& rng, std::size_t dim, std::size_t heads, std::size_t hidden);
  Matrix forward(const Matrix& x, const AttentionMask& mask) const;
};

/// Pre-norm cross-attention: x + attn(LN(x), LN(context)).
struct CrossAttentionBlock {
  LayerNormParams norm_query;
  LayerNormParams norm_context;
  MhaWeights attn;

  static CrossAttentionBlock random(SeededRng& rng, std::size_t dim, std::size_t heads);
  Matrix forward(const Matrix& x, const Matrix& context) const;
};

struct DecoderConfig {
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t depth = 2;  // alternating frame/global pairs
  std::size_t state_count = 16;
  std::size_t window_size = 4;
  std::size_t mlp_hidden = 128;
  bool slot_embedding = true;
};

/// One depth unit: frame attention, state read, global attention, state write.
struct DecoderUnit {
  SelfAttentionBlock frame;
  CrossAttentionBlock read_state;
  SelfAttentionBlock global;
  CrossAttentionBlock write_state;
};

struct DecoderWeights {
  DecoderConfig config;
  Matrix slot_embedding;  // window_size x dim, empty when disabled
  Matrix camera_token;    // 1 x dim, prepended to each frame's image tokens
  Matrix initial_state;   // state_count x dim
  std::vector<DecoderUnit> units;

  static DecoderWeights random(const DecoderConfig& config, SeededRng& rng);
};

struct DecoderOutput {
  std::vector<Matrix> global_tokens;  // per frame, row 0 is the camera token
  std::vector<Matrix> local_tokens;
  Matrix state;
};

/// Two-branch window decoder. `window_tokens` holds one (N+1) x C matrix per
/// frame with the camera token in row 0. Throws ShapeError unless exactly
/// window_size frames of equal shape are given.
DecoderOutput decoder_forward(std::span<const Matrix> window_tokens, const Matrix& state,
                              const DecoderWeights& weights);

}  // namespace streamrec
