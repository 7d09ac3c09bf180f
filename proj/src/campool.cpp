#include "streamrec/campool.hpp"

#include "streamrec/errors.hpp"

namespace streamrec {

std::vector<double> concat_tokens(std::span<const double> local, std::span<const double> global) {
  if (local.size() != global.size()) throw ShapeError("concat_tokens: local and global widths differ");
  std::vector<double> out(local.begin(), local.end());
  out.insert(out.end(), global.begin(), global.end());
  return out;
}

void CameraTokenPool::append(const Matrix& window_tokens, std::size_t window, std::span<const FrameId> frames) {
  if (window != last_window() + 1) {
    throw OrderingError("CameraTokenPool::append: expected window " + std::to_string(last_window() + 1) +
                        ", got " + std::to_string(window));
  }
  if (token_dim_ == 0) token_dim_ = window_tokens.cols();
  if (window_tokens.cols() != token_dim_) throw ShapeError("CameraTokenPool::append: token width mismatch");
  if (frames.size() != window_tokens.rows()) throw ShapeError("CameraTokenPool::append: one frame id per token");
  for (std::size_t s = 0; s < window_tokens.rows(); ++s) {
    entries_.push_back({window, s, frames[s]});
    const auto row = window_tokens.row(s);
    tokens_.insert(tokens_.end(), row.begin(), row.end());
  }
}

Matrix CameraTokenPool::tokens() const { return Matrix(entries_.size(), token_dim_, tokens_); }

CameraTokenPool CameraTokenPool::prefix(std::size_t window) const {
  CameraTokenPool out(token_dim_);
  std::size_t n = 0;
  while (n < entries_.size() && entries_[n].window <= window) ++n;
  out.entries_.assign(entries_.begin(), entries_.begin() + static_cast<std::ptrdiff_t>(n));
  out.tokens_.assign(tokens_.begin(), tokens_.begin() + static_cast<std::ptrdiff_t>(n * token_dim_));
  return out;
}

CameraHeadWeights CameraHeadWeights::random(const CameraHeadConfig& config, SeededRng& rng) {
  CameraHeadWeights w;
  w.config = config;
  for (std::size_t d = 0; d < config.depth; ++d) {
    w.blocks.push_back(SelfAttentionBlock::random(rng, config.token_dim, config.heads, config.mlp_hidden));
  }
  w.final_norm = LayerNormParams::unit(config.token_dim);
  w.out_weight = random_matrix(rng, config.token_dim, 7);
  // Bias toward the identity rotation so an untrained head emits sane poses.
  w.out_bias = {1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  return w;
}

CameraHeadWeights CameraHeadWeights::channel_select(std::size_t token_dim, std::size_t first) {
  if (first + 7 > token_dim) throw ShapeError("channel_select: token too narrow");
  CameraHeadWeights w;
  w.config = {token_dim, 1, 0, 0};
  w.use_final_norm = false;
  w.final_norm = LayerNormParams::unit(token_dim);
  w.out_weight = Matrix(token_dim, 7);
  for (std::size_t k = 0; k < 7; ++k) w.out_weight(first + k, k) = 1.0;
  w.out_bias.assign(7, 0.0);
  return w;
}

Pose decode_pose(std::span<const double> raw) {
  if (raw.size() != 7) throw ShapeError("decode_pose: expected 7 values");
  return {Quaternion::unit(raw[0], raw[1], raw[2], raw[3]), Vec3(raw[4], raw[5], raw[6])};
}

Matrix camera_head_raw(const Matrix& tokens, std::span<const std::size_t> window_ids,
                       const CameraHeadWeights& weights) {
  if (tokens.rows() == 0) throw EmptyInputError("camera_head: no tokens");
  if (window_ids.size() != tokens.rows()) throw ShapeError("camera_head: one window id per token");
  if (tokens.cols() != weights.out_weight.rows()) throw ShapeError("camera_head: token width mismatch");
  const AttentionMask mask = window_causal_mask(window_ids, window_ids);
  Matrix x = tokens;
  for (const auto& block : weights.blocks) x = block.forward(x, mask);
  if (weights.use_final_norm) x = weights.final_norm.apply(x);
  return linear(x, weights.out_weight, weights.out_bias);
}

std::vector<Pose> camera_head(const Matrix& current, const CameraTokenPool& pool_before,
                              const CameraHeadWeights& weights) {
  if (current.rows() == 0) throw EmptyInputError("camera_head: empty current window");
  const std::size_t window = pool_before.last_window() + 1;
  std::vector<std::size_t> ids;
  ids.reserve(pool_before.size() + current.rows());
  for (const auto& e : pool_before.entries()) ids.push_back(e.window);
  ids.insert(ids.end(), current.rows(), window);

  const Matrix sequence =
      pool_before.empty() ? current : Matrix::vstack(std::vector<Matrix>{pool_before.tokens(), current});
  const Matrix raw = camera_head_raw(sequence, ids, weights);

  std::vector<Pose> poses;
  poses.reserve(current.rows());
  for (std::size_t r = pool_before.size(); r < raw.rows(); ++r) poses.push_back(decode_pose(raw.row(r)));
  return poses;
}

}  // namespace streamrec
