#include "streamrec/attention.hpp"

#include <atomic>
#include <cmath>

#include "streamrec/errors.hpp"

namespace streamrec {

namespace {

std::atomic<bool> g_mask_fault{false};

bool key_visible(std::size_t key_window, std::size_t query_window) {
  if (g_mask_fault.load(std::memory_order_relaxed)) return key_window <= query_window + 1;
  return key_window <= query_window;
}

double gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

}  // namespace

namespace debug {
void inject_mask_fault(bool enabled) { g_mask_fault.store(enabled); }
bool mask_fault_injected() { return g_mask_fault.load(); }
}  // namespace debug

AttentionMask window_causal_mask(std::span<const std::size_t> query_windows,
                                 std::span<const std::size_t> key_windows) {
  AttentionMask mask{query_windows.size(), key_windows.size(),
                     std::vector<std::uint8_t>(query_windows.size() * key_windows.size(), 0)};
  for (std::size_t q = 0; q < query_windows.size(); ++q) {
    for (std::size_t k = 0; k < key_windows.size(); ++k) {
      mask.allowed[q * key_windows.size() + k] = key_visible(key_windows[k], query_windows[q]) ? 1 : 0;
    }
  }
  return mask;
}

AttentionMask build_window_mask(std::size_t window_size, std::size_t window_index, std::size_t tokens_per_frame,
                                std::size_t key_windows) {
  if (window_index < 1) throw std::invalid_argument("build_window_mask: window_index is 1-based");
  if (key_windows == 0) key_windows = window_index;
  const std::size_t per_window = window_size * tokens_per_frame;
  std::vector<std::size_t> q(per_window, window_index);
  std::vector<std::size_t> k(per_window * key_windows);
  for (std::size_t i = 0; i < k.size(); ++i) k[i] = i / per_window + 1;
  return window_causal_mask(q, k);
}

AttentionMask build_stacked_window_mask(std::size_t window_size, std::size_t window_count,
                                        std::size_t tokens_per_frame) {
  const std::size_t per_window = window_size * tokens_per_frame;
  std::vector<std::size_t> ids(per_window * window_count);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i / per_window + 1;
  return window_causal_mask(ids, ids);
}

AttentionMask full_mask(std::size_t queries, std::size_t keys) {
  return {queries, keys, std::vector<std::uint8_t>(queries * keys, 1)};
}

LayerNormParams LayerNormParams::unit(std::size_t dim) {
  return {std::vector<double>(dim, 1.0), std::vector<double>(dim, 0.0)};
}

MhaWeights MhaWeights::random(SeededRng& rng, std::size_t dim, std::size_t heads) {
  if (heads == 0 || dim % heads != 0) throw ShapeError("MhaWeights: dim must be divisible by heads");
  MhaWeights w;
  w.heads = heads;
  w.wq = random_matrix(rng, dim, dim);
  w.wk = random_matrix(rng, dim, dim);
  w.wv = random_matrix(rng, dim, dim);
  w.wo = random_matrix(rng, dim, dim);
  w.bq = w.bk = w.bv = w.bo = std::vector<double>(dim, 0.0);
  return w;
}

MhaWeights MhaWeights::identity(std::size_t dim, std::size_t heads) {
  if (heads == 0 || dim % heads != 0) throw ShapeError("MhaWeights: dim must be divisible by heads");
  MhaWeights w;
  w.heads = heads;
  w.wq = w.wk = w.wv = w.wo = Matrix::identity(dim);
  w.bq = w.bk = w.bv = w.bo = std::vector<double>(dim, 0.0);
  return w;
}

Matrix mha(const Matrix& queries, const Matrix& keys, const Matrix& values, const AttentionMask& mask,
           const MhaWeights& weights) {
  const std::size_t dim = weights.dim();
  if (queries.cols() != dim || keys.cols() != dim || values.cols() != dim) {
    throw ShapeError("mha: token width != projection width");
  }
  if (keys.rows() != values.rows()) throw ShapeError("mha: keys and values differ in count");
  if (mask.rows != queries.rows() || mask.cols != keys.rows()) throw ShapeError("mha: mask shape mismatch");

  const Matrix q = linear(queries, weights.wq, weights.bq);
  const Matrix k = linear(keys, weights.wk, weights.bk);
  const Matrix v = linear(values, weights.wv, weights.bv);
  const std::size_t head_dim = dim / weights.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Matrix context(queries.rows(), dim);
  Matrix scores(queries.rows(), keys.rows());
  for (std::size_t h = 0; h < weights.heads; ++h) {
    const std::size_t off = h * head_dim;
    for (std::size_t i = 0; i < q.rows(); ++i) {
      for (std::size_t j = 0; j < k.rows(); ++j) {
        if (!mask(i, j)) {
          scores(i, j) = 0.0;
          continue;
        }
        double s = 0.0;
        for (std::size_t d = 0; d < head_dim; ++d) s += q(i, off + d) * k(j, off + d);
        scores(i, j) = s * scale;
      }
    }
    const Matrix probs = softmax_rows(scores, mask);
    for (std::size_t i = 0; i < q.rows(); ++i) {
      for (std::size_t j = 0; j < k.rows(); ++j) {
        // Blocked keys are skipped, not multiplied by zero, so appending
        // blocked keys cannot perturb a single bit of the result.
        if (!mask(i, j)) continue;
        const double p = probs(i, j);
        for (std::size_t d = 0; d < head_dim; ++d) context(i, off + d) += p * v(j, off + d);
      }
    }
  }
  return linear(context, weights.wo, weights.bo);
}

SelfAttentionBlock SelfAttentionBlock::random(SeededRng& rng, std::size_t dim, std::size_t heads,
                                              std::size_t hidden) {
  SelfAttentionBlock b;
  b.norm_attn = LayerNormParams::unit(dim);
  b.attn = MhaWeights::random(rng, dim, heads);
  b.norm_mlp = LayerNormParams::unit(dim);
  b.w1 = random_matrix(rng, dim, hidden);
  b.w2 = random_matrix(rng, hidden, dim);
  b.b1.assign(hidden, 0.0);
  b.b2.assign(dim, 0.0);
  return b;
}

Matrix SelfAttentionBlock::forward(const Matrix& x, const AttentionMask& mask) const {
  const Matrix normed = norm_attn.apply(x);
  Matrix h = add(x, mha(normed, normed, normed, mask, attn));
  Matrix inner = linear(norm_mlp.apply(h), w1, b1);
  for (double& v : inner.data()) v = gelu(v);
  return add(h, linear(inner, w2, b2));
}

CrossAttentionBlock CrossAttentionBlock::random(SeededRng& rng, std::size_t dim, std::size_t heads) {
  return {LayerNormParams::unit(dim), LayerNormParams::unit(dim), MhaWeights::random(rng, dim, heads)};
}

Matrix CrossAttentionBlock::forward(const Matrix& x, const Matrix& context) const {
  const Matrix ctx = norm_context.apply(context);
  return add(x, mha(norm_query.apply(x), ctx, ctx, full_mask(x.rows(), context.rows()), attn));
}

DecoderWeights DecoderWeights::random(const DecoderConfig& config, SeededRng& rng) {
  DecoderWeights w;
  w.config = config;
  if (config.slot_embedding) w.slot_embedding = random_matrix(rng, config.window_size, config.dim);
  w.camera_token = random_matrix(rng, 1, config.dim);
  w.initial_state = random_matrix(rng, config.state_count, config.dim);
  for (std::size_t u = 0; u < config.depth; ++u) {
    DecoderUnit unit;
    unit.frame = SelfAttentionBlock::random(rng, config.dim, config.heads, config.mlp_hidden);
    unit.read_state = CrossAttentionBlock::random(rng, config.dim, config.heads);
    unit.global = SelfAttentionBlock::random(rng, config.dim, config.heads, config.mlp_hidden);
    unit.write_state = CrossAttentionBlock::random(rng, config.dim, config.heads);
    w.units.push_back(std::move(unit));
  }
  return w;
}

DecoderOutput decoder_forward(std::span<const Matrix> window_tokens, const Matrix& state,
                              const DecoderWeights& weights) {
  const auto& cfg = weights.config;
  if (window_tokens.size() != cfg.window_size) {
    throw ShapeError("decoder_forward: expected " + std::to_string(cfg.window_size) + " frames, got " +
                     std::to_string(window_tokens.size()));
  }
  const std::size_t per_frame = window_tokens.front().rows();
  for (const auto& f : window_tokens) {
    if (f.rows() != per_frame || f.cols() != cfg.dim || per_frame == 0) {
      throw ShapeError("decoder_forward: frames must share an (N+1) x dim shape");
    }
  }
  if (state.cols() != cfg.dim) throw ShapeError("decoder_forward: state width != dim");

  DecoderOutput out;
  out.state = state;
  if (weights.units.empty()) {
    out.global_tokens.assign(window_tokens.begin(), window_tokens.end());
    out.local_tokens = out.global_tokens;
    return out;
  }

  Matrix x = Matrix::vstack(window_tokens);
  if (!weights.slot_embedding.empty()) {
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const auto emb = weights.slot_embedding.row(r / per_frame);
      auto row = x.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += emb[c];
    }
  }

  const AttentionMask frame_mask = full_mask(per_frame, per_frame);
  const AttentionMask window_mask = full_mask(x.rows(), x.rows());
  Matrix local;
  for (const auto& unit : weights.units) {
    for (std::size_t f = 0; f < cfg.window_size; ++f) {
      x.set_rows(f * per_frame, unit.frame.forward(x.slice_rows(f * per_frame, per_frame), frame_mask));
    }
    x = unit.read_state.forward(x, out.state);
    local = x;
    x = unit.global.forward(x, window_mask);
    out.state = unit.write_state.forward(out.state, x);
  }

  for (std::size_t f = 0; f < cfg.window_size; ++f) {
    out.local_tokens.push_back(local.slice_rows(f * per_frame, per_frame));
    out.global_tokens.push_back(x.slice_rows(f * per_frame, per_frame));
  }
  return out;
}

}  // namespace streamrec
