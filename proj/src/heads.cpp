#include "streamrec/heads.hpp"

#include <algorithm>
#include <cmath>

#include "streamrec/errors.hpp"

namespace streamrec {

std::size_t PointMap::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

double confidence_from_raw(double raw) { return 1.0 + std::exp(std::min(raw, kRawConfidenceCeiling)); }

ConvLayer ConvLayer::zeros(std::size_t in, std::size_t out, std::size_t kernel) {
  if (kernel % 2 == 0) throw ShapeError("ConvLayer: kernel must be odd");
  ConvLayer layer;
  layer.in_channels = in;
  layer.out_channels = out;
  layer.kernel = kernel;
  layer.weight.assign(out * in * kernel * kernel, 0.0);
  layer.bias.assign(out, 0.0);
  return layer;
}

ConvLayer ConvLayer::random(SeededRng& rng, std::size_t in, std::size_t out, std::size_t kernel) {
  ConvLayer layer = zeros(in, out, kernel);
  for (double& v : layer.weight) v = rng.truncated_normal(0.02);
  return layer;
}

FeatureGrid conv2d(const FeatureGrid& in, const ConvLayer& layer) {
  if (in.channels != layer.in_channels) throw ShapeError("conv2d: channel mismatch");
  FeatureGrid out(in.height, in.width, layer.out_channels);
  const auto half = static_cast<std::ptrdiff_t>(layer.kernel / 2);
  const auto h = static_cast<std::ptrdiff_t>(in.height);
  const auto w = static_cast<std::ptrdiff_t>(in.width);
  for (std::ptrdiff_t y = 0; y < h; ++y) {
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      for (std::size_t o = 0; o < layer.out_channels; ++o) {
        double acc = layer.bias[o];
        for (std::ptrdiff_t ky = -half; ky <= half; ++ky) {
          const std::ptrdiff_t sy = y + ky;
          if (sy < 0 || sy >= h) continue;
          for (std::ptrdiff_t kx = -half; kx <= half; ++kx) {
            const std::ptrdiff_t sx = x + kx;
            if (sx < 0 || sx >= w) continue;
            const auto ky_i = static_cast<std::size_t>(ky + half);
            const auto kx_i = static_cast<std::size_t>(kx + half);
            for (std::size_t i = 0; i < layer.in_channels; ++i) {
              acc += layer.w(o, i, ky_i, kx_i) *
                     in.at(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), i);
            }
          }
        }
        out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), o) = acc;
      }
    }
  }
  return out;
}

FeatureGrid upsample_nearest(const FeatureGrid& in, std::size_t factor) {
  if (factor == 1) return in;
  FeatureGrid out(in.height * factor, in.width * factor, in.channels);
  for (std::size_t y = 0; y < out.height; ++y) {
    for (std::size_t x = 0; x < out.width; ++x) {
      for (std::size_t c = 0; c < in.channels; ++c) out.at(y, x, c) = in.at(y / factor, x / factor, c);
    }
  }
  return out;
}

ConvHeadWeights ConvHeadWeights::random(const ConvHeadConfig& config, SeededRng& rng) {
  ConvHeadWeights w;
  w.config = config;
  w.activation = Activation::relu;
  w.project = ConvLayer::random(rng, config.dim, config.width, 3);
  w.refine = ConvLayer::random(rng, config.width, 4, 3);
  return w;
}

ConvHeadWeights ConvHeadWeights::channel_passthrough(const ConvHeadConfig& config) {
  if (config.dim < 4 || config.width < 4) throw ShapeError("channel_passthrough: need at least 4 channels");
  ConvHeadWeights w;
  w.config = config;
  w.activation = Activation::none;
  w.project = ConvLayer::zeros(config.dim, config.width, 3);
  for (std::size_t c = 0; c < std::min(config.dim, config.width); ++c) w.project.w(c, c, 1, 1) = 1.0;
  w.refine = ConvLayer::zeros(config.width, 4, 3);
  for (std::size_t c = 0; c < 4; ++c) w.refine.w(c, c, 1, 1) = 1.0;
  return w;
}

std::pair<PointMap, ConfidenceMap> conv_head(const Matrix& tokens, std::size_t image_height,
                                             std::size_t image_width, const ConvHeadWeights& weights) {
  const std::size_t p = weights.config.patch;
  if (p == 0 || image_height % p != 0 || image_width % p != 0) {
    throw ShapeError("conv_head: patch size must divide the image size");
  }
  const std::size_t gh = image_height / p;
  const std::size_t gw = image_width / p;
  if (tokens.rows() != gh * gw) {
    throw ShapeError("conv_head: " + std::to_string(tokens.rows()) + " tokens do not form a " +
                     std::to_string(gh) + "x" + std::to_string(gw) + " grid");
  }
  if (tokens.cols() != weights.config.dim) throw ShapeError("conv_head: token width != head dim");

  FeatureGrid grid(gh, gw, tokens.cols());
  std::copy(tokens.data().begin(), tokens.data().end(), grid.data.begin());

  FeatureGrid hidden = conv2d(grid, weights.project);
  if (weights.activation == Activation::relu) {
    for (double& v : hidden.data) v = std::max(v, 0.0);
  }
  const FeatureGrid out = conv2d(upsample_nearest(hidden, p), weights.refine);

  PointMap points(image_width, image_height);
  ConfidenceMap conf(image_width, image_height);
  for (std::size_t y = 0; y < image_height; ++y) {
    for (std::size_t x = 0; x < image_width; ++x) {
      points.at(y, x) = Vec3(out.at(y, x, 0), out.at(y, x, 1), out.at(y, x, 2));
      conf.conf[y * image_width + x] = confidence_from_raw(out.at(y, x, 3));
    }
  }
  return {std::move(points), std::move(conf)};
}

}  // namespace streamrec
