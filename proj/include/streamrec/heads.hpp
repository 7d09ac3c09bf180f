#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "streamrec/geomath.hpp"
#include "streamrec/tensor.hpp"

namespace streamrec {

/// Per-pixel 3D points in the frame's own camera coordinates, row-major.
struct PointMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<Vec3> points;
  std::vector<std::uint8_t> valid;

  PointMap() = default;
  PointMap(std::size_t width, std::size_t height)
      : width(width), height(height), points(width * height, Vec3::Zero()), valid(width * height, 1) {}

  std::size_t pixel_count() const { return width * height; }
  std::size_t valid_count() const;
  Vec3& at(std::size_t row, std::size_t col) { return points[row * width + col]; }
  const Vec3& at(std::size_t row, std::size_t col) const { return points[row * width + col]; }
};

/// Per-pixel confidence, always >= 1.
struct ConfidenceMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> conf;

  ConfidenceMap() = default;
  ConfidenceMap(std::size_t width, std::size_t height, double fill = 1.0)
      : width(width), height(height), conf(width * height, fill) {}
};

/// conf = 1 + exp(raw), with raw clamped to at most 20.
double confidence_from_raw(double raw);
constexpr double kRawConfidenceCeiling = 20.0;

enum class Activation { relu, none };

/// 2D convolution over an HWC grid, square odd kernel, stride 1, zero padding.
struct ConvLayer {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::vector<double> weight;  // [out][in][ky][kx]
  std::vector<double> bias;    // [out]

  double& w(std::size_t o, std::size_t i, std::size_t ky, std::size_t kx) {
    return weight[((o * in_channels + i) * kernel + ky) * kernel + kx];
  }
  double w(std::size_t o, std::size_t i, std::size_t ky, std::size_t kx) const {
    return weight[((o * in_channels + i) * kernel + ky) * kernel + kx];
  }

  static ConvLayer zeros(std::size_t in, std::size_t out, std::size_t kernel);
  static ConvLayer random(SeededRng& rng, std::size_t in, std::size_t out, std::size_t kernel);
};

/// HWC feature grid.
struct FeatureGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> data;

  FeatureGrid() = default;
  FeatureGrid(std::size_t h, std::size_t w, std::size_t c) : height(h), width(w), channels(c), data(h * w * c, 0.0) {}
  double& at(std::size_t y, std::size_t x, std::size_t c) { return data[(y * width + x) * channels + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return data[(y * width + x) * channels + c]; }
};

FeatureGrid conv2d(const FeatureGrid& in, const ConvLayer& layer);
FeatureGrid upsample_nearest(const FeatureGrid& in, std::size_t factor);

struct ConvHeadConfig {
  std::size_t dim = 64;
  std::size_t patch = 8;
  std::size_t width = 32;
};

/// Token grid -> 3x3 conv (dim -> width) -> activation -> nearest upsample by
/// `patch` -> 3x3 refining conv (width -> 4 channels: xyz + raw confidence).
struct ConvHeadWeights {
  ConvHeadConfig config;
  Activation activation = Activation::relu;
  ConvLayer project;
  ConvLayer refine;

  static ConvHeadWeights random(const ConvHeadConfig& config, SeededRng& rng);
  /// Linear head passing token channels 0..3 through unchanged (xyz, raw
  /// confidence) via centre-tap identity kernels.
  static ConvHeadWeights channel_passthrough(const ConvHeadConfig& config);
};

/// Throws ShapeError unless tokens.rows() == (height / patch) * (width / patch)
/// with patch dividing both sides.
std::pair<PointMap, ConfidenceMap> conv_head(const Matrix& tokens, std::size_t image_height,
                                             std::size_t image_width, const ConvHeadWeights& weights);

}  // namespace streamrec
