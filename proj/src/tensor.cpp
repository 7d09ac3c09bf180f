#include "streamrec/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "streamrec/errors.hpp"

namespace streamrec {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) throw ShapeError("Matrix: data length != rows * cols");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::slice_rows(std::size_t first, std::size_t count) const {
  if (first + count > rows_) throw ShapeError("slice_rows: out of range");
  Matrix out(count, cols_);
  std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(first * cols_), count * cols_, out.data_.begin());
  return out;
}

Matrix Matrix::slice_cols(std::size_t first, std::size_t count) const {
  if (first + count > cols_) throw ShapeError("slice_cols: out of range");
  Matrix out(rows_, count);
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t c = 0; c < count; ++c) out(r, c) = (*this)(r, first + c);
  }
  return out;
}

void Matrix::set_rows(std::size_t first, const Matrix& block) {
  if (block.cols_ != cols_ || first + block.rows_ > rows_) throw ShapeError("set_rows: shape mismatch");
  std::copy(block.data_.begin(), block.data_.end(), data_.begin() + static_cast<std::ptrdiff_t>(first * cols_));
}

Matrix Matrix::vstack(std::span<const Matrix> blocks) {
  if (blocks.empty()) return {};
  std::size_t rows = 0;
  const std::size_t cols = blocks.front().cols();
  for (const auto& b : blocks) {
    if (b.cols() != cols) throw ShapeError("vstack: column mismatch");
    rows += b.rows();
  }
  Matrix out(rows, cols);
  std::size_t at = 0;
  for (const auto& b : blocks) {
    out.set_rows(at, b);
    at += b.rows();
  }
  return out;
}

Matrix Matrix::hstack(const Matrix& left, const Matrix& right) {
  if (left.rows() != right.rows()) throw ShapeError("hstack: row mismatch");
  Matrix out(left.rows(), left.cols() + right.cols());
  for (std::size_t r = 0; r < left.rows(); ++r) {
    std::copy(left.row(r).begin(), left.row(r).end(), out.row(r).begin());
    std::copy(right.row(r).begin(), right.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(left.cols()));
  }
  return out;
}

Matrix Matrix::transposed() const {
  Matrix out(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t c = 0; c < cols_; ++c) out(c, r) = (*this)(r, c);
  }
  return out;
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  Matrix out(a.rows(), b.cols());
  // i-k-j order; every output element accumulates over k in a fixed order.
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const auto b_row = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("add: shape mismatch");
  Matrix out = a;
  auto o = out.data();
  auto d = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += d[i];
  return out;
}

Matrix linear(const Matrix& x, const Matrix& weight, std::span<const double> bias) {
  if (x.cols() != weight.rows()) throw ShapeError("linear: x.cols != weight.rows");
  if (!bias.empty() && bias.size() != weight.cols()) throw ShapeError("linear: bias length != weight.cols");
  Matrix out = matmul(x, weight);
  if (!bias.empty()) {
    for (std::size_t r = 0; r < out.rows(); ++r) {
      auto row = out.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias[c];
    }
  }
  return out;
}

Matrix softmax_rows(const Matrix& x, const AllowGrid& mask) {
  if (mask.rows != x.rows() || mask.cols != x.cols()) throw ShapeError("softmax_rows: mask shape mismatch");
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double peak = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      if (mask(r, c)) {
        peak = std::max(peak, x(r, c));
        any = true;
      }
    }
    if (!any) throw EmptyInputError("softmax_rows: row " + std::to_string(r) + " has no allowed entry");
    double total = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      if (mask(r, c)) {
        out(r, c) = std::exp(x(r, c) - peak);
        total += out(r, c);
      }
    }
    for (std::size_t c = 0; c < x.cols(); ++c) {
      if (mask(r, c)) out(r, c) /= total;
    }
  }
  return out;
}

Matrix softmax_rows(const Matrix& x) {
  AllowGrid all{x.rows(), x.cols(), std::vector<std::uint8_t>(x.size(), 1)};
  return softmax_rows(x, all);
}

Matrix layer_norm(const Matrix& x, std::span<const double> gain, std::span<const double> shift, double eps) {
  if (gain.size() != x.cols() || shift.size() != x.cols()) throw ShapeError("layer_norm: parameter length != cols");
  Matrix out(x.rows(), x.cols());
  const double n = static_cast<double>(x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto in = x.row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + eps);
    auto o = out.row(r);
    for (std::size_t c = 0; c < in.size(); ++c) o[c] = (in[c] - mean) * inv * gain[c] + shift[c];
  }
  return out;
}

std::vector<double> finite_difference(const ScalarField& f, std::span<const double> x, double h) {
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    probe[k] = x[k] + h;
    const double plus = f(probe);
    probe[k] = x[k] - h;
    const double minus = f(probe);
    probe[k] = x[k];
    grad[k] = (plus - minus) / (2.0 * h);
  }
  return grad;
}

std::uint64_t SeededRng::next_u64() {
  std::uint64_t z = seed_ + 0x9E3779B97F4A7C15ULL * (++counter_);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double SeededRng::uniform() {
  // 53 random mantissa bits.
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeededRng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

double SeededRng::truncated_normal(double stddev) {
  for (;;) {
    const double v = normal();
    if (std::abs(v) <= 2.0) return v * stddev;
  }
}

SeededRng SeededRng::fork(std::uint64_t stream) const {
  SeededRng mixer(seed_ ^ (0xD1B54A32D192ED03ULL * (stream + 1)));
  return SeededRng(mixer.next_u64());
}

Matrix random_matrix(SeededRng& rng, std::size_t rows, std::size_t cols, double stddev) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.truncated_normal(stddev);
  return m;
}

}  // namespace streamrec
