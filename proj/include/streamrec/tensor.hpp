#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace streamrec {

/// Dense row-major f64 matrix. Token sets are stored one token per row.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  /// Rows [first, first + count).
  Matrix slice_rows(std::size_t first, std::size_t count) const;
  /// Columns [first, first + count).
  Matrix slice_cols(std::size_t first, std::size_t count) const;
  void set_rows(std::size_t first, const Matrix& block);
  static Matrix vstack(std::span<const Matrix> blocks);
  static Matrix hstack(const Matrix& left, const Matrix& right);

  Matrix transposed() const;
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix add(const Matrix& a, const Matrix& b);

/// x * weight + bias, bias broadcast over rows. An empty bias means zero.
Matrix linear(const Matrix& x, const Matrix& weight, std::span<const double> bias = {});

/// Boolean grid of allowed (query, key) pairs, row-major.
struct AllowGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> allowed;

  bool operator()(std::size_t r, std::size_t c) const { return allowed[r * cols + c] != 0; }
};

/// Row softmax restricted to allowed entries. Blocked entries are exactly 0.
/// Throws EmptyInputError when a row has no allowed entry.
Matrix softmax_rows(const Matrix& x, const AllowGrid& mask);
Matrix softmax_rows(const Matrix& x);

/// Per-row normalization with population variance.
Matrix layer_norm(const Matrix& x, std::span<const double> gain, std::span<const double> shift,
                  double eps = 1e-6);

using ScalarField = std::function<double(std::span<const double>)>;

/// Central differences (f(x + h e_k) - f(x - h e_k)) / 2h for every k.
std::vector<double> finite_difference(const ScalarField& f, std::span<const double> x, double h);

/// Counter-based generator (splitmix64 over seed + counter). The stream
/// depends only on the seed, so results are identical across platforms and
/// standard libraries.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller.
  double normal();
  /// Normal(0, stddev) truncated to +-2 stddev by rejection.
  double truncated_normal(double stddev);
  /// Independent stream for a named sub-purpose.
  SeededRng fork(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

/// Matrix with truncated-normal(0, stddev) entries.
Matrix random_matrix(SeededRng& rng, std::size_t rows, std::size_t cols, double stddev = 0.02);

}  // namespace streamrec
