#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace streamrec {

/// Tensor or window shapes that do not agree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Point configurations that admit no unique alignment (too few points,
/// collinear sets, rank-deficient covariance).
class DegenerateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A reduction was asked to run over an empty set (no valid pixels, no
/// allowed keys in a softmax row, ...).
class EmptyInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Frames or windows arriving out of order.
class OrderingError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed on-disk data. Carries the byte offset where parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace streamrec
