#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "streamrec/geomath.hpp"
#include "streamrec/heads.hpp"

namespace streamrec {

using FrameId = std::int64_t;

/// A group of `window_size` frames processed jointly. Slots filled by
/// repeating the last frame at the end of a stream are flagged as duplicated.
struct Window {
  std::size_t index = 0;  // 1-based
  std::vector<FrameId> frames;
  std::vector<bool> duplicated;

  friend bool operator==(const Window&, const Window&) = default;
};

/// Per-slot output of one window's heads.
struct FramePrediction {
  Pose pose;
  PointMap points;
  ConfidenceMap confidence;
};

/// Final per-frame output after overlap resolution.
struct MergedFrame {
  Pose pose;
  PointMap points;
  ConfidenceMap confidence;
  std::size_t pose_window = 0;   // window whose pose is kept
  std::size_t appearances = 0;   // real (non-duplicated) appearances so far
  std::vector<std::size_t> pixel_window;  // window that supplied each pixel

  bool updated() const { return appearances > 1; }
};

/// Number of windows a stream of `frames` frames produces, including the
/// final padded window when the last stride is partial.
std::size_t expected_window_count(std::size_t frames, std::size_t window_size);

/// Sliding-window bookkeeping: stride window_size / 2, last-frame padding at
/// the end of the stream, and per-frame overlap resolution.
class StreamState {
 public:
  /// Throws std::invalid_argument unless window_size is even and >= 2.
  explicit StreamState(std::size_t window_size = 4);

  std::size_t window_size() const { return window_size_; }
  std::size_t stride() const { return window_size_ / 2; }
  std::size_t next_window_index() const { return next_index_; }
  std::size_t buffered() const { return buffer_.size(); }
  bool finalized() const { return finalized_; }

  /// Buffers one frame and returns a window once it is full. Throws
  /// OrderingError for non-increasing ids or pushes after finalize().
  std::optional<Window> push_frame(FrameId id);
  std::vector<Window> push_frames(std::span<const FrameId> ids);
  /// Emits the padded trailing window, if any frames are still pending.
  std::optional<Window> finalize();

  /// Folds one window's predictions (one per slot) into the per-frame
  /// outputs: the later pose wins; per pixel the strictly more confident
  /// sample wins with ties going to the later window. Duplicated slots are
  /// ignored.
  void merge_overlap(const Window& window, std::span<const FramePrediction> per_slot);

  const std::map<FrameId, MergedFrame>& outputs() const { return outputs_; }

 private:
  std::size_t window_size_;
  std::vector<FrameId> buffer_;
  std::size_t fresh_ = 0;  // frames in buffer_ not yet part of any window
  std::size_t next_index_ = 1;
  std::optional<FrameId> last_id_;
  bool finalized_ = false;
  std::map<FrameId, MergedFrame> outputs_;
};

}  // namespace streamrec
