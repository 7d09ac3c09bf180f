#include "streamrec/windowing.hpp"

#include <stdexcept>

#include "streamrec/errors.hpp"

namespace streamrec {

std::size_t expected_window_count(std::size_t frames, std::size_t window_size) {
  if (frames == 0) return 0;
  if (frames <= window_size) return 1;
  const std::size_t stride = window_size / 2;
  return (frames - window_size + stride - 1) / stride + 1;
}

StreamState::StreamState(std::size_t window_size) : window_size_(window_size) {
  if (window_size < 2 || window_size % 2 != 0) {
    throw std::invalid_argument("StreamState: window size must be even and >= 2");
  }
}

std::optional<Window> StreamState::push_frame(FrameId id) {
  if (finalized_) throw OrderingError("push_frame: stream already finalized");
  if (last_id_ && id <= *last_id_) {
    throw OrderingError("push_frame: frame id " + std::to_string(id) + " does not follow " +
                        std::to_string(*last_id_));
  }
  last_id_ = id;
  buffer_.push_back(id);
  ++fresh_;
  if (buffer_.size() < window_size_) return std::nullopt;

  Window w{next_index_++, buffer_, std::vector<bool>(window_size_, false)};
  buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(stride()));
  fresh_ = 0;
  return w;
}

std::vector<Window> StreamState::push_frames(std::span<const FrameId> ids) {
  std::vector<Window> out;
  for (FrameId id : ids) {
    if (auto w = push_frame(id)) out.push_back(std::move(*w));
  }
  return out;
}

std::optional<Window> StreamState::finalize() {
  if (finalized_) return std::nullopt;
  finalized_ = true;
  if (fresh_ == 0) return std::nullopt;

  Window w{next_index_++, buffer_, std::vector<bool>(buffer_.size(), false)};
  const FrameId last = buffer_.back();
  while (w.frames.size() < window_size_) {
    w.frames.push_back(last);
    w.duplicated.push_back(true);
  }
  buffer_.clear();
  fresh_ = 0;
  return w;
}

void StreamState::merge_overlap(const Window& window, std::span<const FramePrediction> per_slot) {
  if (per_slot.size() != window.frames.size()) {
    throw ShapeError("merge_overlap: one prediction per window slot required");
  }
  for (std::size_t s = 0; s < window.frames.size(); ++s) {
    if (window.duplicated[s]) continue;
    const FramePrediction& pred = per_slot[s];
    if (pred.points.pixel_count() != pred.confidence.conf.size()) {
      throw ShapeError("merge_overlap: point and confidence maps differ in size");
    }
    auto [it, inserted] = outputs_.try_emplace(window.frames[s]);
    MergedFrame& out = it->second;
    ++out.appearances;
    out.pose = pred.pose;
    out.pose_window = window.index;
    if (inserted) {
      out.points = pred.points;
      out.confidence = pred.confidence;
      out.pixel_window.assign(pred.points.pixel_count(), window.index);
      continue;
    }
    if (out.points.pixel_count() != pred.points.pixel_count()) {
      throw ShapeError("merge_overlap: frame resolution changed between windows");
    }
    for (std::size_t px = 0; px < pred.points.pixel_count(); ++px) {
      if (pred.confidence.conf[px] >= out.confidence.conf[px]) {
        out.points.points[px] = pred.points.points[px];
        out.points.valid[px] = pred.points.valid[px];
        out.confidence.conf[px] = pred.confidence.conf[px];
        out.pixel_window[px] = window.index;
      }
    }
  }
}

}  // namespace streamrec
