#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "streamrec/campool.hpp"
#include "streamrec/heads.hpp"
#include "streamrec/metrics.hpp"
#include "streamrec/pipeline.hpp"
#include "streamrec/synth.hpp"

namespace streamrec {

// Sequence container, version 1. All integers and floats little-endian.
//
//   offset 0   "STRMSEQ1"            8 bytes
//   offset 8   u32 version (= 1)
//   offset 12  u32 manifest length L
//   offset 16  manifest, L bytes of UTF-8 JSON
//   then `frames` records, each:
//     i64 frame id
//     f32 x 7   pose: qw qx qy qz tx ty tz (world-from-camera)
//     f32 x 3HW local points, row-major, xyz interleaved
//     u8  x HW  validity mask
//     f32 x HW  confidence (only when has_confidence)
//
// Records are self-contained so a stream can be consumed frame by frame.

inline constexpr char kSequenceMagic[9] = "STRMSEQ1";
inline constexpr std::uint32_t kSequenceVersion = 1;

struct SequenceManifest {
  std::string kind = "ground_truth";  // or "prediction"
  std::size_t frames = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::uint64_t seed = 0;
  std::string trajectory = "orbit";
  bool has_confidence = false;
  std::optional<Intrinsics> intrinsics;

  std::size_t record_bytes() const;
};

struct SequenceFrame {
  FrameId id = 0;
  Pose pose;
  PointMap points;
  std::optional<ConfidenceMap> confidence;
};

/// Nearest f32-representable unit quaternion that survives a
/// store -> load -> normalize -> store round trip unchanged.
Quaternion f32_stable(const Quaternion& q);

class SequenceWriter {
 public:
  /// Writes the header immediately.
  SequenceWriter(std::ostream& out, SequenceManifest manifest);

  /// Throws ShapeError on size or confidence mismatch, std::logic_error past
  /// the declared frame count.
  void write(const SequenceFrame& frame);
  /// Throws std::logic_error unless exactly `frames` records were written.
  void finish();

 private:
  std::ostream& out_;
  SequenceManifest manifest_;
  std::size_t written_ = 0;
};

/// Incremental reader; works on non-seekable streams. Every malformed input
/// raises FormatError carrying the byte offset of the offending field.
class SequenceReader {
 public:
  explicit SequenceReader(std::istream& in);

  const SequenceManifest& manifest() const { return manifest_; }
  /// Next frame, or nullopt after the last declared record.
  std::optional<SequenceFrame> next();
  std::uint64_t offset() const { return offset_; }

 private:
  void read_exact(void* dst, std::size_t n, const char* what);

  std::istream& in_;
  SequenceManifest manifest_;
  std::size_t read_frames_ = 0;
  std::uint64_t offset_ = 0;
};

struct Sequence {
  SequenceManifest manifest;
  std::vector<SequenceFrame> frames;
};

Sequence read_sequence(std::istream& in);
Sequence read_sequence(const std::filesystem::path& path);
void write_sequence(std::ostream& out, const Sequence& seq);
void write_sequence(const std::filesystem::path& path, const Sequence& seq);

Sequence sequence_from_scene(const SceneSample& scene);
/// Prediction container holding one merged output per frame.
Sequence sequence_from_run(const RunResult& run, std::uint64_t seed);

// Weight checkpoint, version 1:
//   "SRCKPT01", u32 version, u32 config length, config JSON (ModelConfig
//   fields), u32 tensor count, then per tensor: u32 name length, name,
//   u64 rows, u64 cols, rows*cols f64.

inline constexpr char kCheckpointMagic[9] = "SRCKPT01";
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(std::ostream& out, const Model& model);
void save_checkpoint(const std::filesystem::path& path, const Model& model);
/// Rebuilds a random-initialised model of the stored configuration and
/// overwrites every tensor. Throws FormatError on a malformed file and
/// ShapeError on a missing, extra or mis-shaped tensor. When `expected` is
/// given, a differing stored configuration also raises ShapeError.
Model load_checkpoint(std::istream& in, const std::optional<ModelConfig>& expected = std::nullopt);
Model load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected = std::nullopt);

/// Dumps the pool as `<stem>.json` (index) and `<stem>.bin` (f64 tokens,
/// entry after entry). Returns the index path.
std::filesystem::path write_pool_dump(const std::filesystem::path& stem, const CameraTokenPool& pool);
CameraTokenPool read_pool_dump(const std::filesystem::path& index_path);

/// ASCII PLY of world-space points with a `confidence` vertex property.
void write_ply(std::ostream& out, std::span<const Vec3> points, std::span<const double> confidence);
void write_ply(const std::filesystem::path& path, std::span<const Vec3> points, std::span<const double> confidence);

struct MetricsReport {
  ChamferReport chamfer;
  PoseMetricReport pose;
  DepthReport depth;
};

/// {"chamfer":{acc,comp,overall},"pose":{rra30,rta30,auc30},"depth":{abs_rel,delta_125}}
std::string metrics_json(const MetricsReport& report, int indent = 2);

}  // namespace streamrec
