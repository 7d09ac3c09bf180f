#include "streamrec/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <type_traits>

#include "json.hpp"
#include "streamrec/errors.hpp"

namespace streamrec {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace {

using ordered_json = nlohmann::ordered_json;

template <typename T>
void put(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

void put_f32(std::ostream& out, double v) { put(out, static_cast<float>(v)); }

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  return in;
}

ordered_json manifest_to_json(const SequenceManifest& m) {
  ordered_json j;
  j["format"] = "streamrec-sequence";
  j["version"] = kSequenceVersion;
  j["kind"] = m.kind;
  j["frames"] = m.frames;
  j["height"] = m.height;
  j["width"] = m.width;
  j["seed"] = m.seed;
  j["trajectory"] = m.trajectory;
  j["has_confidence"] = m.has_confidence;
  if (m.intrinsics) {
    j["intrinsics"] = {{"fx", m.intrinsics->fx}, {"fy", m.intrinsics->fy}, {"cx", m.intrinsics->cx},
                       {"cy", m.intrinsics->cy}};
  }
  return j;
}

SequenceManifest manifest_from_json(const std::string& text, std::size_t offset) {
  SequenceManifest m;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format").get<std::string>() != "streamrec-sequence") throw FormatError("unknown manifest format", offset);
    m.kind = j.at("kind").get<std::string>();
    m.frames = j.at("frames").get<std::size_t>();
    m.height = j.at("height").get<std::size_t>();
    m.width = j.at("width").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.trajectory = j.at("trajectory").get<std::string>();
    m.has_confidence = j.at("has_confidence").get<bool>();
    if (j.contains("intrinsics")) {
      const auto& k = j["intrinsics"];
      m.intrinsics = Intrinsics{k.at("fx").get<double>(), k.at("fy").get<double>(), k.at("cx").get<double>(),
                                k.at("cy").get<double>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad manifest: ") + e.what(), offset);
  }
  if (m.height == 0 || m.width == 0) throw FormatError("manifest image size must be positive", offset);
  return m;
}

}  // namespace

std::size_t SequenceManifest::record_bytes() const {
  const std::size_t px = height * width;
  return sizeof(std::int64_t) + 7 * sizeof(float) + px * (3 * sizeof(float) + 1) +
         (has_confidence ? px * sizeof(float) : 0);
}

Quaternion f32_stable(const Quaternion& q) {
  auto round = [](const Quaternion& a) {
    return Quaternion{static_cast<float>(a.w), static_cast<float>(a.x), static_cast<float>(a.y),
                      static_cast<float>(a.z)};
  };
  Quaternion cur = round(q.canonical());
  for (int it = 0; it < 16; ++it) {
    const Quaternion next = round(Quaternion::unit(cur.w, cur.x, cur.y, cur.z));
    if (next.w == cur.w && next.x == cur.x && next.y == cur.y && next.z == cur.z) break;
    cur = next;
  }
  return cur;
}

SequenceWriter::SequenceWriter(std::ostream& out, SequenceManifest manifest)
    : out_(out), manifest_(std::move(manifest)) {
  if (manifest_.height == 0 || manifest_.width == 0) throw ShapeError("SequenceWriter: empty image size");
  const std::string text = manifest_to_json(manifest_).dump();
  out_.write(kSequenceMagic, 8);
  put<std::uint32_t>(out_, kSequenceVersion);
  put<std::uint32_t>(out_, static_cast<std::uint32_t>(text.size()));
  out_.write(text.data(), static_cast<std::streamsize>(text.size()));
}

void SequenceWriter::write(const SequenceFrame& f) {
  if (written_ >= manifest_.frames) throw std::logic_error("SequenceWriter: more frames than declared");
  const std::size_t px = manifest_.height * manifest_.width;
  if (f.points.height != manifest_.height || f.points.width != manifest_.width) {
    throw ShapeError("SequenceWriter: point map size differs from manifest");
  }
  if (manifest_.has_confidence != f.confidence.has_value() ||
      (f.confidence && f.confidence->conf.size() != px)) {
    throw ShapeError("SequenceWriter: confidence presence or size differs from manifest");
  }
  put<std::int64_t>(out_, f.id);
  const Quaternion q = f32_stable(f.pose.rotation);
  for (double v : {q.w, q.x, q.y, q.z}) put_f32(out_, v);
  for (int k = 0; k < 3; ++k) put_f32(out_, f.pose.translation[k]);
  for (std::size_t k = 0; k < px; ++k) {
    for (int c = 0; c < 3; ++c) put_f32(out_, f.points.points[k][c]);
  }
  out_.write(reinterpret_cast<const char*>(f.points.valid.data()), static_cast<std::streamsize>(px));
  if (f.confidence) {
    for (double c : f.confidence->conf) put_f32(out_, c);
  }
  if (!out_) throw std::runtime_error("SequenceWriter: write failed");
  ++written_;
}

void SequenceWriter::finish() {
  if (written_ != manifest_.frames) {
    throw std::logic_error("SequenceWriter: wrote " + std::to_string(written_) + " of " +
                           std::to_string(manifest_.frames) + " frames");
  }
  out_.flush();
}

SequenceReader::SequenceReader(std::istream& in) : in_(in) {
  char magic[8];
  read_exact(magic, 8, "magic");
  if (std::memcmp(magic, kSequenceMagic, 8) != 0) throw FormatError("not a sequence container", 0);
  std::uint32_t version = 0;
  read_exact(&version, 4, "version");
  if (version != kSequenceVersion) {
    throw FormatError("unsupported container version " + std::to_string(version), offset_ - 4);
  }
  std::uint32_t len = 0;
  read_exact(&len, 4, "manifest length");
  if (len == 0 || len > (1u << 24)) throw FormatError("implausible manifest length", offset_ - 4);
  std::string text(len, '\0');
  const auto manifest_at = offset_;
  read_exact(text.data(), len, "manifest");
  manifest_ = manifest_from_json(text, manifest_at);
}

void SequenceReader::read_exact(void* dst, std::size_t n, const char* what) {
  in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  const auto got = static_cast<std::size_t>(in_.gcount());
  if (got != n) throw FormatError(std::string("truncated ") + what, offset_ + got);
  offset_ += n;
}

std::optional<SequenceFrame> SequenceReader::next() {
  if (read_frames_ == manifest_.frames) return std::nullopt;
  const std::size_t px = manifest_.height * manifest_.width;
  SequenceFrame f;
  read_exact(&f.id, sizeof f.id, "frame id");

  const auto pose_at = offset_;
  float pose[7];
  read_exact(pose, sizeof pose, "pose");
  for (float v : pose) {
    if (!std::isfinite(v)) throw FormatError("non-finite pose value", pose_at);
  }
  try {
    f.pose.rotation = Quaternion::unit(pose[0], pose[1], pose[2], pose[3]);
  } catch (const std::invalid_argument&) {
    throw FormatError("zero quaternion", pose_at);
  }
  f.pose.translation = Vec3(pose[4], pose[5], pose[6]);

  std::vector<float> buf(3 * px);
  const auto points_at = offset_;
  read_exact(buf.data(), buf.size() * sizeof(float), "point map");
  f.points = PointMap(manifest_.width, manifest_.height);
  for (std::size_t k = 0; k < px; ++k) {
    f.points.points[k] = Vec3(buf[3 * k], buf[3 * k + 1], buf[3 * k + 2]);
    if (!f.points.points[k].allFinite()) {
      throw FormatError("non-finite point", points_at + 3 * k * sizeof(float));
    }
  }
  const auto mask_at = offset_;
  read_exact(f.points.valid.data(), px, "mask");
  for (std::size_t k = 0; k < px; ++k) {
    if (f.points.valid[k] > 1) throw FormatError("mask byte is not 0 or 1", mask_at + k);
  }
  if (manifest_.has_confidence) {
    const auto conf_at = offset_;
    buf.resize(px);
    read_exact(buf.data(), px * sizeof(float), "confidence");
    ConfidenceMap c(manifest_.width, manifest_.height);
    for (std::size_t k = 0; k < px; ++k) {
      if (!(buf[k] >= 1.0f) || !std::isfinite(buf[k])) {
        throw FormatError("confidence must be finite and >= 1", conf_at + k * sizeof(float));
      }
      c.conf[k] = buf[k];
    }
    f.confidence = std::move(c);
  }
  ++read_frames_;
  return f;
}

Sequence read_sequence(std::istream& in) {
  SequenceReader reader(in);
  Sequence seq;
  seq.manifest = reader.manifest();
  while (auto f = reader.next()) seq.frames.push_back(std::move(*f));
  return seq;
}

Sequence read_sequence(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_sequence(in);
}

void write_sequence(std::ostream& out, const Sequence& seq) {
  SequenceManifest m = seq.manifest;
  m.frames = seq.frames.size();
  SequenceWriter w(out, m);
  for (const auto& f : seq.frames) w.write(f);
  w.finish();
}

void write_sequence(const std::filesystem::path& path, const Sequence& seq) {
  auto out = open_out(path);
  write_sequence(out, seq);
}

Sequence sequence_from_scene(const SceneSample& scene) {
  Sequence seq;
  seq.manifest.kind = "ground_truth";
  seq.manifest.frames = scene.frame_count();
  seq.manifest.height = scene.height;
  seq.manifest.width = scene.width;
  seq.manifest.seed = scene.seed;
  seq.manifest.trajectory = std::string(to_string(scene.trajectory));
  seq.manifest.intrinsics = scene.intrinsics;
  for (std::size_t f = 0; f < scene.frame_count(); ++f) {
    seq.frames.push_back({scene.frame_ids[f], scene.poses[f], scene.points[f], std::nullopt});
  }
  return seq;
}

Sequence sequence_from_run(const RunResult& run, std::uint64_t seed) {
  if (run.points.empty()) throw EmptyInputError("sequence_from_run: no frames");
  Sequence seq;
  seq.manifest.kind = "prediction";
  seq.manifest.frames = run.frame_ids.size();
  seq.manifest.height = run.points.front().height;
  seq.manifest.width = run.points.front().width;
  seq.manifest.seed = seed;
  seq.manifest.trajectory = "unknown";
  seq.manifest.has_confidence = true;
  for (std::size_t f = 0; f < run.frame_ids.size(); ++f) {
    seq.frames.push_back({run.frame_ids[f], run.poses[f], run.points[f], run.confidence[f]});
  }
  return seq;
}

// ---- checkpoint ----

namespace {

struct TensorRef {
  std::string name;
  std::size_t rows, cols;
  std::span<double> data;
};

class TensorCollector {
 public:
  void add(const std::string& name, Matrix& m) { refs.push_back({name, m.rows(), m.cols(), m.data()}); }
  void add(const std::string& name, std::vector<double>& v) { refs.push_back({name, 1, v.size(), v}); }
  void add(const std::string& name, LayerNormParams& ln) {
    add(name + ".gain", ln.gain);
    add(name + ".shift", ln.shift);
  }
  void add(const std::string& name, MhaWeights& a) {
    add(name + ".wq", a.wq);
    add(name + ".wk", a.wk);
    add(name + ".wv", a.wv);
    add(name + ".wo", a.wo);
    add(name + ".bq", a.bq);
    add(name + ".bk", a.bk);
    add(name + ".bv", a.bv);
    add(name + ".bo", a.bo);
  }
  void add(const std::string& name, SelfAttentionBlock& b) {
    add(name + ".norm_attn", b.norm_attn);
    add(name + ".attn", b.attn);
    add(name + ".norm_mlp", b.norm_mlp);
    add(name + ".w1", b.w1);
    add(name + ".b1", b.b1);
    add(name + ".w2", b.w2);
    add(name + ".b2", b.b2);
  }
  void add(const std::string& name, CrossAttentionBlock& b) {
    add(name + ".norm_query", b.norm_query);
    add(name + ".norm_context", b.norm_context);
    add(name + ".attn", b.attn);
  }
  void add(const std::string& name, ConvLayer& c) {
    refs.push_back({name + ".weight", c.out_channels, c.in_channels * c.kernel * c.kernel, c.weight});
    add(name + ".bias", c.bias);
  }

  std::vector<TensorRef> refs;
};

std::vector<TensorRef> model_tensors(Model& m) {
  auto* embed = std::get_if<PatchEmbedder>(&m.encoder);
  if (!embed) throw std::invalid_argument("checkpoint: oracle models have no stored weights");
  TensorCollector c;
  c.add("encoder.weight", embed->weight);
  c.add("encoder.bias", embed->bias);
  c.add("decoder.slot_embedding", m.decoder.slot_embedding);
  c.add("decoder.camera_token", m.decoder.camera_token);
  c.add("decoder.initial_state", m.decoder.initial_state);
  for (std::size_t i = 0; i < m.decoder.units.size(); ++i) {
    const std::string p = "decoder.unit" + std::to_string(i);
    c.add(p + ".frame", m.decoder.units[i].frame);
    c.add(p + ".read_state", m.decoder.units[i].read_state);
    c.add(p + ".global", m.decoder.units[i].global);
    c.add(p + ".write_state", m.decoder.units[i].write_state);
  }
  for (std::size_t i = 0; i < m.camera_head.blocks.size(); ++i) {
    c.add("camera.block" + std::to_string(i), m.camera_head.blocks[i]);
  }
  c.add("camera.final_norm", m.camera_head.final_norm);
  c.add("camera.out_weight", m.camera_head.out_weight);
  c.add("camera.out_bias", m.camera_head.out_bias);
  c.add("points.project", m.point_head.project);
  c.add("points.refine", m.point_head.refine);
  return c.refs;
}

ordered_json config_to_json(const ModelConfig& c) {
  return {{"dim", c.dim},
          {"heads", c.heads},
          {"depth", c.depth},
          {"camera_depth", c.camera_depth},
          {"state_count", c.state_count},
          {"window_size", c.window_size},
          {"patch", c.patch},
          {"head_width", c.head_width},
          {"slot_embedding", c.slot_embedding}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.dim = j.at("dim").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.depth = j.at("depth").get<std::size_t>();
  c.camera_depth = j.at("camera_depth").get<std::size_t>();
  c.state_count = j.at("state_count").get<std::size_t>();
  c.window_size = j.at("window_size").get<std::size_t>();
  c.patch = j.at("patch").get<std::size_t>();
  c.head_width = j.at("head_width").get<std::size_t>();
  c.slot_embedding = j.at("slot_embedding").get<bool>();
  return c;
}

class ByteReader {
 public:
  explicit ByteReader(std::istream& in) : in_(in) {}

  void read(void* dst, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    const auto got = static_cast<std::size_t>(in_.gcount());
    if (got != n) throw FormatError(std::string("truncated ") + what, offset_ + got);
    offset_ += n;
  }
  template <typename T>
  T get(const char* what) {
    T v;
    read(&v, sizeof v, what);
    return v;
  }
  std::uint64_t offset() const { return offset_; }

 private:
  std::istream& in_;
  std::uint64_t offset_ = 0;
};

}  // namespace

void save_checkpoint(std::ostream& out, const Model& model) {
  Model copy = model;
  const auto refs = model_tensors(copy);
  const std::string cfg = config_to_json(model.config).dump();
  out.write(kCheckpointMagic, 8);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(refs.size()));
  for (const auto& r : refs) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    put<std::uint64_t>(out, r.rows);
    put<std::uint64_t>(out, r.cols);
    out.write(reinterpret_cast<const char*>(r.data.data()), static_cast<std::streamsize>(r.data.size_bytes()));
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed");
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  auto out = open_out(path);
  save_checkpoint(out, model);
}

Model load_checkpoint(std::istream& in, const std::optional<ModelConfig>& expected) {
  ByteReader r(in);
  char magic[8];
  r.read(magic, 8, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) throw FormatError("not a checkpoint", 0);
  if (const auto v = r.get<std::uint32_t>("version"); v != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(v), r.offset() - 4);
  }
  const auto cfg_len = r.get<std::uint32_t>("config length");
  if (cfg_len > (1u << 20)) throw FormatError("implausible config length", r.offset() - 4);
  std::string cfg_text(cfg_len, '\0');
  const auto cfg_at = r.offset();
  r.read(cfg_text.data(), cfg_len, "config");
  ModelConfig config;
  try {
    config = config_from_json(nlohmann::json::parse(cfg_text));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint config: ") + e.what(), cfg_at);
  }
  if (expected && config_to_json(*expected) != config_to_json(config)) {
    throw ShapeError("checkpoint configuration " + config_to_json(config).dump() + " differs from requested " +
                     config_to_json(*expected).dump());
  }

  Model model = Model::random(config, 0);
  auto refs = model_tensors(model);
  const auto count = r.get<std::uint32_t>("tensor count");
  if (count != refs.size()) {
    throw ShapeError("checkpoint holds " + std::to_string(count) + " tensors, model needs " +
                     std::to_string(refs.size()));
  }
  std::vector<bool> seen(refs.size(), false);
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = r.get<std::uint32_t>("name length");
    if (name_len > 4096) throw FormatError("implausible tensor name length", r.offset() - 4);
    std::string name(name_len, '\0');
    r.read(name.data(), name_len, "tensor name");
    const auto rows = r.get<std::uint64_t>("rows");
    const auto cols = r.get<std::uint64_t>("cols");
    auto it = std::find_if(refs.begin(), refs.end(), [&](const TensorRef& x) { return x.name == name; });
    if (it == refs.end()) throw ShapeError("unexpected tensor '" + name + "' in checkpoint");
    if (it->rows != rows || it->cols != cols) {
      throw ShapeError("tensor '" + name + "' has shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                       ", expected " + std::to_string(it->rows) + "x" + std::to_string(it->cols));
    }
    const auto idx = static_cast<std::size_t>(it - refs.begin());
    if (seen[idx]) throw ShapeError("duplicate tensor '" + name + "' in checkpoint");
    seen[idx] = true;
    r.read(it->data.data(), it->data.size_bytes(), "tensor data");
  }
  return model;
}

Model load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
  auto in = open_in(path);
  return load_checkpoint(in, expected);
}

// ---- pool dump ----

std::filesystem::path write_pool_dump(const std::filesystem::path& stem, const CameraTokenPool& pool) {
  auto index_path = stem;
  index_path += ".json";
  auto blob_path = stem;
  blob_path += ".bin";

  ordered_json j;
  j["format"] = "streamrec-pool";
  j["version"] = 1;
  j["token_dim"] = pool.token_dim();
  j["dtype"] = "f64le";
  j["blob"] = blob_path.filename().string();
  j["entries"] = ordered_json::array();
  auto blob = open_out(blob_path);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& e = pool.entries()[i];
    j["entries"].push_back({{"window", e.window},
                            {"slot", e.slot},
                            {"frame", e.frame},
                            {"offset", i * pool.token_dim() * sizeof(double)}});
    const auto tok = pool.token(i);
    blob.write(reinterpret_cast<const char*>(tok.data()), static_cast<std::streamsize>(tok.size_bytes()));
  }
  auto index = open_out(index_path);
  index << j.dump(2) << '\n';
  return index_path;
}

CameraTokenPool read_pool_dump(const std::filesystem::path& index_path) {
  auto in = open_in(index_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad pool index: ") + e.what(), 0);
  }
  const auto dim = j.at("token_dim").get<std::size_t>();
  auto blob = open_in(index_path.parent_path() / j.at("blob").get<std::string>());
  CameraTokenPool pool(dim);
  // Entries are regrouped by window to go through the ordinary append path.
  const auto& entries = j.at("entries");
  std::size_t i = 0;
  ByteReader r(blob);
  while (i < entries.size()) {
    const auto window = entries[i].at("window").get<std::size_t>();
    std::vector<FrameId> frames;
    std::vector<double> data;
    while (i < entries.size() && entries[i].at("window").get<std::size_t>() == window) {
      frames.push_back(entries[i].at("frame").get<FrameId>());
      const std::size_t at = data.size();
      data.resize(at + dim);
      r.read(data.data() + at, dim * sizeof(double), "pool token");
      ++i;
    }
    pool.append(Matrix(frames.size(), dim, std::move(data)), window, frames);
  }
  return pool;
}

// ---- PLY ----

void write_ply(std::ostream& out, std::span<const Vec3> points, std::span<const double> confidence) {
  if (points.size() != confidence.size()) throw ShapeError("write_ply: one confidence per point required");
  out << "ply\nformat ascii 1.0\nelement vertex " << points.size()
      << "\nproperty float x\nproperty float y\nproperty float z\nproperty float confidence\nend_header\n";
  out << std::setprecision(9);
  for (std::size_t i = 0; i < points.size(); ++i) {
    out << points[i].x() << ' ' << points[i].y() << ' ' << points[i].z() << ' ' << confidence[i] << '\n';
  }
}

void write_ply(const std::filesystem::path& path, std::span<const Vec3> points, std::span<const double> confidence) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  write_ply(out, points, confidence);
}

std::string metrics_json(const MetricsReport& r, int indent) {
  ordered_json j;
  j["chamfer"] = {{"acc", r.chamfer.accuracy}, {"comp", r.chamfer.completeness}, {"overall", r.chamfer.overall}};
  j["pose"] = {{"rra30", r.pose.rra_at.count(30) ? r.pose.rra_at.at(30) : 0.0},
               {"rta30", r.pose.rta_at.count(30) ? r.pose.rta_at.at(30) : 0.0},
               {"auc30", r.pose.auc30}};
  j["depth"] = {{"abs_rel", r.depth.abs_rel}, {"delta_125", r.depth.delta_125}};
  return j.dump(indent);
}

}  // namespace streamrec
