#include "petal/dataio.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "json.hpp"
#include "petal/errors.hpp"

namespace petal::io {

using nlohmann::json;

namespace {

constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

// Bounds-checked little-endian reader that reports byte offsets.
class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, const char* what) : b_(b), what_(what) {}

  void need(std::size_t n, const char* field) const {
    if (pos_ + n > b_.size()) {
      throw FormatError(std::string(what_) + ": truncated reading " + field + ", need " + std::to_string(pos_ + n) +
                            " bytes, have " + std::to_string(b_.size()),
                        b_.size());
    }
  }
  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* field) { return std::bit_cast<float>(u32(field)); }
  std::string bytes(std::size_t n, const char* field) {
    need(n, field);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void magic(const char* expect) {
    const std::size_t at = pos_;
    if (bytes(4, "magic") != expect) throw FormatError(std::string(what_) + ": bad magic, expected " + expect, at);
  }
  void version() {
    const std::size_t at = pos_;
    const auto v = u32("version");
    if (v != kVersion) throw FormatError(std::string(what_) + ": unsupported version " + std::to_string(v), at);
  }
  std::size_t pos() const { return pos_; }
  std::size_t size() const { return b_.size(); }

 private:
  const std::vector<std::uint8_t>& b_;
  const char* what_;
  std::size_t pos_ = 0;
};

float to_f32_checked(double v, const char* what) {
  const auto f = static_cast<float>(v);
  if (!std::isfinite(f)) throw NumericalError(std::string(what) + ": value not representable as finite float32");
  return f;
}

}  // namespace

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

namespace {

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);)
    if (line.find_first_not_of(" \t\r") != std::string::npos) lines.push_back(line);
  return lines;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::string all;
  for (const auto& l : lines) all += l + "\n";
  write_bytes(path, std::vector<std::uint8_t>(all.begin(), all.end()));
}

}  // namespace

// ---------------------------------------------------------------- features

Tensor FeatureFile::snippet(std::size_t t) const {
  if (t >= T) throw std::out_of_range("feature snippet index out of range");
  const std::size_t n = static_cast<std::size_t>(H) * W * D;
  std::vector<double> v(payload.begin() + static_cast<std::ptrdiff_t>(t * n),
                        payload.begin() + static_cast<std::ptrdiff_t>((t + 1) * n));
  return Tensor({H, W, D}, std::move(v));
}

FeatureFile make_features(const std::vector<Tensor>& snippets) {
  if (snippets.empty()) throw ValidationError("features: at least one snippet required");
  FeatureFile f;
  const auto& s0 = snippets.front();
  if (s0.rank() != 3) throw DimensionError("features: snippets must be [H x W x D]");
  f.T = static_cast<std::uint32_t>(snippets.size());
  f.H = static_cast<std::uint32_t>(s0.dim(0));
  f.W = static_cast<std::uint32_t>(s0.dim(1));
  f.D = static_cast<std::uint32_t>(s0.dim(2));
  for (const auto& s : snippets) {
    if (s.shape() != s0.shape()) throw DimensionError("features: snippet shapes differ");
    for (double v : s.data()) f.payload.push_back(to_f32_checked(v, "features"));
  }
  return f;
}

std::vector<std::uint8_t> encode_features(const FeatureFile& f) {
  if (f.payload.size() != static_cast<std::size_t>(f.T) * f.H * f.W * f.D)
    throw DimensionError("features: payload does not match header");
  std::vector<std::uint8_t> out{'P', 'T', 'F', 'V'};
  out.reserve(f.byte_size());
  put_u32(out, kVersion);
  for (auto d : {f.T, f.H, f.W, f.D}) put_u32(out, d);
  for (float v : f.payload) put_f32(out, v);
  return out;
}

FeatureFile decode_features(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes, "feature file");
  r.magic("PTFV");
  r.version();
  FeatureFile f;
  f.T = r.u32("T");
  f.H = r.u32("H");
  f.W = r.u32("W");
  f.D = r.u32("D");
  if (f.T == 0 || f.H == 0 || f.W == 0 || f.D == 0) throw FormatError("feature file: zero dimension in header", 8);
  const std::size_t n = static_cast<std::size_t>(f.T) * f.H * f.W * f.D;
  const std::size_t expect = FeatureFile::kHeaderBytes + 4 * n;
  if (bytes.size() != expect) {
    throw FormatError("feature file: expected " + std::to_string(expect) + " bytes, got " + std::to_string(bytes.size()),
                      std::min(bytes.size(), expect));
  }
  f.payload.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t at = r.pos();
    f.payload[i] = r.f32("payload");
    if (!std::isfinite(f.payload[i])) throw FormatError("feature file: non-finite value", at);
  }
  return f;
}

void write_features(const fs::path& path, const FeatureFile& f) { write_bytes(path, encode_features(f)); }
FeatureFile read_features(const fs::path& path) { return decode_features(read_bytes(path)); }

// ------------------------------------------------------------- annotations

double AnnotationRecord::duration() const {
  return static_cast<double>(num_snippets() * snippet_stride) / fps;
}

void AnnotationRecord::validate(int num_classes) const {
  auto fail = [&](const std::string& m) { throw ValidationError("annotation '" + id + "': " + m); };
  if (id.empty()) throw ValidationError("annotation: empty id");
  if (!(fps > 0) || !(frame_width > 0) || !(frame_height > 0) || snippet_stride == 0)
    fail("fps, frame size and snippet_stride must be positive");
  if (boxes.empty()) fail("at least one snippet required");
  const double dur = duration();
  for (const auto& s : segments) {
    if (!(s.start < s.end)) fail("segment start must precede end");
    if (s.start < 0 || s.end > dur + 1e-9) fail("segment outside video extent");
    if (s.class_id < 0 || (num_classes > 0 && s.class_id >= num_classes)) fail("class id out of range");
  }
  for (const auto& snip : boxes)
    for (const auto& b : snip)
      if (!std::isfinite(b.x1) || !std::isfinite(b.y1) || !std::isfinite(b.x2) || !std::isfinite(b.y2) ||
          !std::isfinite(b.confidence))
        fail("non-finite box");
}

VideoMeta AnnotationRecord::meta(const FeatureFile& f) const {
  if (f.T != num_snippets())
    throw ValidationError("annotation '" + id + "': " + std::to_string(num_snippets()) + " box lists but " +
                          std::to_string(f.T) + " feature snippets");
  VideoMeta m;
  m.frame_width = frame_width;
  m.frame_height = frame_height;
  m.fps = fps;
  m.snippet_stride = snippet_stride;
  m.num_snippets = f.T;
  m.feature_height = f.H;
  m.feature_width = f.W;
  m.feature_dim = f.D;
  m.validate();
  return m;
}

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + ": expected an object");
  for (const auto& [k, _] : j.items())
    if (!allowed.count(k)) throw ValidationError(where + ": unknown field '" + k + "'");
  for (const auto& k : allowed)
    if (!j.contains(k)) throw ValidationError(where + ": missing field '" + k + "'");
}

template <class T>
T field(const json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(where + ": field '" + key + "' has the wrong type");
  }
}

}  // namespace

std::string encode_annotation(const AnnotationRecord& r) {
  json j;
  j["id"] = r.id;
  j["fps"] = r.fps;
  j["frame_width"] = r.frame_width;
  j["frame_height"] = r.frame_height;
  j["snippet_stride"] = r.snippet_stride;
  j["segments"] = json::array();
  for (const auto& s : r.segments) j["segments"].push_back({{"class_id", s.class_id}, {"start", s.start}, {"end", s.end}});
  j["boxes"] = json::array();
  for (const auto& snip : r.boxes) {
    json a = json::array();
    for (const auto& b : snip) a.push_back({b.x1, b.y1, b.x2, b.y2, b.confidence});
    j["boxes"].push_back(a);
  }
  return j.dump();
}

AnnotationRecord decode_annotation(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("annotation: malformed record: ") + e.what(), e.byte);
  }
  std::string where = "annotation";
  if (j.is_object() && j.contains("id") && j["id"].is_string()) where += " '" + j["id"].get<std::string>() + "'";
  check_keys(j, {"id", "fps", "frame_width", "frame_height", "snippet_stride", "segments", "boxes"}, where);
  AnnotationRecord r;
  r.id = field<std::string>(j, "id", where);
  r.fps = field<double>(j, "fps", where);
  r.frame_width = field<double>(j, "frame_width", where);
  r.frame_height = field<double>(j, "frame_height", where);
  r.snippet_stride = field<std::size_t>(j, "snippet_stride", where);
  if (!j["segments"].is_array() || !j["boxes"].is_array()) throw ValidationError(where + ": segments and boxes must be arrays");
  for (const auto& s : j["segments"]) {
    check_keys(s, {"class_id", "start", "end"}, where + " segment");
    r.segments.push_back({field<int>(s, "class_id", where), field<double>(s, "start", where), field<double>(s, "end", where)});
  }
  for (const auto& snip : j["boxes"]) {
    if (!snip.is_array()) throw ValidationError(where + ": box list must be an array");
    std::vector<SubjectBox> list;
    for (const auto& b : snip) {
      if (!b.is_array() || b.size() != 5) throw ValidationError(where + ": box must be [x1, y1, x2, y2, confidence]");
      std::vector<double> v;
      try {
        v = b.get<std::vector<double>>();
      } catch (const json::exception&) {
        throw ValidationError(where + ": box values must be numbers");
      }
      list.push_back({v[0], v[1], v[2], v[3], v[4]});
    }
    r.boxes.push_back(std::move(list));
  }
  r.validate();
  return r;
}

void write_annotations(const fs::path& path, const std::vector<AnnotationRecord>& records) {
  std::vector<std::string> lines;
  for (const auto& r : records) {
    r.validate();
    lines.push_back(encode_annotation(r));
  }
  write_lines(path, lines);
}

std::vector<AnnotationRecord> read_annotations(const fs::path& path) {
  std::vector<AnnotationRecord> out;
  std::set<std::string> ids;
  for (const auto& line : read_lines(path)) {
    out.push_back(decode_annotation(line));
    if (!ids.insert(out.back().id).second) throw ValidationError("annotation '" + out.back().id + "': duplicate id");
  }
  return out;
}

std::vector<VideoData> load_dataset(const fs::path& dir) {
  std::vector<VideoData> out;
  for (auto& a : read_annotations(dir / "annotations.jsonl")) {
    auto f = read_features(dir / "features" / (a.id + ".ptfv"));
    a.meta(f);
    out.push_back({std::move(a), std::move(f)});
  }
  return out;
}

// -------------------------------------------------------------- detections

void write_detections(const fs::path& path, const VideoDetections& dets) {
  std::vector<std::string> lines;
  for (const auto& [id, segs] : dets) {
    json j;
    j["video"] = id;
    j["detections"] = json::array();
    for (const auto& s : segs)
      j["detections"].push_back({{"class_id", s.class_id}, {"score", s.score}, {"start", s.start}, {"end", s.end}});
    lines.push_back(j.dump());
  }
  write_lines(path, lines);
}

VideoDetections read_detections(const fs::path& path) {
  VideoDetections out;
  for (const auto& line : read_lines(path)) {
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(std::string("detections: malformed record: ") + e.what(), e.byte);
    }
    check_keys(j, {"video", "detections"}, "detections");
    const auto id = field<std::string>(j, "video", "detections");
    auto& list = out[id];
    for (const auto& d : j["detections"]) {
      const std::string where = "detections '" + id + "'";
      check_keys(d, {"class_id", "score", "start", "end"}, where);
      ActionSegment s{field<int>(d, "class_id", where), field<double>(d, "score", where), field<double>(d, "start", where),
                      field<double>(d, "end", where)};
      if (!(s.start < s.end) || s.score < 0 || s.score > 1) throw ValidationError(where + ": invalid segment");
      list.push_back(s);
    }
  }
  return out;
}

// ------------------------------------------------------------- checkpoints

Checkpoint snapshot(const ParamStore& store) {
  std::vector<Tensor> values;
  for (const auto* p : store.all()) values.push_back(p->value);
  return snapshot(store, values);
}

Checkpoint snapshot(const ParamStore& store, const std::vector<Tensor>& values) {
  const auto params = store.all();
  if (params.size() != values.size()) throw DimensionError("snapshot: value count does not match parameters");
  Checkpoint ck;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (values[i].shape() != params[i]->value.shape()) throw DimensionError("snapshot: shape mismatch for " + params[i]->name);
    Checkpoint::Entry e;
    e.name = params[i]->name;
    for (auto d : values[i].shape()) e.dims.push_back(static_cast<std::uint32_t>(d));
    for (double v : values[i].data()) e.values.push_back(to_f32_checked(v, "checkpoint"));
    ck.entries.push_back(std::move(e));
  }
  return ck;
}

void restore(const Checkpoint& ck, ParamStore& store) {
  if (ck.entries.size() != store.size())
    throw ValidationError("checkpoint has " + std::to_string(ck.entries.size()) + " parameters, model has " +
                          std::to_string(store.size()));
  for (const auto& e : ck.entries) {
    Parameter* p = store.find(e.name);
    if (p == nullptr) throw ValidationError("checkpoint parameter '" + e.name + "' not in model");
    Shape s(e.dims.begin(), e.dims.end());
    if (s != p->value.shape())
      throw ValidationError("checkpoint parameter '" + e.name + "' has shape " + shape_str(s) + ", model expects " +
                            shape_str(p->value.shape()));
    p->value = Tensor(s, std::vector<double>(e.values.begin(), e.values.end()));
  }
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  std::vector<std::uint8_t> out{'P', 'T', 'C', 'K'};
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(ck.entries.size()));
  for (const auto& e : ck.entries) {
    std::size_t n = 1;
    for (auto d : e.dims) n *= d;
    if (n != e.values.size()) throw DimensionError("checkpoint entry '" + e.name + "' payload does not match dims");
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put_u32(out, static_cast<std::uint32_t>(e.dims.size()));
    for (auto d : e.dims) put_u32(out, d);
    for (float v : e.values) put_f32(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes, "checkpoint");
  r.magic("PTCK");
  r.version();
  const auto count = r.u32("entry count");
  Checkpoint ck;
  for (std::uint32_t i = 0; i < count; ++i) {
    Checkpoint::Entry e;
    const auto len = r.u32("name length");
    e.name = r.bytes(len, "name");
    const std::size_t at = r.pos();
    const auto ndim = r.u32("rank");
    if (ndim > 8) throw FormatError("checkpoint: implausible rank " + std::to_string(ndim), at);
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < ndim; ++k) {
      e.dims.push_back(r.u32("dim"));
      n *= e.dims.back();
    }
    r.need(4 * n, "payload");
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t vat = r.pos();
      e.values.push_back(r.f32("payload"));
      if (!std::isfinite(e.values.back())) throw FormatError("checkpoint: non-finite value in '" + e.name + "'", vat);
    }
    ck.entries.push_back(std::move(e));
  }
  if (r.pos() != r.size()) throw FormatError("checkpoint: trailing bytes", r.pos());
  return ck;
}

void write_checkpoint(const fs::path& path, const Checkpoint& ck) { write_bytes(path, encode_checkpoint(ck)); }
Checkpoint read_checkpoint(const fs::path& path) { return decode_checkpoint(read_bytes(path)); }

// ---------------------------------------------------------------- loss log

void write_loss_log(const fs::path& path, const std::vector<EpochLog>& log) {
  std::vector<std::string> lines;
  for (const auto& e : log)
    lines.push_back(json{{"epoch", e.epoch}, {"steps", e.steps}, {"mean_loss", e.mean_loss}, {"lr", e.lr}, {"grad_norm", e.grad_norm}}
                        .dump());
  write_lines(path, lines);
}

std::vector<EpochLog> read_loss_log(const fs::path& path) {
  std::vector<EpochLog> out;
  for (const auto& line : read_lines(path)) {
    const json j = json::parse(line);
    check_keys(j, {"epoch", "steps", "mean_loss", "lr", "grad_norm"}, "loss log");
    out.push_back({j["epoch"].get<std::size_t>(), j["steps"].get<std::size_t>(), j["mean_loss"].get<double>(),
                   j["lr"].get<double>(), j["grad_norm"].get<double>()});
  }
  return out;
}

// ------------------------------------------------------------------ report

std::string encode_report(const EvalReport& rep) {
  json j;
  j["average_map"] = rep.average_map;
  j["per_threshold_map"] = json::array();
  for (const auto& [t, m] : rep.per_threshold_map) j["per_threshold_map"].push_back({{"tiou", t}, {"map", m}});
  j["per_class_ap"] = json::array();
  for (const auto& [k, ap] : rep.per_class_ap) j["per_class_ap"].push_back({{"class_id", k.first}, {"tiou", k.second}, {"ap", ap}});
  return j.dump();
}

EvalReport decode_report(const std::string& line) {
  const json j = json::parse(line);
  check_keys(j, {"average_map", "per_threshold_map", "per_class_ap"}, "report");
  EvalReport rep;
  rep.average_map = j["average_map"].get<double>();
  for (const auto& e : j["per_threshold_map"]) rep.per_threshold_map[e.at("tiou").get<double>()] = e.at("map").get<double>();
  for (const auto& e : j["per_class_ap"])
    rep.per_class_ap[{e.at("class_id").get<int>(), e.at("tiou").get<double>()}] = e.at("ap").get<double>();
  return rep;
}

std::string format_report(const EvalReport& rep) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "tIoU ";
  for (const auto& [t, _] : rep.per_threshold_map) os << std::setw(7) << t;
  os << "    Avg\nmAP  ";
  for (const auto& [_, m] : rep.per_threshold_map) os << std::setw(7) << 100.0 * m;
  os << std::setw(7) << 100.0 * rep.average_map << "\n";
  return os.str();
}

}  // namespace petal::io
