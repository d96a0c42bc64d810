#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "petal/eval.hpp"
#include "petal/heads.hpp"
#include "petal/params.hpp"
#include "petal/sa_drm.hpp"
#include "petal/segment.hpp"

// On-disk formats. Binary files are little-endian with float32 payloads;
// record files hold one JSON object per line.
namespace petal::io {

namespace fs = std::filesystem;

// Snippet feature grids of one video, row-major (t, h, w, d).
struct FeatureFile {
  std::uint32_t T = 0, H = 0, W = 0, D = 0;
  std::vector<float> payload;

  static constexpr std::size_t kHeaderBytes = 24;

  // Snippet t as an [H x W x D] tensor.
  Tensor snippet(std::size_t t) const;
  std::size_t byte_size() const { return kHeaderBytes + 4 * payload.size(); }
};

FeatureFile make_features(const std::vector<Tensor>& snippets);
std::vector<std::uint8_t> encode_features(const FeatureFile& f);
FeatureFile decode_features(const std::vector<std::uint8_t>& bytes);
void write_features(const fs::path& path, const FeatureFile& f);
FeatureFile read_features(const fs::path& path);

struct AnnotationRecord {
  std::string id;
  double fps = 0;
  double frame_width = 0;
  double frame_height = 0;
  std::size_t snippet_stride = 0;
  std::vector<GroundTruthSegment> segments;
  std::vector<std::vector<SubjectBox>> boxes;  // one list per snippet

  std::size_t num_snippets() const { return boxes.size(); }
  double duration() const;
  // Throws ValidationError naming the record.
  void validate(int num_classes = -1) const;
  VideoMeta meta(const FeatureFile& features) const;
};

std::string encode_annotation(const AnnotationRecord& r);
AnnotationRecord decode_annotation(const std::string& line);
void write_annotations(const fs::path& path, const std::vector<AnnotationRecord>& records);
std::vector<AnnotationRecord> read_annotations(const fs::path& path);

// A dataset directory: annotations.jsonl plus features/<id>.ptfv.
struct VideoData {
  AnnotationRecord annotation;
  FeatureFile features;
};
std::vector<VideoData> load_dataset(const fs::path& dir);

void write_detections(const fs::path& path, const VideoDetections& dets);
VideoDetections read_detections(const fs::path& path);

// Named float32 parameter list, magic "PTCK".
struct Checkpoint {
  struct Entry {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> values;
  };
  std::vector<Entry> entries;
};

Checkpoint snapshot(const ParamStore& store);
Checkpoint snapshot(const ParamStore& store, const std::vector<Tensor>& values);
// Copies matching entries into the store; names and shapes must agree.
void restore(const Checkpoint& ck, ParamStore& store);
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void write_checkpoint(const fs::path& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const fs::path& path);

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double mean_loss = 0;
  double lr = 0;
  double grad_norm = 0;
};

void write_loss_log(const fs::path& path, const std::vector<EpochLog>& log);
std::vector<EpochLog> read_loss_log(const fs::path& path);

// Machine-readable line plus a human table.
std::string encode_report(const EvalReport& rep);
EvalReport decode_report(const std::string& line);
std::string format_report(const EvalReport& rep);

std::vector<std::uint8_t> read_bytes(const fs::path& path);
void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace petal::io
