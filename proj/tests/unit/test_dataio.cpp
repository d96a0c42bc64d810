#include <cmath>
#include <cstring>
#include <unistd.h>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "petal/dataio.hpp"
#include "petal/errors.hpp"
#include "petal/rng.hpp"
#include "petal/synthetic.hpp"
#include "test_util.hpp"

using namespace petal;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("petal_test_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

io::AnnotationRecord minimal_record(const std::string& id = "v0") {
  io::AnnotationRecord r;
  r.id = id;
  r.fps = 16;
  r.frame_width = 320;
  r.frame_height = 240;
  r.snippet_stride = 4;
  r.segments = {{1, 0.25, 1.0}};
  r.boxes = {{{1, 2, 30, 40, 0.9}}, {}, {{0.5, 0.25, 10.125, 20, 0.3}, {5, 5, 6, 7, 1.0}}, {}, {}};
  return r;
}

void check_same(const io::AnnotationRecord& a, const io::AnnotationRecord& b) {
  CHECK(a.id == b.id);
  CHECK(a.fps == b.fps);
  CHECK(a.frame_width == b.frame_width);
  CHECK(a.frame_height == b.frame_height);
  CHECK(a.snippet_stride == b.snippet_stride);
  REQUIRE(a.segments.size() == b.segments.size());
  for (std::size_t i = 0; i < a.segments.size(); ++i) {
    CHECK(a.segments[i].class_id == b.segments[i].class_id);
    CHECK(a.segments[i].start == b.segments[i].start);
    CHECK(a.segments[i].end == b.segments[i].end);
  }
  REQUIRE(a.boxes.size() == b.boxes.size());
  for (std::size_t t = 0; t < a.boxes.size(); ++t) {
    REQUIRE(a.boxes[t].size() == b.boxes[t].size());
    for (std::size_t k = 0; k < a.boxes[t].size(); ++k) {
      CHECK(a.boxes[t][k].x1 == b.boxes[t][k].x1);
      CHECK(a.boxes[t][k].y2 == b.boxes[t][k].y2);
      CHECK(a.boxes[t][k].confidence == b.boxes[t][k].confidence);
    }
  }
}

std::string dir_bytes(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) {
    const auto b = io::read_bytes(f);
    all += fs::relative(f, dir).string() + ":" + std::string(b.begin(), b.end());
  }
  return all;
}

}  // namespace

TEST_CASE("features: round trip and size") {
  Rng rng(41);
  std::vector<Tensor> snips;
  for (int t = 0; t < 2; ++t) snips.push_back(petal::testing::random_tensor({2, 2, 3}, rng));
  const auto f = io::make_features(snips);
  const auto bytes = io::encode_features(f);
  CHECK(bytes.size() == 24 + 96);
  CHECK(f.byte_size() == 120);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "PTFV");
  const auto back = io::decode_features(bytes);
  CHECK(back.payload == f.payload);
  CHECK(io::encode_features(back) == bytes);
  CHECK(back.snippet(1).at(1 * 2 + 0, 2) == static_cast<double>(static_cast<float>(snips[1][(1 * 2 + 0) * 3 + 2])));

  const auto dir = scratch("features");
  io::write_features(dir / "a.ptfv", f);
  CHECK(io::read_bytes(dir / "a.ptfv") == bytes);
  CHECK(io::read_features(dir / "a.ptfv").payload == f.payload);
  fs::remove_all(dir);
}

TEST_CASE("features: one snippet edge case") {
  const auto f = io::make_features({Tensor::full({1, 1, 1}, 0.5)});
  CHECK(io::decode_features(io::encode_features(f)).payload == f.payload);
}

TEST_CASE("features: format errors carry offsets") {
  const auto good = io::encode_features(io::make_features({Tensor::full({2, 2, 3}, 1.0)}));
  auto bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(io::decode_features(bad_magic), FormatError);
  auto bad_version = good;
  bad_version[4] = 9;
  try {
    io::decode_features(bad_version);
    FAIL("expected error");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 4);
  }
  auto truncated = good;
  truncated.resize(100);
  try {
    io::decode_features(truncated);
    FAIL("expected error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("expected 72") != std::string::npos);
    CHECK(std::string(e.what()).find("got 100") != std::string::npos);
  }
  auto nan = good;
  const float q = std::nanf("");
  std::memcpy(nan.data() + 24 + 8, &q, 4);
  try {
    io::decode_features(nan);
    FAIL("expected error");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 32);
  }
  CHECK_THROWS_AS(io::decode_features({'P', 'T'}), FormatError);
}

TEST_CASE("annotations: round trip and validation") {
  const auto r = minimal_record();
  check_same(io::decode_annotation(io::encode_annotation(r)), r);
  CHECK(io::encode_annotation(io::decode_annotation(io::encode_annotation(r))) == io::encode_annotation(r));

  auto bad = r;
  bad.segments[0].start = 1.0;
  bad.segments[0].end = 0.5;
  try {
    bad.validate();
    FAIL("expected error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("'v0'") != std::string::npos);
  }
  std::string line = io::encode_annotation(r);
  line.insert(1, "\"extra\":1,");
  CHECK_THROWS_AS(io::decode_annotation(line), ValidationError);
  CHECK_THROWS_AS(io::decode_annotation(R"({"id":"x","fps":1})"), ValidationError);
  CHECK_THROWS_AS(io::decode_annotation("{not json"), FormatError);
  auto outside = r;
  outside.segments[0].end = 99.0;
  CHECK_THROWS_AS(outside.validate(), ValidationError);
}

TEST_CASE("annotations: three video file") {
  const auto dir = scratch("annotations");
  std::vector<io::AnnotationRecord> recs = {minimal_record("a"), minimal_record("b"), minimal_record("c")};
  recs[1].segments.push_back({0, 0.0, 0.5});
  recs[2].segments.clear();
  recs[2].fps = 29.97;
  io::write_annotations(dir / "ann.jsonl", recs);
  const auto back = io::read_annotations(dir / "ann.jsonl");
  REQUIRE(back.size() == 3);
  for (int i = 0; i < 3; ++i) check_same(back[static_cast<std::size_t>(i)], recs[static_cast<std::size_t>(i)]);
  const auto bytes = io::read_bytes(dir / "ann.jsonl");
  io::write_annotations(dir / "again.jsonl", back);
  CHECK(io::read_bytes(dir / "again.jsonl") == bytes);
  fs::remove_all(dir);
}

TEST_CASE("detections: round trip with an empty video") {
  const auto dir = scratch("detections");
  VideoDetections d = {{"empty", {}}, {"v", {{0, 0.123456789012345, 0.1, 2.5}, {3, 1.0, 7.0, 7.0000001}}}};
  io::write_detections(dir / "det.jsonl", d);
  const auto back = io::read_detections(dir / "det.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back.at("empty").empty());
  const auto& v = back.at("v");
  REQUIRE(v.size() == 2);
  CHECK(v[0].score == 0.123456789012345);
  CHECK(v[1].end == 7.0000001);
  const auto bytes = io::read_bytes(dir / "det.jsonl");
  io::write_detections(dir / "det2.jsonl", back);
  CHECK(io::read_bytes(dir / "det2.jsonl") == bytes);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint: round trip and restore") {
  Rng rng(42);
  ParamStore s;
  s.xavier("a.w", {3, 4}, 3, 4, rng);
  s.constant("a.b", {4}, 0.25);
  s.xavier("c", {2, 2, 2}, 4, 4, rng);
  const auto ck = io::snapshot(s);
  const auto bytes = io::encode_checkpoint(ck);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "PTCK");
  const auto back = io::decode_checkpoint(bytes);
  CHECK(io::encode_checkpoint(back) == bytes);

  ParamStore t;
  t.constant("a.w", {3, 4}, 0.0);
  t.constant("a.b", {4}, 0.0);
  t.constant("c", {2, 2, 2}, 0.0);
  io::restore(back, t);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < s.all()[i]->value.size(); ++j)
      CHECK(t.all()[i]->value[j] == static_cast<double>(static_cast<float>(s.all()[i]->value[j])));
  CHECK(io::encode_checkpoint(io::snapshot(t)) == bytes);

  ParamStore wrong;
  wrong.constant("a.w", {4, 3}, 0.0);
  wrong.constant("a.b", {4}, 0.0);
  wrong.constant("c", {2, 2, 2}, 0.0);
  CHECK_THROWS_AS(io::restore(back, wrong), ValidationError);
  auto cut = bytes;
  cut.pop_back();
  CHECK_THROWS_AS(io::decode_checkpoint(cut), FormatError);
  auto extra = bytes;
  extra.push_back(0);
  CHECK_THROWS_AS(io::decode_checkpoint(extra), FormatError);
}

TEST_CASE("loss log and report round trip") {
  const auto dir = scratch("logs");
  std::vector<io::EpochLog> log = {{1, 4, 1.25, 1e-4, 0.5}, {2, 4, 0.987654321, 5e-5, 0.25}};
  io::write_loss_log(dir / "loss.jsonl", log);
  const auto back = io::read_loss_log(dir / "loss.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[1].mean_loss == 0.987654321);
  CHECK(back[1].lr == 5e-5);

  EvalReport rep;
  rep.per_threshold_map = {{0.5, 0.75}, {0.7, 0.5}};
  rep.average_map = 0.625;
  rep.per_class_ap = {{{0, 0.5}, 1.0}, {{1, 0.5}, 0.5}};
  const auto line = io::encode_report(rep);
  const auto r2 = io::decode_report(line);
  CHECK(r2.per_threshold_map == rep.per_threshold_map);
  CHECK(r2.per_class_ap == rep.per_class_ap);
  CHECK(io::encode_report(r2) == line);
  CHECK(io::format_report(rep).find("62.50") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("synthetic: noiseless subject cells carry the class signal") {
  synth::SyntheticSpec spec;
  spec.num_videos = 1;
  spec.max_segments = 1;
  spec.seed = 7;
  const auto ds = synth::generate(spec);
  const auto& v = ds.videos[0];
  REQUIRE(v.annotation.segments.size() == 1);
  const auto& seg = v.annotation.segments[0];
  const double u = 4.0 / 16.0;
  const std::size_t D = spec.feature_dim, N = spec.grid * spec.grid;
  for (std::size_t t = 0; t < v.features.T; ++t) {
    const double time = static_cast<double>(t) * u;
    const bool in = time >= seg.start && time <= seg.end;
    const auto& want = in ? ds.class_signals[static_cast<std::size_t>(seg.class_id)] : ds.idle_signal;
    for (std::size_t cell : v.subject_cells)
      for (std::size_t d = 0; d < D; ++d) CHECK(v.features.payload[(t * N + cell) * D + d] == want[d]);
    // Confounded: the global average is the same for every snippet.
    const Tensor avg = global_average(v.features.snippet(t));
    for (std::size_t d = 0; d < D; ++d) CHECK(avg[d] == doctest::Approx(ds.global_mean[d]).epsilon(1e-5));
  }
  // Boxes cover exactly the subject cells.
  const auto meta = v.annotation.meta(v.features);
  std::size_t covered = 0;
  for (const auto& b : v.annotation.boxes[0]) covered += static_cast<std::size_t>(b.area() / (16.0 * 16.0));
  CHECK(covered == v.subject_cells.size());
  CHECK(meta.num_snippets == v.features.T);
}

TEST_CASE("synthetic: same seed gives identical bytes") {
  synth::SyntheticSpec spec;
  spec.num_videos = 3;
  spec.noise = 0.1;
  spec.seed = 99;
  const auto a = scratch("synth_a"), b = scratch("synth_b");
  synth::write_dataset(a, synth::generate(spec));
  synth::write_dataset(b, synth::generate(spec));
  CHECK(dir_bytes(a) == dir_bytes(b));
  spec.seed = 100;
  const auto c = scratch("synth_c");
  synth::write_dataset(c, synth::generate(spec));
  CHECK(dir_bytes(a) != dir_bytes(c));
  const auto loaded = io::load_dataset(a);
  CHECK(loaded.size() == 3);
  for (const auto& p : {a, b, c}) fs::remove_all(p);
}

TEST_CASE("synthetic: coverage recount over 100 videos") {
  synth::SyntheticSpec spec;
  spec.num_videos = 100;
  spec.seed = 3;
  spec.coverage_min = 0.25;
  spec.coverage_max = 0.5;
  const auto ds = synth::generate(spec);
  const std::size_t D = spec.feature_dim, N = spec.grid * spec.grid;
  for (const auto& v : ds.videos) {
    // Count snippets whose first subject cell is not idle, straight from the payload.
    std::size_t active = 0;
    const std::size_t cell = v.subject_cells.front();
    for (std::size_t t = 0; t < v.features.T; ++t) {
      bool idle = true;
      for (std::size_t d = 0; d < D; ++d) idle = idle && v.features.payload[(t * N + cell) * D + d] == ds.idle_signal[d];
      active += idle ? 0 : 1;
    }
    const double T = v.features.T;
    const double frac = static_cast<double>(active) / T;
    CHECK(frac >= spec.coverage_min - 0.5 / T);
    CHECK(frac <= spec.coverage_max + 0.5 / T);
    double from_ann = 0.0;
    for (const auto& s : v.annotation.segments) from_ann += (s.end - s.start) / 0.25 + 1.0;
    CHECK(from_ann == doctest::Approx(static_cast<double>(active)));
  }
}

TEST_CASE("synthetic: invalid specs and unwritable output") {
  synth::SyntheticSpec spec;
  spec.k_max = 5;
  CHECK_THROWS_AS(synth::generate(spec), ValidationError);
  spec = {};
  spec.num_videos = 1;
  const auto blocker = scratch("blocked") / "file";
  std::ofstream(blocker) << "x";
  CHECK_THROWS_AS(synth::write_dataset(blocker / "sub", synth::generate(spec)), IoError);
  fs::remove_all(blocker.parent_path());
}
