#include <doctest.h>

#include <fstream>

#include "meldae/data_model.hpp"
#include "meldae/rng.hpp"

using namespace meldae;
namespace fs = std::filesystem;

namespace {

fs::path make_tmp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("meldae_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_feature_payload(const fs::path& dir, const std::string& name, int T,
                           int D) {
  write_array(dir / name, Mat::Zero(T, D), {std::uint32_t(T), std::uint32_t(D)});
}

void write_manifest_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream os(path);
  os << "{\"version\":1}\n";
  for (const auto& l : lines) os << l << "\n";
}

std::string record_line(const std::string& id, const std::string& payload,
                        const std::string& segments, bool has_me,
                        const std::string& state = "listening") {
  return "{\"clip_id\":\"" + id + "\",\"payload\":\"" + payload +
         "\",\"kind\":\"features\",\"fps\":30.0,\"has_me\":" +
         (has_me ? "true" : "false") + ",\"state\":\"" + state +
         "\",\"segments\":" + segments + "}";
}

}  // namespace

TEST_CASE("load_manifest accepts a minimal valid manifest") {
  auto dir = make_tmp_dir("manifest_ok");
  write_feature_payload(dir, "c0.bin", 100, 8);
  write_manifest_lines(dir / "manifest.jsonl",
                       {record_line("c0", "c0.bin", "[[10,25]]", true)});
  DatasetManifest m = load_manifest(dir / "manifest.jsonl");
  REQUIRE(m.clips.size() == 1);
  CHECK(m.clips[0].segments.size() == 1);
  CHECK(m.clips[0].segments[0].onset == 10);
  CHECK(m.clips[0].segments[0].offset == 25);
  CHECK(m.clips[0].num_frames == 100);
}

TEST_CASE("load_manifest rejects onset > offset") {
  auto dir = make_tmp_dir("manifest_order");
  write_feature_payload(dir, "c0.bin", 100, 8);
  write_manifest_lines(dir / "manifest.jsonl",
                       {record_line("c0", "c0.bin", "[[30,20]]", true)});
  CHECK_THROWS_AS(load_manifest(dir / "manifest.jsonl"), ValidationError);
}

TEST_CASE("load_manifest rejects duplicate clip ids") {
  auto dir = make_tmp_dir("manifest_dup");
  write_feature_payload(dir, "c0.bin", 100, 8);
  write_manifest_lines(dir / "manifest.jsonl",
                       {record_line("c0", "c0.bin", "[]", false),
                        record_line("c0", "c0.bin", "[]", false)});
  CHECK_THROWS_AS(load_manifest(dir / "manifest.jsonl"), ValidationError);
}

TEST_CASE("load_manifest rejects other invariant violations") {
  auto dir = make_tmp_dir("manifest_bad");
  write_feature_payload(dir, "c0.bin", 20, 8);

  SUBCASE("offset past end of clip") {
    write_manifest_lines(dir / "manifest.jsonl",
                         {record_line("c0", "c0.bin", "[[5,25]]", true)});
    CHECK_THROWS_AS(load_manifest(dir / "manifest.jsonl"), ValidationError);
  }
  SUBCASE("overlapping segments") {
    write_manifest_lines(dir / "manifest.jsonl",
                         {record_line("c0", "c0.bin", "[[2,8],[6,10]]", true)});
    CHECK_THROWS_AS(load_manifest(dir / "manifest.jsonl"), ValidationError);
  }
  SUBCASE("has_me inconsistent with segments") {
    write_manifest_lines(dir / "manifest.jsonl",
                         {record_line("c0", "c0.bin", "[]", true)});
    CHECK_THROWS_AS(load_manifest(dir / "manifest.jsonl"), ValidationError);
  }
  SUBCASE("missing payload") {
    write_manifest_lines(dir / "manifest.jsonl",
                         {record_line("c1", "missing.bin", "[]", false)});
    CHECK_THROWS_AS(load_manifest(dir / "manifest.jsonl"), ValidationError);
  }
  SUBCASE("unknown version") {
    std::ofstream os(dir / "manifest.jsonl");
    os << "{\"version\":99}\n";
    os.close();
    CHECK_THROWS_AS(load_manifest(dir / "manifest.jsonl"), SchemaError);
  }
  SUBCASE("malformed line") {
    std::ofstream os(dir / "manifest.jsonl");
    os << "{\"version\":1}\n{not json\n";
    os.close();
    CHECK_THROWS_AS(load_manifest(dir / "manifest.jsonl"), ParseError);
  }
}

TEST_CASE("manifest round-trips through save and load") {
  auto dir = make_tmp_dir("manifest_rt");
  write_feature_payload(dir, "c0.bin", 50, 8);
  write_feature_payload(dir, "c1.bin", 64, 8);
  write_manifest_lines(
      dir / "manifest.jsonl",
      {record_line("c0", "c0.bin", "[[3,9],[20,20]]", true, "speaking"),
       record_line("c1", "c1.bin", "[]", false)});
  DatasetManifest m1 = load_manifest(dir / "manifest.jsonl");
  save_manifest(m1, dir / "copy.jsonl");
  DatasetManifest m2 = load_manifest(dir / "copy.jsonl");
  REQUIRE(m1.clips.size() == m2.clips.size());
  for (size_t i = 0; i < m1.clips.size(); ++i) {
    CHECK(m1.clips[i].clip_id == m2.clips[i].clip_id);
    CHECK(m1.clips[i].has_me == m2.clips[i].has_me);
    CHECK(m1.clips[i].state == m2.clips[i].state);
    CHECK(m1.clips[i].segments == m2.clips[i].segments);
  }
}

TEST_CASE("array files round-trip values and shape") {
  auto dir = make_tmp_dir("array_rt");
  Rng rng(3);
  Mat m(7, 5);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.normal();
  write_array(dir / "a.bin", m, {7, 5});
  ArrayFile a = read_array(dir / "a.bin");
  REQUIRE(a.shape == std::vector<std::uint32_t>{7, 5});
  // float32 storage
  CHECK((a.data - m).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("frame_mask matches the segment definition") {
  ClipSample clip;
  clip.features = Mat::Zero(6, 4);
  clip.segments = {{1, 3, ConversationalState::Listening}};
  Vec mask = frame_mask(clip);
  Vec expect(6);
  expect << 0, 1, 1, 1, 0, 0;
  CHECK(mask == expect);
}

TEST_CASE("frame_mask of a segment-free clip is all zero") {
  CHECK(frame_mask({}, 5) == Vec::Zero(5));
}

TEST_CASE("frame_mask agrees with a brute-force membership scan") {
  std::vector<SegmentAnnotation> segs = {{0, 1, ConversationalState::Listening},
                                         {5, 7, ConversationalState::Listening}};
  Vec mask = frame_mask(segs, 8);
  for (int t = 0; t < 8; ++t) {
    bool inside = false;
    for (const auto& s : segs) inside = inside || (s.onset <= t && t <= s.offset);
    CHECK(mask[t] == (inside ? 1.0 : 0.0));
  }
  Vec expect(8);
  expect << 1, 1, 0, 0, 0, 1, 1, 1;
  CHECK(mask == expect);
}

TEST_CASE("boundary_weights marks onset and offset frames") {
  Vec w = boundary_weights({{1, 3, ConversationalState::Listening}}, 5, 5.0);
  Vec expect(5);
  expect << 1, 5, 1, 5, 1;
  CHECK(w == expect);
}

TEST_CASE("single-frame segments weight the frame once") {
  Vec w = boundary_weights({{2, 2, ConversationalState::Listening}}, 4, 5.0);
  Vec expect(4);
  expect << 1, 1, 5, 1;
  CHECK(w == expect);
}

TEST_CASE("boundary_weights with no segments is all ones") {
  CHECK(boundary_weights({}, 6, 5.0) == Vec::Ones(6));
}

TEST_CASE("mask and weight properties over random annotation lists") {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    int T = int(rng.uniform_int(2, 64));
    std::vector<SegmentAnnotation> segs;
    int t = 0, annotated = 0, singles = 0;
    while (t < T) {
      if (rng.bernoulli(0.3)) {
        int len = int(rng.uniform_int(1, std::min<std::int64_t>(5, T - t)));
        segs.push_back({t, t + len - 1, ConversationalState::Listening});
        annotated += len;
        if (len == 1) ++singles;
        t += len + 1;
      } else {
        ++t;
      }
    }
    validate_segments(segs, T, "prop");

    Vec mask = frame_mask(segs, T);
    CHECK(mask.sum() == doctest::Approx(annotated));

    double wb = 5.0;
    Vec w = boundary_weights(segs, T, wb);
    int heavy = 0;
    for (int i = 0; i < T; ++i) {
      CHECK((w[i] == 1.0 || w[i] == wb));
      if (w[i] == wb) ++heavy;
    }
    CHECK(heavy == 2 * int(segs.size()) - singles);
  }
}
