#include "meldae/data_model.hpp"

#include <fstream>
#include <json.hpp>
#include <set>

namespace meldae {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string to_string(ConversationalState s) {
  return s == ConversationalState::Speaking ? "speaking" : "listening";
}

ConversationalState state_from_string(const std::string& s) {
  if (s == "speaking") return ConversationalState::Speaking;
  if (s == "listening") return ConversationalState::Listening;
  throw SchemaError("unknown conversational state: " + s);
}

const ClipRecord* DatasetManifest::find(const std::string& clip_id) const {
  for (const auto& c : clips)
    if (c.clip_id == clip_id) return &c;
  return nullptr;
}

void validate_segments(const std::vector<SegmentAnnotation>& segs, int num_frames,
                       const std::string& clip_id) {
  int prev_end = -1;
  for (const auto& s : segs) {
    if (s.onset < 0 || s.onset > s.offset)
      throw ValidationError(clip_id + ": segment onset/offset out of order");
    if (s.offset >= num_frames)
      throw ValidationError(clip_id + ": segment offset past end of clip");
    if (s.onset <= prev_end)
      throw ValidationError(clip_id + ": segments overlap or are unsorted");
    prev_end = s.offset;
  }
}

// ---------------------------------------------------------------------------
// Packed array files: magic, version, dtype, shape, then float32 data.

namespace {

constexpr char kArrayMagic[4] = {'M', 'E', 'A', 'R'};

template <typename T>
void write_pod(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

std::vector<std::uint32_t> read_array_header(std::ifstream& is,
                                             const fs::path& path) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kArrayMagic, 4) != 0)
    throw ParseError("not an array file: " + path.string());
  auto version = read_pod<std::uint32_t>(is);
  if (version != 1) throw SchemaError("unsupported array file version");
  auto dtype = read_pod<std::uint8_t>(is);
  if (dtype != 0) throw SchemaError("unsupported array dtype");
  auto ndim = read_pod<std::uint8_t>(is);
  std::vector<std::uint32_t> shape(ndim);
  for (auto& d : shape) d = read_pod<std::uint32_t>(is);
  if (!is) throw ParseError("truncated array header: " + path.string());
  return shape;
}

}  // namespace

void write_array(const fs::path& path, const Mat& data,
                 const std::vector<std::uint32_t>& logical_shape) {
  std::uint64_t n = 1;
  for (auto d : logical_shape) n *= d;
  if (n != std::uint64_t(data.size()))
    throw ShapeError("write_array: shape does not cover data");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for write: " + path.string());
  os.write(kArrayMagic, 4);
  write_pod<std::uint32_t>(os, 1);
  write_pod<std::uint8_t>(os, 0);  // float32
  write_pod<std::uint8_t>(os, std::uint8_t(logical_shape.size()));
  for (auto d : logical_shape) write_pod<std::uint32_t>(os, d);
  for (Eigen::Index r = 0; r < data.rows(); ++r)
    for (Eigen::Index c = 0; c < data.cols(); ++c)
      write_pod<float>(os, float(data(r, c)));
  if (!os) throw IoError("write failed: " + path.string());
}

ArrayFile read_array(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  ArrayFile out;
  out.shape = read_array_header(is, path);
  if (out.shape.empty()) throw SchemaError("scalar array files unsupported");
  std::uint64_t rows = out.shape[0], cols = 1;
  for (size_t i = 1; i < out.shape.size(); ++i) cols *= out.shape[i];
  out.data.resize(rows, cols);
  for (std::uint64_t r = 0; r < rows; ++r)
    for (std::uint64_t c = 0; c < cols; ++c)
      out.data(r, c) = double(read_pod<float>(is));
  if (!is) throw ParseError("truncated array data: " + path.string());
  return out;
}

std::vector<std::uint32_t> read_array_shape(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  return read_array_header(is, path);
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

json record_to_json(const ClipRecord& r) {
  json segs = json::array();
  for (const auto& s : r.segments) segs.push_back({s.onset, s.offset});
  return json{{"clip_id", r.clip_id},
              {"payload", r.payload},
              {"kind", r.kind == PayloadKind::Frames ? "frames" : "features"},
              {"fps", r.fps},
              {"has_me", r.has_me},
              {"state", to_string(r.state)},
              {"segments", segs}};
}

ClipRecord record_from_json(const json& j) {
  ClipRecord r;
  try {
    r.clip_id = j.at("clip_id").get<std::string>();
    r.payload = j.at("payload").get<std::string>();
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "frames")
      r.kind = PayloadKind::Frames;
    else if (kind == "features")
      r.kind = PayloadKind::Features;
    else
      throw SchemaError("unknown payload kind: " + kind);
    r.fps = j.at("fps").get<double>();
    r.has_me = j.at("has_me").get<bool>();
    r.state = state_from_string(j.at("state").get<std::string>());
    for (const auto& s : j.at("segments")) {
      if (!s.is_array() || s.size() != 2)
        throw SchemaError("segment must be an [onset, offset] pair");
      r.segments.push_back({s[0].get<int>(), s[1].get<int>(), r.state});
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad clip record: ") + e.what());
  }
  return r;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw ParseError("empty manifest: " + path.string());

  DatasetManifest m;
  m.dir = path.parent_path();
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError(std::string("manifest header: ") + e.what());
  }
  if (!header.contains("version")) throw SchemaError("manifest header lacks version");
  m.version = header["version"].get<int>();
  if (m.version != DatasetManifest::kSchemaVersion)
    throw SchemaError("unknown manifest version " + std::to_string(m.version));

  std::set<std::string> ids;
  size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    ClipRecord r = record_from_json(j);
    if (!ids.insert(r.clip_id).second)
      throw ValidationError("duplicate clip_id: " + r.clip_id);

    fs::path payload = m.dir / r.payload;
    if (!fs::exists(payload))
      throw ValidationError("payload missing for " + r.clip_id + ": " +
                            payload.string());
    auto shape = read_array_shape(payload);
    if (shape.empty()) throw ValidationError("empty payload shape: " + r.clip_id);
    r.num_frames = int(shape[0]);
    if (r.num_frames < 2)
      throw ValidationError(r.clip_id + ": clip must have at least 2 frames");
    validate_segments(r.segments, r.num_frames, r.clip_id);
    if (r.has_me != !r.segments.empty())
      throw ValidationError(r.clip_id + ": has_me inconsistent with segments");
    m.clips.push_back(std::move(r));
  }
  return m;
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write manifest: " + path.string());
  os << json{{"version", m.version}}.dump() << "\n";
  for (const auto& r : m.clips) os << record_to_json(r).dump() << "\n";
  if (!os) throw IoError("manifest write failed: " + path.string());
}

ClipSample load_clip(const DatasetManifest& m, const ClipRecord& rec) {
  ClipSample c;
  c.clip_id = rec.clip_id;
  c.kind = rec.kind;
  c.fps = rec.fps;
  c.has_me = rec.has_me;
  c.state = rec.state;
  c.segments = rec.segments;
  ArrayFile arr = read_array(m.dir / rec.payload);
  if (rec.kind == PayloadKind::Features) {
    if (arr.shape.size() != 2)
      throw ShapeError(rec.clip_id + ": feature payload must be T x D");
    c.features = std::move(arr.data);
  } else {
    if (arr.shape.size() != 4)
      throw ShapeError(rec.clip_id + ": frame payload must be T x C x H x W");
    c.frames.channels = int(arr.shape[1]);
    c.frames.height = int(arr.shape[2]);
    c.frames.width = int(arr.shape[3]);
    c.frames.data = std::move(arr.data);
  }
  return c;
}

Vec frame_mask(const std::vector<SegmentAnnotation>& segs, int num_frames) {
  Vec mask = Vec::Zero(num_frames);
  for (const auto& s : segs)
    for (int t = s.onset; t <= s.offset; ++t) mask[t] = 1.0;
  return mask;
}

Vec frame_mask(const ClipSample& clip) {
  return frame_mask(clip.segments, clip.num_frames());
}

Vec boundary_weights(const std::vector<SegmentAnnotation>& segs, int num_frames,
                     double w_boundary) {
  Vec w = Vec::Ones(num_frames);
  for (const auto& s : segs) {
    w[s.onset] = w_boundary;
    w[s.offset] = w_boundary;  // onset == offset weights the frame once
  }
  return w;
}

Vec boundary_weights(const ClipSample& clip, double w_boundary) {
  return boundary_weights(clip.segments, clip.num_frames(), w_boundary);
}

}  // namespace meldae
