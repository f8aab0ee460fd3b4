#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "meldae/errors.hpp"

namespace meldae {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

enum class ConversationalState { Speaking, Listening };

std::string to_string(ConversationalState s);
ConversationalState state_from_string(const std::string& s);

struct SegmentAnnotation {
  int onset = 0;   // 0-based
  int offset = 0;  // inclusive
  ConversationalState state = ConversationalState::Listening;

  int length() const { return offset - onset + 1; }
  bool operator==(const SegmentAnnotation&) const = default;
};

enum class PayloadKind { Frames, Features };

// Raw frames, stored row t = flattened C*H*W frame.
struct FrameTensor {
  int channels = 0, height = 0, width = 0;
  Mat data;  // T x (C*H*W)
  int frames() const { return int(data.rows()); }
};

// One clip with labels. Payload is features (T x D_in) or raw frames.
struct ClipSample {
  std::string clip_id;
  PayloadKind kind = PayloadKind::Features;
  Mat features;              // valid when kind == Features
  FrameTensor frames;        // valid when kind == Frames
  double fps = 30.0;
  bool has_me = false;
  ConversationalState state = ConversationalState::Listening;
  std::vector<SegmentAnnotation> segments;

  int num_frames() const {
    return kind == PayloadKind::Features ? int(features.rows()) : frames.frames();
  }
};

struct ClipRecord {
  std::string clip_id;
  std::string payload;  // path relative to the manifest
  PayloadKind kind = PayloadKind::Features;
  double fps = 30.0;
  bool has_me = false;
  ConversationalState state = ConversationalState::Listening;
  std::vector<SegmentAnnotation> segments;
  int num_frames = 0;  // read from the payload header at load time
};

struct DatasetManifest {
  static constexpr int kSchemaVersion = 1;
  int version = kSchemaVersion;
  std::filesystem::path dir;  // directory the payload paths resolve against
  std::vector<ClipRecord> clips;

  const ClipRecord* find(const std::string& clip_id) const;
};

// Line-oriented manifest: header line with the schema version, then one JSON
// record per clip. Validates all clip/segment invariants (reading only the
// payload headers for frame counts).
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);

// Loads the payload for one record into a full ClipSample.
ClipSample load_clip(const DatasetManifest& m, const ClipRecord& rec);

// Packed float32 array file with a self-describing header.
void write_array(const std::filesystem::path& path, const Mat& data,
                 const std::vector<std::uint32_t>& logical_shape);
struct ArrayFile {
  std::vector<std::uint32_t> shape;
  Mat data;  // shape[0] x prod(shape[1:])
};
ArrayFile read_array(const std::filesystem::path& path);
std::vector<std::uint32_t> read_array_shape(const std::filesystem::path& path);

// Validates segment invariants against a frame count; throws ValidationError.
void validate_segments(const std::vector<SegmentAnnotation>& segs, int num_frames,
                       const std::string& clip_id);

// mask[t] = 1 iff frame t lies inside an annotated segment (inclusive).
Vec frame_mask(const ClipSample& clip);
Vec frame_mask(const std::vector<SegmentAnnotation>& segs, int num_frames);

// weight[t] = w_boundary on onset/offset frames, else 1.
Vec boundary_weights(const ClipSample& clip, double w_boundary);
Vec boundary_weights(const std::vector<SegmentAnnotation>& segs, int num_frames,
                     double w_boundary);

}  // namespace meldae
