#pragma once

#include <filesystem>
#include <string>

#include "meldae/data_model.hpp"
#include "meldae/rng.hpp"

namespace meldae {

struct SynthConfig {
  int n_clips = 400;
  int T = 64;
  int D_in = 32;
  int n_regions = 8;
  double me_probability = 0.24;
  int me_duration_min = 4;
  int me_duration_max = 10;
  double me_amplitude = 1.0;
  double speaking_fraction = 0.5;
  double speech_noise_amplitude = 4.0;
  double base_noise_std = 0.25;
  std::uint64_t seed = 42;
  // frame mode exercises the patch-encoder path (tiny moving-blob frames)
  bool frames_mode = false;
  int frame_size = 16;

  void validate() const;
};

// Additive components of one generated clip, exposed for inspection; the
// payload written to disk is their sum.
struct ClipComponents {
  Mat base_noise;  // T x D_in
  Mat speech;      // zero when the clip is a listening clip
  Mat me_signal;   // zero when the clip has no micro-expression
};

struct GeneratedClip {
  ClipRecord record;
  Mat payload;  // features (T x D_in) or flattened frames
  ClipComponents components;
};

// Deterministic per clip index: depends only on (cfg.seed, index).
GeneratedClip generate_clip(const SynthConfig& cfg, int index);

// Writes payloads + manifest.jsonl under out_dir; returns the loaded manifest.
DatasetManifest generate(const SynthConfig& cfg, const std::filesystem::path& out_dir);

struct SplitResult {
  DatasetManifest train;
  DatasetManifest eval;
  std::string warning;  // non-empty when stratification fell back
};

// Stratified by (has_me, state); deterministic given seed.
SplitResult split(const DatasetManifest& manifest, double train_fraction,
                  std::uint64_t seed);

}  // namespace meldae
