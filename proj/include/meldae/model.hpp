#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "meldae/autograd.hpp"
#include "meldae/data_model.hpp"
#include "meldae/rng.hpp"

namespace meldae {

enum class EncoderKind { PassthroughFeatures, TinyPatchTransformer };

std::string to_string(EncoderKind k);
EncoderKind encoder_kind_from_string(const std::string& s);

struct ModelConfig {
  EncoderKind encoder_kind = EncoderKind::PassthroughFeatures;
  int d_in = 32;   // feature width (passthrough) / C*H*W per patch source
  int D = 16;      // embedding width
  int R = 8;       // regions per frame (passthrough mode)
  int K = 4;       // query tokens
  int recurrent_hidden = 16;
  int attention_heads = 2;
  double dropout = 0.1;
  int patch_size = 4;     // frame mode
  int frame_size = 16;    // frame mode: square input frames
  int region_grid = 3;    // frame mode: pool patches to region_grid^2 when divisible
  bool identity_temporal = false;  // test hook: skip the recurrent layer

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct EncoderOutput {
  Mat cls_sequence;                // T x D
  std::vector<Mat> patch_sequence; // R mats of T x D
};

struct FeatureBundle {
  Mat f_global;                // T x D
  std::vector<Mat> f_regional; // R mats of T x D
};

struct EnhancedFeatures {
  Mat query_tokens;       // K x D (current parameter values)
  Mat f_enhanced_tokens;  // K x D
  Mat f_enhanced_frames;  // T x D
  Mat fused;              // T x 2D
  std::vector<Mat> attn_token_rows;  // per head, K x (T*R) softmax rows
  std::vector<Mat> attn_frame_rows;  // per head, T x K softmax rows
};

struct ModelOutput {
  double p_me = 0, p_state = 0;
  Vec s_loc;
};

struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
  bool backbone = false;  // encoder group (differential learning rate)
};

// Differentiable forward result; keeps the tape alive for backward().
struct ForwardResult {
  ad::Var p_me, p_state, s_loc;  // post-sigmoid
  EncoderOutput encoder;
  FeatureBundle bundle;
  EnhancedFeatures enhanced;
  ModelOutput output() const;
};

class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  long param_count() const;
  void zero_grad();

  // Full differentiable pass. dropout_rng enables dropout (training mode).
  ForwardResult forward(const ClipSample& clip, Rng* dropout_rng = nullptr);
  ModelOutput predict(const ClipSample& clip);

  // Stage-level entry points (inference values only), for inspection/tests.
  EncoderOutput encode(const ClipSample& clip);
  FeatureBundle temporal_context(const EncoderOutput& enc);
  EnhancedFeatures enhance(const FeatureBundle& bundle);
  ModelOutput heads(const EnhancedFeatures& enh);

  void save(const std::filesystem::path& path) const;
  static Model load(const std::filesystem::path& path);

  struct Tape;  // per-forward parameter leaves

 private:
  Parameter& param(const std::string& name);
  void add_param(const std::string& name, int rows, int cols, bool backbone,
                 Rng& rng, double fan_in_override = -1.0);

  ModelConfig cfg_;
  std::vector<Parameter> params_;
  std::map<std::string, int> index_;
};

std::string model_config_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace meldae
