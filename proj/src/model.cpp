#include "meldae/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>

namespace meldae {

using ad::Var;
using json = nlohmann::ordered_json;

std::string to_string(EncoderKind k) {
  return k == EncoderKind::PassthroughFeatures ? "passthrough_features"
                                               : "tiny_patch_transformer";
}

EncoderKind encoder_kind_from_string(const std::string& s) {
  if (s == "passthrough_features") return EncoderKind::PassthroughFeatures;
  if (s == "tiny_patch_transformer") return EncoderKind::TinyPatchTransformer;
  throw ConfigError("unknown encoder kind: " + s);
}

void ModelConfig::validate() const {
  if (D < 1 || R < 1 || K < 1 || recurrent_hidden < 1 || attention_heads < 1)
    throw ConfigError("model dims must be >= 1");
  if (D % attention_heads != 0)
    throw ConfigError("D must be divisible by attention_heads");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout in [0,1)");
  if (encoder_kind == EncoderKind::PassthroughFeatures) {
    if (d_in < 1 || d_in % R != 0)
      throw ConfigError("d_in must be a positive multiple of R");
  } else {
    if (patch_size < 1) throw ConfigError("patch_size must be >= 1");
    if (region_grid < 1) throw ConfigError("region_grid must be >= 1");
  }
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[4] = {'M', 'E', 'L', 'C'};

Mat fan_in_uniform(int rows, int cols, Rng& rng, double fan_in) {
  double bound = 1.0 / std::sqrt(fan_in);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.uniform(-bound, bound);
  return m;
}

Mat gaussian(int rows, int cols, Rng& rng, double std) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.normal(0.0, std);
  return m;
}

}  // namespace

void Model::add_param(const std::string& name, int rows, int cols, bool backbone,
                      Rng& rng, double fan_in_override) {
  Parameter p;
  p.name = name;
  p.backbone = backbone;
  if (name.ends_with("bias") || name.ends_with(".b")) {
    p.value = Mat::Zero(rows, cols);
  } else if (name.ends_with("query_tokens") || name.ends_with("cls_token") ||
             name.ends_with("pos_emb")) {
    p.value = gaussian(rows, cols, rng, 0.02);
  } else {
    double fan_in = fan_in_override > 0 ? fan_in_override : double(rows);
    p.value = fan_in_uniform(rows, cols, rng, fan_in);
  }
  index_[name] = int(params_.size());
  params_.push_back(std::move(p));
}

Parameter& Model::param(const std::string& name) {
  return params_[index_.at(name)];
}

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng = Rng::substream(seed, 0x10de1ull);
  const int D = cfg_.D, H = cfg_.recurrent_hidden;

  if (cfg_.encoder_kind == EncoderKind::PassthroughFeatures) {
    add_param("encoder.cls_proj", cfg_.d_in, D, true, rng);
    add_param("encoder.cls_bias", 1, D, true, rng);
    int gd = cfg_.d_in / cfg_.R;
    for (int r = 0; r < cfg_.R; ++r) {
      add_param("encoder.region_proj." + std::to_string(r), gd, D, true, rng);
      add_param("encoder.region_bias." + std::to_string(r), 1, D, true, rng);
    }
  } else {
    const int patch_dim = cfg_.patch_size * cfg_.patch_size;  // single channel
    const int grid = cfg_.frame_size / cfg_.patch_size;
    const int n_patches = grid * grid;
    add_param("encoder.patch_proj", patch_dim, D, true, rng);
    add_param("encoder.patch_bias", 1, D, true, rng);
    add_param("encoder.cls_token", 1, D, true, rng);
    add_param("encoder.pos_emb", 1 + n_patches, D, true, rng);
    for (const char* w : {"wq", "wk", "wv", "wo"})
      add_param(std::string("encoder.attn.") + w, D, D, true, rng);
    for (const char* b : {"q_bias", "k_bias", "v_bias", "o_bias"})
      add_param(std::string("encoder.attn.") + b, 1, D, true, rng);
  }

  for (const char* dir : {"fwd", "bwd"}) {
    std::string pre = std::string("temporal.") + dir + ".";
    add_param(pre + "wx", D, 4 * H, false, rng);
    add_param(pre + "wh", H, 4 * H, false, rng, double(H));
    add_param(pre + "b", 1, 4 * H, false, rng);
    // standard forget-gate bias of 1 (gate order: i, f, g, o)
    param(pre + "b").value.block(0, H, 1, H).setOnes();
  }
  add_param("temporal.proj", 2 * H, D, false, rng);
  add_param("temporal.proj_bias", 1, D, false, rng);

  add_param("enhancer.query_tokens", cfg_.K, D, false, rng);
  for (const char* blk : {"token_attn", "frame_attn"}) {
    std::string pre = std::string("enhancer.") + blk + ".";
    for (const char* w : {"wq", "wk", "wv", "wo"}) add_param(pre + w, D, D, false, rng);
    for (const char* b : {"q_bias", "k_bias", "v_bias", "o_bias"})
      add_param(pre + b, 1, D, false, rng);
  }

  add_param("heads.me_w", 2 * D, 1, false, rng);
  add_param("heads.me_bias", 1, 1, false, rng);
  add_param("heads.state_w", 2 * D, 1, false, rng);
  add_param("heads.state_bias", 1, 1, false, rng);
  add_param("heads.loc_w", 2 * D, 1, false, rng);
  add_param("heads.loc_bias", 1, 1, false, rng);
}

long Model::param_count() const {
  long n = 0;
  for (const auto& p : params_) n += long(p.value.size());
  return n;
}

void Model::zero_grad() {
  for (auto& p : params_) p.grad.resize(0, 0);
}

// ---------------------------------------------------------------------------
// Forward pieces. Each stage works on tape Vars; parameter leaves are created
// once per forward and shared between stages.

struct Model::Tape {
  Model& model;
  std::map<std::string, Var> leaves;

  Var p(const std::string& name) {
    auto it = leaves.find(name);
    if (it != leaves.end()) return it->second;
    Parameter& par = model.param(name);
    Var v = ad::leaf(par.value, &par.grad);
    leaves.emplace(name, v);
    return v;
  }
};

namespace {

struct EncodeVars {
  Var cls;                  // T x D
  std::vector<Var> patches; // per region, T x D
};

Var affine(Model::Tape& tp, const Var& x, const std::string& w,
           const std::string& b) {
  return ad::add_rowvec(ad::matmul(x, tp.p(w)), tp.p(b));
}

// Multi-head attention; returns n x D. attn_out, when set, receives one
// softmax matrix per head.
Var mha(Model::Tape& tp, const std::string& prefix, const Var& q_in,
        const Var& kv_in, int heads, std::vector<Mat>* attn_out) {
  const int D = int(q_in.cols());
  const int dh = D / heads;
  Var q = affine(tp, q_in, prefix + ".wq", prefix + ".q_bias");
  Var k = affine(tp, kv_in, prefix + ".wk", prefix + ".k_bias");
  Var v = affine(tp, kv_in, prefix + ".wv", prefix + ".v_bias");
  std::vector<Var> head_outs;
  for (int h = 0; h < heads; ++h) {
    Var qh = ad::cols(q, h * dh, dh);
    Var kh = ad::cols(k, h * dh, dh);
    Var vh = ad::cols(v, h * dh, dh);
    Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), 1.0 / std::sqrt(dh));
    Var attn = ad::softmax_rows(scores);
    if (attn_out) attn_out->push_back(attn.value());
    head_outs.push_back(ad::matmul(attn, vh));
  }
  Var cat = head_outs[0];
  for (size_t h = 1; h < head_outs.size(); ++h) cat = ad::hcat(cat, head_outs[h]);
  return affine(tp, cat, prefix + ".wo", prefix + ".o_bias");
}

EncodeVars encode_passthrough(Model::Tape& tp, const ModelConfig& cfg,
                              const ClipSample& clip) {
  if (clip.kind != PayloadKind::Features)
    throw ShapeError("passthrough encoder needs feature payloads");
  if (int(clip.features.cols()) != cfg.d_in)
    throw ShapeError("feature width does not match configured d_in");
  // per-frame DC removal: global common-mode motion (head pose, talking)
  // carries no localization signal and would otherwise dominate the features
  Mat feats = clip.features;
  feats.colwise() -= feats.rowwise().mean().eval();
  Var x = ad::constant(feats);
  EncodeVars out;
  out.cls = affine(tp, x, "encoder.cls_proj", "encoder.cls_bias");
  const int gd = cfg.d_in / cfg.R;
  for (int r = 0; r < cfg.R; ++r) {
    Var xr = ad::cols(x, r * gd, gd);
    out.patches.push_back(affine(tp, xr, "encoder.region_proj." + std::to_string(r),
                                 "encoder.region_bias." + std::to_string(r)));
  }
  return out;
}

EncodeVars encode_frames(Model::Tape& tp, const ModelConfig& cfg,
                         const ClipSample& clip) {
  if (clip.kind != PayloadKind::Frames)
    throw ShapeError("patch encoder needs frame payloads");
  const FrameTensor& ft = clip.frames;
  if (ft.channels != 1 || ft.height != cfg.frame_size || ft.width != cfg.frame_size)
    throw ShapeError("frame payload does not match configured frame_size");
  const int ps = cfg.patch_size, grid = cfg.frame_size / ps;
  const int n_patches = grid * grid, patch_dim = ps * ps;
  const int T = ft.frames();

  std::vector<Var> cls_rows;
  std::vector<std::vector<Var>> patch_rows(n_patches);
  for (int t = 0; t < T; ++t) {
    Mat patches(n_patches, patch_dim);
    for (int py = 0; py < grid; ++py)
      for (int px = 0; px < grid; ++px)
        for (int y = 0; y < ps; ++y)
          for (int x = 0; x < ps; ++x)
            patches(py * grid + px, y * ps + x) =
                ft.data(t, (py * ps + y) * ft.width + (px * ps + x));
    Var tokens = ad::vcat(
        {tp.p("encoder.cls_token"),
         affine(tp, ad::constant(patches), "encoder.patch_proj",
                "encoder.patch_bias")});
    tokens = ad::add(tokens, tp.p("encoder.pos_emb"));
    Var attended =
        ad::add(tokens, mha(tp, "encoder.attn", tokens, tokens,
                            cfg.attention_heads, nullptr));
    cls_rows.push_back(ad::rows(attended, 0, 1));
    for (int r = 0; r < n_patches; ++r)
      patch_rows[r].push_back(ad::rows(attended, 1 + r, 1));
  }

  EncodeVars out;
  out.cls = ad::vcat(cls_rows);
  for (int r = 0; r < n_patches; ++r) out.patches.push_back(ad::vcat(patch_rows[r]));
  return out;
}

EncodeVars encode_vars(Model::Tape& tp, const ModelConfig& cfg,
                       const ClipSample& clip) {
  return cfg.encoder_kind == EncoderKind::PassthroughFeatures
             ? encode_passthrough(tp, cfg, clip)
             : encode_frames(tp, cfg, clip);
}

Var lstm_direction(Model::Tape& tp, const Var& x_seq, int H, const std::string& pre,
                   bool reverse) {
  const int T = int(x_seq.rows());
  Var wx = tp.p(pre + "wx"), wh = tp.p(pre + "wh"), b = tp.p(pre + "b");
  Var h = ad::constant(Mat::Zero(1, H));
  Var c = ad::constant(Mat::Zero(1, H));
  std::vector<Var> hs(T);
  for (int step = 0; step < T; ++step) {
    int t = reverse ? T - 1 - step : step;
    Var xt = ad::rows(x_seq, t, 1);
    Var pre_act =
        ad::add_rowvec(ad::add(ad::matmul(xt, wx), ad::matmul(h, wh)), b);
    Var i = ad::sigmoid(ad::cols(pre_act, 0, H));
    Var f = ad::sigmoid(ad::cols(pre_act, H, H));
    Var g = ad::tanh(ad::cols(pre_act, 2 * H, H));
    Var o = ad::sigmoid(ad::cols(pre_act, 3 * H, H));
    c = ad::add(ad::cmul(f, c), ad::cmul(i, g));
    h = ad::cmul(o, ad::tanh(c));
    hs[t] = h;
  }
  return ad::vcat(hs);
}

// Bi-LSTM over the cls sequence, both directions concatenated then projected
// back to width D.
Var temporal_vars(Model::Tape& tp, const ModelConfig& cfg, const Var& cls) {
  if (cfg.identity_temporal) return cls;
  const int H = cfg.recurrent_hidden;
  Var hf = lstm_direction(tp, cls, H, "temporal.fwd.", false);
  Var hb = lstm_direction(tp, cls, H, "temporal.bwd.", true);
  return affine(tp, ad::hcat(hf, hb), "temporal.proj", "temporal.proj_bias");
}

/// Region pooling for frame mode: average patch tokens over a region_grid x
// region_grid spatial grid when the patch grid divides evenly, else identity.
std::vector<Var> region_pool(const ModelConfig& cfg,
                             const std::vector<Var>& patches) {
  if (cfg.encoder_kind != EncoderKind::TinyPatchTransformer) return patches;
  const int grid = cfg.frame_size / cfg.patch_size;
  const int rg = cfg.region_grid;
  if (rg >= grid || grid % rg != 0) return patches;
  const int block = grid / rg;
  std::vector<Var> pooled;
  for (int ry = 0; ry < rg; ++ry)
    for (int rx = 0; rx < rg; ++rx) {
      Var acc;
      for (int by = 0; by < block; ++by)
        for (int bx = 0; bx < block; ++bx) {
          const Var& p = patches[(ry * block + by) * grid + (rx * block + bx)];
          acc = acc.valid() ? ad::add(acc, p) : p;
        }
      pooled.push_back(ad::scale(acc, 1.0 / double(block * block)));
    }
  return pooled;
}

struct EnhanceVars {
  Var tokens, frames, fused;
  std::vector<Mat> attn_token_rows, attn_frame_rows;
};

EnhanceVars enhance_vars(Model::Tape& tp, const ModelConfig& cfg,
                         const Var& f_global, const std::vector<Var>& regional) {
  EnhanceVars out;
  Var keys = ad::vcat(regional);  // (R*T) x D
  Var queries = tp.p("enhancer.query_tokens");
  out.tokens = mha(tp, "enhancer.token_attn", queries, keys, cfg.attention_heads,
                   &out.attn_token_rows);
  out.frames = mha(tp, "enhancer.frame_attn", f_global, out.tokens,
                   cfg.attention_heads, &out.attn_frame_rows);
  out.fused = ad::hcat(out.frames, f_global);
  return out;
}

struct HeadVars {
  Var p_me, p_state, s_loc;
};

HeadVars heads_vars(Model::Tape& tp, const ModelConfig& cfg, const Var& fused,
                    Rng* dropout_rng) {
  Var f = fused;
  if (dropout_rng) f = ad::dropout(f, cfg.dropout, *dropout_rng);
  Var pooled = ad::colmean(f);
  HeadVars out;
  out.p_me = ad::sigmoid(affine(tp, pooled, "heads.me_w", "heads.me_bias"));
  out.p_state = ad::sigmoid(affine(tp, pooled, "heads.state_w", "heads.state_bias"));
  out.s_loc = ad::sigmoid(affine(tp, f, "heads.loc_w", "heads.loc_bias"));
  return out;
}

void check_finite(const Mat& m, const char* what) {
  if (!m.allFinite()) throw DataError(std::string("non-finite values in ") + what);
}

}  // namespace

ForwardResult Model::forward(const ClipSample& clip, Rng* dropout_rng) {
  Tape tp{*this, {}};
  EncodeVars enc = encode_vars(tp, cfg_, clip);
  check_finite(enc.cls.value(), "encoder cls sequence");
  Var f_global = temporal_vars(tp, cfg_, enc.cls);
  std::vector<Var> regional = region_pool(cfg_, enc.patches);
  EnhanceVars enh = enhance_vars(tp, cfg_, f_global, regional);
  HeadVars hv = heads_vars(tp, cfg_, enh.fused, dropout_rng);

  ForwardResult res;
  res.p_me = hv.p_me;
  res.p_state = hv.p_state;
  res.s_loc = hv.s_loc;
  res.encoder.cls_sequence = enc.cls.value();
  for (auto& p : enc.patches) res.encoder.patch_sequence.push_back(p.value());
  res.bundle.f_global = f_global.value();
  for (auto& p : regional) res.bundle.f_regional.push_back(p.value());
  res.enhanced.query_tokens = param("enhancer.query_tokens").value;
  res.enhanced.f_enhanced_tokens = enh.tokens.value();
  res.enhanced.f_enhanced_frames = enh.frames.value();
  res.enhanced.fused = enh.fused.value();
  res.enhanced.attn_token_rows = std::move(enh.attn_token_rows);
  res.enhanced.attn_frame_rows = std::move(enh.attn_frame_rows);
  check_finite(res.enhanced.fused, "fused features");
  return res;
}

ModelOutput ForwardResult::output() const {
  ModelOutput out;
  out.p_me = p_me.scalar();
  out.p_state = p_state.scalar();
  out.s_loc = s_loc.value().col(0);
  return out;
}

ModelOutput Model::predict(const ClipSample& clip) {
  return forward(clip).output();
}

EncoderOutput Model::encode(const ClipSample& clip) {
  Tape tp{*this, {}};
  EncodeVars enc = encode_vars(tp, cfg_, clip);
  EncoderOutput out;
  out.cls_sequence = enc.cls.value();
  for (auto& p : enc.patches) out.patch_sequence.push_back(p.value());
  return out;
}

FeatureBundle Model::temporal_context(const EncoderOutput& enc) {
  Tape tp{*this, {}};
  Var cls = ad::constant(enc.cls_sequence);
  FeatureBundle out;
  out.f_global = temporal_vars(tp, cfg_, cls).value();
  std::vector<Var> patches;
  for (auto& p : enc.patch_sequence) patches.push_back(ad::constant(p));
  for (auto& p : region_pool(cfg_, patches)) out.f_regional.push_back(p.value());
  return out;
}

EnhancedFeatures Model::enhance(const FeatureBundle& bundle) {
  Tape tp{*this, {}};
  std::vector<Var> regional;
  for (auto& p : bundle.f_regional) regional.push_back(ad::constant(p));
  EnhanceVars enh =
      enhance_vars(tp, cfg_, ad::constant(bundle.f_global), regional);
  EnhancedFeatures out;
  out.query_tokens = param("enhancer.query_tokens").value;
  out.f_enhanced_tokens = enh.tokens.value();
  out.f_enhanced_frames = enh.frames.value();
  out.fused = enh.fused.value();
  out.attn_token_rows = std::move(enh.attn_token_rows);
  out.attn_frame_rows = std::move(enh.attn_frame_rows);
  return out;
}

ModelOutput Model::heads(const EnhancedFeatures& enh) {
  Tape tp{*this, {}};
  HeadVars hv = heads_vars(tp, cfg_, ad::constant(enh.fused), nullptr);
  ModelOutput out;
  out.p_me = hv.p_me.scalar();
  out.p_state = hv.p_state.scalar();
  out.s_loc = hv.s_loc.value().col(0);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic, version, config JSON, named parameter arrays.

std::string model_config_json(const ModelConfig& cfg) {
  json j{{"encoder_kind", to_string(cfg.encoder_kind)},
         {"d_in", cfg.d_in},
         {"D", cfg.D},
         {"R", cfg.R},
         {"K", cfg.K},
         {"recurrent_hidden", cfg.recurrent_hidden},
         {"attention_heads", cfg.attention_heads},
         {"dropout", cfg.dropout},
         {"patch_size", cfg.patch_size},
         {"region_grid", cfg.region_grid},
         {"frame_size", cfg.frame_size},
         {"identity_temporal", cfg.identity_temporal}};
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("model config: ") + e.what());
  }
  ModelConfig cfg;
  if (j.contains("encoder_kind"))
    cfg.encoder_kind = encoder_kind_from_string(j["encoder_kind"].get<std::string>());
  if (j.contains("d_in")) cfg.d_in = j["d_in"].get<int>();
  if (j.contains("D")) cfg.D = j["D"].get<int>();
  if (j.contains("R")) cfg.R = j["R"].get<int>();
  if (j.contains("K")) cfg.K = j["K"].get<int>();
  if (j.contains("recurrent_hidden"))
    cfg.recurrent_hidden = j["recurrent_hidden"].get<int>();
  if (j.contains("attention_heads"))
    cfg.attention_heads = j["attention_heads"].get<int>();
  if (j.contains("dropout")) cfg.dropout = j["dropout"].get<double>();
  if (j.contains("patch_size")) cfg.patch_size = j["patch_size"].get<int>();
  if (j.contains("region_grid")) cfg.region_grid = j["region_grid"].get<int>();
  if (j.contains("frame_size")) cfg.frame_size = j["frame_size"].get<int>();
  if (j.contains("identity_temporal"))
    cfg.identity_temporal = j["identity_temporal"].get<bool>();
  return cfg;
}

void Model::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint: " + path.string());
  os.write(kCkptMagic, 4);
  std::uint32_t version = 1;
  os.write(reinterpret_cast<const char*>(&version), 4);
  std::string cfg = model_config_json(cfg_);
  std::uint32_t len = std::uint32_t(cfg.size());
  os.write(reinterpret_cast<const char*>(&len), 4);
  os.write(cfg.data(), len);
  std::uint32_t n = std::uint32_t(params_.size());
  os.write(reinterpret_cast<const char*>(&n), 4);
  for (const auto& p : params_) {
    std::uint16_t nl = std::uint16_t(p.name.size());
    os.write(reinterpret_cast<const char*>(&nl), 2);
    os.write(p.name.data(), nl);
    std::uint32_t rows = std::uint32_t(p.value.rows());
    std::uint32_t cols = std::uint32_t(p.value.cols());
    os.write(reinterpret_cast<const char*>(&rows), 4);
    os.write(reinterpret_cast<const char*>(&cols), 4);
    for (Eigen::Index r = 0; r < p.value.rows(); ++r)
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
        double v = p.value(r, c);
        os.write(reinterpret_cast<const char*>(&v), 8);
      }
  }
  if (!os) throw IoError("checkpoint write failed: " + path.string());
}

Model Model::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw ParseError("not a checkpoint file: " + path.string());
  std::uint32_t version = 0, len = 0, n = 0;
  is.read(reinterpret_cast<char*>(&version), 4);
  if (version != 1) throw SchemaError("unsupported checkpoint version");
  is.read(reinterpret_cast<char*>(&len), 4);
  std::string cfg_text(len, '\0');
  is.read(cfg_text.data(), len);
  Model m(model_config_from_json(cfg_text), 0);
  is.read(reinterpret_cast<char*>(&n), 4);
  if (n != m.params_.size())
    throw SchemaError("checkpoint parameter count mismatch");
  for (std::uint32_t i = 0; i < n; ++i) {
    std::uint16_t nl = 0;
    is.read(reinterpret_cast<char*>(&nl), 2);
    std::string name(nl, '\0');
    is.read(name.data(), nl);
    std::uint32_t rows = 0, cols = 0;
    is.read(reinterpret_cast<char*>(&rows), 4);
    is.read(reinterpret_cast<char*>(&cols), 4);
    auto it = m.index_.find(name);
    if (it == m.index_.end())
      throw SchemaError("unknown parameter in checkpoint: " + name);
    Parameter& p = m.params_[it->second];
    if (int(rows) != p.value.rows() || int(cols) != p.value.cols())
      throw SchemaError("parameter shape mismatch: " + name);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c) {
        double v = 0;
        is.read(reinterpret_cast<char*>(&v), 8);
        p.value(r, c) = v;
      }
  }
  if (!is) throw ParseError("truncated checkpoint: " + path.string());
  return m;
}

}  // namespace meldae
