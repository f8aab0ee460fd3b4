#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "meldae/losses.hpp"
#include "meldae/model.hpp"
#include "meldae/rng.hpp"

using namespace meldae;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.d_in = 16;
  cfg.D = 8;
  cfg.R = 4;
  cfg.K = 3;
  cfg.recurrent_hidden = 6;
  cfg.attention_heads = 2;
  cfg.dropout = 0.0;
  return cfg;
}

ClipSample random_clip(int T, int d_in, std::uint64_t seed) {
  ClipSample c;
  c.clip_id = "t";
  c.features = Mat(T, d_in);
  Rng rng(seed);
  for (Eigen::Index i = 0; i < c.features.size(); ++i)
    c.features(i) = rng.normal();
  return c;
}

const Mat& param_value(const Model& m, const std::string& name) {
  for (const auto& p : m.params())
    if (p.name == name) return p.value;
  throw std::logic_error("no param " + name);
}

}  // namespace

TEST_CASE("forward shape contracts across sequence lengths") {
  ModelConfig cfg = tiny_cfg();
  Model model(cfg, 1);
  for (int T : {2, 17, 64}) {
    ClipSample clip = random_clip(T, cfg.d_in, 100 + T);
    auto res = model.forward(clip);
    CHECK(res.encoder.cls_sequence.rows() == T);
    CHECK(res.encoder.cls_sequence.cols() == cfg.D);
    REQUIRE(int(res.encoder.patch_sequence.size()) == cfg.R);
    for (const auto& p : res.encoder.patch_sequence) {
      CHECK(p.rows() == T);
      CHECK(p.cols() == cfg.D);
    }
    CHECK(res.bundle.f_global.rows() == T);
    CHECK(int(res.bundle.f_regional.size()) == cfg.R);
    CHECK(res.enhanced.f_enhanced_tokens.rows() == cfg.K);
    CHECK(res.enhanced.f_enhanced_tokens.cols() == cfg.D);
    CHECK(res.enhanced.f_enhanced_frames.rows() == T);
    CHECK(res.enhanced.fused.rows() == T);
    CHECK(res.enhanced.fused.cols() == 2 * cfg.D);
    ModelOutput out = res.output();
    CHECK(out.s_loc.size() == T);
    CHECK(out.p_me >= 0.0);
    CHECK(out.p_me <= 1.0);
    CHECK(out.p_state >= 0.0);
    CHECK(out.p_state <= 1.0);
    CHECK(out.s_loc.minCoeff() >= 0.0);
    CHECK(out.s_loc.maxCoeff() <= 1.0);
  }
}

TEST_CASE("passthrough regional features are plain affine projections") {
  ModelConfig cfg = tiny_cfg();
  Model model(cfg, 2);
  ClipSample clip = random_clip(9, cfg.d_in, 5);
  EncoderOutput enc = model.encode(clip);
  // the encoder sees per-frame mean-centered features (common-mode removal)
  Mat centered = clip.features;
  centered.colwise() -= centered.rowwise().mean().eval();
  const int gd = cfg.d_in / cfg.R;
  for (int r = 0; r < cfg.R; ++r) {
    const Mat& w = param_value(model, "encoder.region_proj." + std::to_string(r));
    const Mat& b = param_value(model, "encoder.region_bias." + std::to_string(r));
    Mat expect = centered.middleCols(r * gd, gd) * w;
    expect.rowwise() += b.row(0);
    CHECK((enc.patch_sequence[r] - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
  // regional stream passes through the temporal stage untouched
  FeatureBundle bundle = model.temporal_context(enc);
  for (int r = 0; r < cfg.R; ++r)
    CHECK(bundle.f_regional[r] == enc.patch_sequence[r]);
}

TEST_CASE("patch encoder produces one token stream per patch") {
  ModelConfig cfg = tiny_cfg();
  cfg.encoder_kind = EncoderKind::TinyPatchTransformer;
  cfg.d_in = 16;  // 4x4 patches of 1-channel 16x16 frames
  Model model(cfg, 3);
  ClipSample clip;
  clip.kind = PayloadKind::Frames;
  clip.frames.channels = 1;
  clip.frames.height = 16;
  clip.frames.width = 16;
  clip.frames.data = Mat::Zero(5, 256);
  Rng rng(6);
  for (Eigen::Index i = 0; i < clip.frames.data.size(); ++i)
    clip.frames.data(i) = rng.normal();
  EncoderOutput enc = model.encode(clip);
  CHECK(enc.cls_sequence.rows() == 5);
  CHECK(int(enc.patch_sequence.size()) == 16);  // (16/4)^2
  auto res = model.forward(clip);
  CHECK(res.output().s_loc.size() == 5);
}

TEST_CASE("temporal context is bidirectional") {
  ModelConfig cfg = tiny_cfg();
  Model model(cfg, 4);
  ClipSample clip = random_clip(12, cfg.d_in, 7);
  Mat base = model.temporal_context(model.encode(clip)).f_global;
  clip.features(11, 3) += 1.0;  // disturb a single entry of the final frame
  Mat moved = model.temporal_context(model.encode(clip)).f_global;
  // the backward pass must carry the change all the way to frame 0
  CHECK((moved.row(0) - base.row(0)).cwiseAbs().maxCoeff() > 1e-8);
}

TEST_CASE("attention rows are probability distributions") {
  ModelConfig cfg = tiny_cfg();
  Model model(cfg, 5);
  ClipSample clip = random_clip(11, cfg.d_in, 8);
  auto res = model.forward(clip);
  REQUIRE(int(res.enhanced.attn_token_rows.size()) == cfg.attention_heads);
  REQUIRE(int(res.enhanced.attn_frame_rows.size()) == cfg.attention_heads);
  for (const Mat& a : res.enhanced.attn_token_rows) {
    CHECK(a.rows() == cfg.K);
    CHECK(a.cols() == 11 * cfg.R);
    CHECK(a.minCoeff() >= 0.0);
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      CHECK(a.row(i).sum() == doctest::Approx(1.0).epsilon(1e-5));
  }
  for (const Mat& a : res.enhanced.attn_frame_rows) {
    CHECK(a.rows() == 11);
    CHECK(a.cols() == cfg.K);
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      CHECK(a.row(i).sum() == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("a single query token absorbs all frame attention") {
  ModelConfig cfg = tiny_cfg();
  cfg.K = 1;
  Model model(cfg, 6);
  auto res = model.forward(random_clip(7, cfg.d_in, 9));
  for (const Mat& a : res.enhanced.attn_frame_rows) {
    REQUIRE(a.cols() == 1);
    CHECK((a.array() - 1.0).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("clip-level heads ignore frame order when the recurrence is disabled") {
  ModelConfig cfg = tiny_cfg();
  cfg.identity_temporal = true;
  Model model(cfg, 7);
  ClipSample clip = random_clip(10, cfg.d_in, 10);
  ModelOutput a = model.predict(clip);
  ClipSample rev = clip;
  for (int t = 0; t < 10; ++t) rev.features.row(t) = clip.features.row(9 - t);
  ModelOutput b = model.predict(rev);
  CHECK(a.p_me == doctest::Approx(b.p_me).epsilon(1e-10));
  CHECK(a.p_state == doctest::Approx(b.p_state).epsilon(1e-10));
  for (int t = 0; t < 10; ++t)
    CHECK(a.s_loc[t] == doctest::Approx(b.s_loc[9 - t]).epsilon(1e-10));
}

TEST_CASE("repeated inference is bit-identical") {
  ModelConfig cfg = tiny_cfg();
  Model model(cfg, 8);
  ClipSample clip = random_clip(13, cfg.d_in, 11);
  ModelOutput a = model.predict(clip);
  ModelOutput b = model.predict(clip);
  CHECK(a.p_me == b.p_me);
  CHECK(a.p_state == b.p_state);
  CHECK(a.s_loc == b.s_loc);
}

TEST_CASE("the training loss reaches every parameter") {
  ModelConfig cfg = tiny_cfg();
  Model model(cfg, 9);
  ClipSample clip = random_clip(14, cfg.d_in, 12);
  clip.has_me = true;
  clip.segments = {{3, 8, ConversationalState::Speaking}};
  clip.state = ConversationalState::Speaking;

  LossConfig lc;
  ClipTargets targets;
  targets.has_me = true;
  targets.is_speaking = true;
  targets.frame_mask = frame_mask(clip);
  targets.boundary_weights = boundary_weights(clip, lc.w_boundary);

  model.zero_grad();
  auto res = model.forward(clip);
  LossTerms terms = total_loss(res.p_me, res.p_state, res.s_loc, targets, lc);
  ad::backward(terms.total);

  bool saw_backbone = false, saw_fresh = false;
  for (const auto& p : model.params()) {
    INFO("param ", p.name);
    CHECK(p.grad.cwiseAbs().maxCoeff() > 0.0);
    (p.backbone ? saw_backbone : saw_fresh) = true;
  }
  CHECK(saw_backbone);
  CHECK(saw_fresh);
}

TEST_CASE("parameter budget stays small") {
  ModelConfig cfg;  // defaults
  Model model(cfg, 10);
  CHECK(model.param_count() < 2'000'000);
  CHECK(model.param_count() > 0);
}

TEST_CASE("checkpoints round-trip exactly") {
  auto dir = fs::temp_directory_path() / "meldae_ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  ModelConfig cfg = tiny_cfg();
  Model model(cfg, 11);
  ClipSample clip = random_clip(9, cfg.d_in, 13);
  ModelOutput before = model.predict(clip);
  model.save(dir / "m.ckpt");
  Model loaded = Model::load(dir / "m.ckpt");
  CHECK(loaded.config() == cfg);
  ModelOutput after = loaded.predict(clip);
  CHECK(before.p_me == after.p_me);
  CHECK(before.p_state == after.p_state);
  CHECK(before.s_loc == after.s_loc);
}

TEST_CASE("corrupt checkpoints are rejected") {
  auto dir = fs::temp_directory_path() / "meldae_ckpt_bad";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream os(dir / "junk.ckpt", std::ios::binary);
    os << "NOTAMODELFILE";
  }
  CHECK_THROWS_AS(Model::load(dir / "junk.ckpt"), ParseError);
  CHECK_THROWS_AS(Model::load(dir / "absent.ckpt"), IoError);
}

TEST_CASE("shape and config validation") {
  ModelConfig cfg = tiny_cfg();
  Model model(cfg, 12);
  SUBCASE("wrong feature width") {
    CHECK_THROWS_AS(model.predict(random_clip(5, cfg.d_in + 1, 1)), ShapeError);
  }
  SUBCASE("frames fed to the feature encoder") {
    ClipSample clip;
    clip.kind = PayloadKind::Frames;
    clip.frames.channels = 1;
    clip.frames.height = 16;
    clip.frames.width = 16;
    clip.frames.data = Mat::Zero(4, 256);
    CHECK_THROWS_AS(model.predict(clip), ShapeError);
  }
  SUBCASE("regions must divide the feature width") {
    ModelConfig bad = tiny_cfg();
    bad.R = 5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
  SUBCASE("heads must divide the embedding width") {
    ModelConfig bad = tiny_cfg();
    bad.attention_heads = 3;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
}

TEST_CASE("model config survives its JSON form") {
  ModelConfig cfg = tiny_cfg();
  cfg.encoder_kind = EncoderKind::TinyPatchTransformer;
  cfg.dropout = 0.25;
  cfg.identity_temporal = true;
  ModelConfig back = model_config_from_json(model_config_json(cfg));
  CHECK(back == cfg);
}
