#include "meldae/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <sstream>

namespace meldae {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  if (optimizer.kind != "adamw") throw ConfigError("optimizer.kind must be adamw");
  if (!(optimizer.lr_backbone > 0 && optimizer.lr_new > 0))
    throw ConfigError("learning rates must be > 0");
  if (optimizer.weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  if (schedule.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (schedule.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (data.manifest.empty() && !data.synth)
    throw ConfigError("data: need either manifest or synth");
  if (!(data.train_fraction > 0 && data.train_fraction < 1))
    throw ConfigError("train_fraction must be in (0,1)");
}

// ---------------------------------------------------------------------------
// Config file (JSON mirroring RunConfig field names)

namespace {

json synth_to_json(const SynthConfig& s) {
  return json{{"n_clips", s.n_clips},
              {"T", s.T},
              {"D_in", s.D_in},
              {"n_regions", s.n_regions},
              {"me_probability", s.me_probability},
              {"me_duration_range", {s.me_duration_min, s.me_duration_max}},
              {"me_amplitude", s.me_amplitude},
              {"speaking_fraction", s.speaking_fraction},
              {"speech_noise_amplitude", s.speech_noise_amplitude},
              {"base_noise_std", s.base_noise_std},
              {"seed", s.seed},
              {"frames_mode", s.frames_mode},
              {"frame_size", s.frame_size}};
}

SynthConfig synth_from_json(const json& j) {
  SynthConfig s;
  if (j.contains("n_clips")) s.n_clips = j["n_clips"].get<int>();
  if (j.contains("T")) s.T = j["T"].get<int>();
  if (j.contains("D_in")) s.D_in = j["D_in"].get<int>();
  if (j.contains("n_regions")) s.n_regions = j["n_regions"].get<int>();
  if (j.contains("me_probability"))
    s.me_probability = j["me_probability"].get<double>();
  if (j.contains("me_duration_range")) {
    s.me_duration_min = j["me_duration_range"][0].get<int>();
    s.me_duration_max = j["me_duration_range"][1].get<int>();
  }
  if (j.contains("me_amplitude")) s.me_amplitude = j["me_amplitude"].get<double>();
  if (j.contains("speaking_fraction"))
    s.speaking_fraction = j["speaking_fraction"].get<double>();
  if (j.contains("speech_noise_amplitude"))
    s.speech_noise_amplitude = j["speech_noise_amplitude"].get<double>();
  if (j.contains("base_noise_std"))
    s.base_noise_std = j["base_noise_std"].get<double>();
  if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("frames_mode")) s.frames_mode = j["frames_mode"].get<bool>();
  if (j.contains("frame_size")) s.frame_size = j["frame_size"].get<int>();
  return s;
}

json loss_to_json(const LossConfig& l) {
  return json{{"w1", l.w1},
              {"w2", l.w2},
              {"w3", l.w3},
              {"lambda", l.lambda},
              {"w_boundary", l.w_boundary},
              {"focal_alpha", l.focal_alpha},
              {"focal_gamma", l.focal_gamma},
              {"tversky_alpha", l.tversky_alpha},
              {"tversky_beta", l.tversky_beta},
              {"tversky_gamma", l.tversky_gamma},
              {"smooth", l.smooth},
              {"locator_loss_kind", to_string(l.locator_loss_kind)}};
}

LossConfig loss_from_json(const json& j) {
  LossConfig l;
  auto get = [&](const char* k, double& dst) {
    if (j.contains(k)) dst = j[k].get<double>();
  };
  get("w1", l.w1);
  get("w2", l.w2);
  get("w3", l.w3);
  get("lambda", l.lambda);
  get("w_boundary", l.w_boundary);
  get("focal_alpha", l.focal_alpha);
  get("focal_gamma", l.focal_gamma);
  get("tversky_alpha", l.tversky_alpha);
  get("tversky_beta", l.tversky_beta);
  get("tversky_gamma", l.tversky_gamma);
  get("smooth", l.smooth);
  if (j.contains("locator_loss_kind"))
    l.locator_loss_kind =
        locator_loss_kind_from_string(j["locator_loss_kind"].get<std::string>());
  return l;
}

}  // namespace

RunConfig load_run_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ParseError(std::string("run config: ") + e.what());
  }
  RunConfig cfg;
  try {
    if (j.contains("model")) cfg.model = model_config_from_json(j["model"].dump());
    if (j.contains("loss")) cfg.loss = loss_from_json(j["loss"]);
    if (j.contains("data")) {
      const auto& d = j["data"];
      if (d.contains("manifest")) cfg.data.manifest = d["manifest"].get<std::string>();
      if (d.contains("synth")) cfg.data.synth = synth_from_json(d["synth"]);
      if (d.contains("train_fraction"))
        cfg.data.train_fraction = d["train_fraction"].get<double>();
      if (d.contains("split_seed"))
        cfg.data.split_seed = d["split_seed"].get<std::uint64_t>();
    }
    if (j.contains("optimizer")) {
      const auto& o = j["optimizer"];
      if (o.contains("kind")) cfg.optimizer.kind = o["kind"].get<std::string>();
      if (o.contains("lr_backbone"))
        cfg.optimizer.lr_backbone = o["lr_backbone"].get<double>();
      if (o.contains("lr_new")) cfg.optimizer.lr_new = o["lr_new"].get<double>();
      if (o.contains("weight_decay"))
        cfg.optimizer.weight_decay = o["weight_decay"].get<double>();
    }
    if (j.contains("schedule")) {
      const auto& s = j["schedule"];
      if (s.contains("epochs")) cfg.schedule.epochs = s["epochs"].get<int>();
      if (s.contains("batch_size"))
        cfg.schedule.batch_size = s["batch_size"].get<int>();
      if (s.contains("seed")) cfg.schedule.seed = s["seed"].get<std::uint64_t>();
      if (s.contains("grad_clip_norm"))
        cfg.schedule.grad_clip_norm = s["grad_clip_norm"].get<double>();
    }
    if (j.contains("eval")) {
      const auto& e = j["eval"];
      if (e.contains("theta")) cfg.eval.theta = e["theta"].get<double>();
      if (e.contains("threshold")) cfg.eval.threshold = e["threshold"].get<double>();
      if (e.contains("min_duration"))
        cfg.eval.min_duration = e["min_duration"].get<int>();
      if (e.contains("merge_gap")) cfg.eval.merge_gap = e["merge_gap"].get<int>();
    }
    if (j.contains("output_dir")) cfg.output_dir = j["output_dir"].get<std::string>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("run config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

void save_run_config(const RunConfig& cfg, const fs::path& path) {
  json j{{"model", json::parse(model_config_json(cfg.model))},
         {"loss", loss_to_json(cfg.loss)},
         {"data",
          json{{"manifest", cfg.data.manifest},
               {"train_fraction", cfg.data.train_fraction},
               {"split_seed", cfg.data.split_seed}}},
         {"optimizer",
          json{{"kind", cfg.optimizer.kind},
               {"lr_backbone", cfg.optimizer.lr_backbone},
               {"lr_new", cfg.optimizer.lr_new},
               {"weight_decay", cfg.optimizer.weight_decay}}},
         {"schedule",
          json{{"epochs", cfg.schedule.epochs},
               {"batch_size", cfg.schedule.batch_size},
               {"seed", cfg.schedule.seed},
               {"grad_clip_norm", cfg.schedule.grad_clip_norm}}},
         {"eval",
          json{{"theta", cfg.eval.theta},
               {"threshold", cfg.eval.threshold},
               {"min_duration", cfg.eval.min_duration},
               {"merge_gap", cfg.eval.merge_gap}}},
         {"output_dir", cfg.output_dir}};
  if (cfg.data.synth) j["data"]["synth"] = synth_to_json(*cfg.data.synth);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write config: " + path.string());
  os << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// AdamW with two parameter groups (encoder vs newly initialized parts)

namespace {

class AdamW {
 public:
  AdamW(std::vector<Parameter>& params, const OptimizerConfig& cfg)
      : params_(params), cfg_(cfg) {
    long backbone = 0, fresh = 0;
    for (auto& p : params) {
      state_.push_back({Mat::Zero(p.value.rows(), p.value.cols()),
                        Mat::Zero(p.value.rows(), p.value.cols())});
      (p.backbone ? backbone : fresh) += 1;
    }
    // group membership must be exhaustive and disjoint over all parameters
    if (backbone + fresh != long(params.size()) || backbone == 0 || fresh == 0)
      throw ConfigError("optimizer groups must cover all parameters");
  }

  void step() {
    ++t_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double bc1 = 1.0 - std::pow(b1, t_);
    double bc2 = 1.0 - std::pow(b2, t_);
    for (size_t i = 0; i < params_.size(); ++i) {
      Parameter& p = params_[i];
      if (p.grad.size() == 0) continue;
      double lr = p.backbone ? cfg_.lr_backbone : cfg_.lr_new;
      auto& [m, v] = state_[i];
      m = b1 * m + (1.0 - b1) * p.grad;
      v = (b2 * v.array() + (1.0 - b2) * p.grad.array().square()).matrix();
      Mat mhat = m / bc1;
      Mat vhat = v / bc2;
      p.value.array() -=
          lr * (mhat.array() / (vhat.array().sqrt() + eps) +
                cfg_.weight_decay * p.value.array());
    }
  }

 private:
  std::vector<Parameter>& params_;
  OptimizerConfig cfg_;
  std::vector<std::pair<Mat, Mat>> state_;
  long t_ = 0;
};

double clip_gradients(std::vector<Parameter>& params, double max_norm) {
  if (max_norm <= 0) return 0.0;
  double sq = 0.0;
  for (auto& p : params)
    if (p.grad.size()) sq += p.grad.squaredNorm();
  double norm = std::sqrt(sq);
  if (norm > max_norm) {
    double s = max_norm / norm;
    for (auto& p : params)
      if (p.grad.size()) p.grad *= s;
  }
  return norm;
}

struct LoadedClip {
  ClipSample sample;
  ClipTargets targets;
};

std::vector<LoadedClip> load_all(const DatasetManifest& m, const LossConfig& lc) {
  std::vector<LoadedClip> out;
  out.reserve(m.clips.size());
  for (const auto& rec : m.clips) {
    LoadedClip lc2;
    lc2.sample = load_clip(m, rec);
    lc2.targets.has_me = rec.has_me;
    lc2.targets.is_speaking = rec.state == ConversationalState::Speaking;
    lc2.targets.frame_mask = frame_mask(lc2.sample);
    lc2.targets.boundary_weights = boundary_weights(lc2.sample, lc.w_boundary);
    out.push_back(std::move(lc2));
  }
  return out;
}

void check_breakdown(const LossBreakdown& b, const LossConfig& cfg,
                     const std::string& where) {
  auto rel = [](double a, double b2) {
    return std::fabs(a - b2) / std::max({std::fabs(a), std::fabs(b2), 1e-12});
  };
  double total = cfg.w1 * b.l_me + cfg.w2 * b.l_state + cfg.w3 * b.l_loc;
  if (rel(b.total, total) > 1e-6)
    throw std::logic_error("loss composition identity violated at " + where);
  if (cfg.locator_loss_kind == LocatorLossKind::Bal) {
    double loc = b.l_overlap + cfg.lambda * b.l_boundary;
    if (rel(b.l_loc, loc) > 1e-6)
      throw std::logic_error("BAL composition identity violated at " + where);
  }
}

std::string csv_row(const EpochRecord& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%d,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,"
                "%.12g,%.3f",
                r.epoch, r.train_loss.total, r.train_loss.l_me, r.train_loss.l_state,
                r.train_loss.l_loc, r.train_loss.l_overlap, r.train_loss.l_boundary,
                r.acc_me, r.acc_state, r.f1_speaking, r.f1_listening, r.f1_dr,
                r.seconds);
  return buf;
}

LossBreakdown mean_breakdown(const std::vector<LossBreakdown>& v) {
  LossBreakdown m;
  if (v.empty()) return m;
  for (const auto& b : v) {
    m.total += b.total;
    m.l_me += b.l_me;
    m.l_state += b.l_state;
    m.l_loc += b.l_loc;
    m.l_overlap += b.l_overlap;
    m.l_boundary += b.l_boundary;
  }
  double n = double(v.size());
  m.total /= n;
  m.l_me /= n;
  m.l_state /= n;
  m.l_loc /= n;
  m.l_overlap /= n;
  m.l_boundary /= n;
  return m;
}

}  // namespace

std::vector<ClipPrediction> predict_all(Model& model,
                                        const DatasetManifest& manifest) {
  std::vector<ClipPrediction> out;
  for (const auto& rec : manifest.clips) {
    ClipSample clip = load_clip(manifest, rec);
    ModelOutput mo = model.predict(clip);
    out.push_back({rec.clip_id, mo.p_me, mo.p_state, mo.s_loc});
  }
  return out;
}

EvalReport evaluate_model(Model& model, const DatasetManifest& manifest,
                          const EvalConfig& cfg) {
  std::map<std::string, ClipPrediction> preds;
  for (auto& p : predict_all(model, manifest)) preds[p.clip_id] = std::move(p);
  return evaluate(preds, manifest, cfg);
}

TrainResult train(const RunConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.output_dir);

  DatasetManifest full;
  if (cfg.data.synth) {
    full = generate(*cfg.data.synth, fs::path(cfg.output_dir) / "data");
  } else {
    full = load_manifest(cfg.data.manifest);
  }
  SplitResult sp = split(full, cfg.data.train_fraction, cfg.data.split_seed);

  std::vector<LoadedClip> train_clips = load_all(sp.train, cfg.loss);
  if (train_clips.empty()) throw DataError("empty training split");

  Model model(cfg.model, cfg.schedule.seed);
  AdamW opt(model.params(), cfg.optimizer);
  Rng shuffle_rng = Rng::substream(cfg.schedule.seed, 0x5c0ffull);
  Rng dropout_rng = Rng::substream(cfg.schedule.seed, 0xd20ull);

  std::ofstream log_os(fs::path(cfg.output_dir) / "trainlog.csv", std::ios::trunc);
  if (!log_os) throw IoError("cannot write trainlog.csv");
  log_os << kTrainLogHeader << "\n";
  log_os.flush();

  TrainResult result;
  result.split_warning = sp.warning;
  result.final_checkpoint = fs::path(cfg.output_dir) / "final.ckpt";
  result.best_checkpoint = fs::path(cfg.output_dir) / "best.ckpt";

  auto log_epoch = [&](EpochRecord rec) {
    result.log.records.push_back(rec);
    log_os << csv_row(rec) << "\n";
    log_os.flush();
  };

  auto eval_metrics = [&](EpochRecord& rec) {
    EvalReport rep = evaluate_model(model, sp.eval, cfg.eval);
    rec.acc_me = rep.acc_me;
    rec.acc_state = rep.acc_state;
    rec.f1_speaking = rep.f1_speaking;
    rec.f1_listening = rep.f1_listening;
    rec.f1_dr = rep.f1_dr;
    return rep;
  };

  // epoch 0: the untrained model, so runs sharing a seed have a common anchor
  {
    auto t0 = std::chrono::steady_clock::now();
    std::vector<LossBreakdown> bds;
    for (const auto& lc : train_clips) {
      ForwardResult fr = model.forward(lc.sample);
      bds.push_back(
          total_loss(fr.p_me, fr.p_state, fr.s_loc, lc.targets, cfg.loss).values());
    }
    EpochRecord rec;
    rec.epoch = 0;
    rec.train_loss = mean_breakdown(bds);
    eval_metrics(rec);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                      .count();
    log_epoch(rec);
  }

  double best_f1 = -1.0;
  for (int epoch = 1; epoch <= cfg.schedule.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    std::vector<int> order(train_clips.size());
    std::iota(order.begin(), order.end(), 0);
    for (int i = int(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);

    std::vector<LossBreakdown> bds;
    for (size_t start = 0; start < order.size();
         start += size_t(cfg.schedule.batch_size)) {
      size_t end = std::min(order.size(), start + size_t(cfg.schedule.batch_size));
      model.zero_grad();
      for (size_t i = start; i < end; ++i) {
        const LoadedClip& lc = train_clips[order[i]];
        ForwardResult fr = model.forward(lc.sample, &dropout_rng);
        LossTerms terms =
            total_loss(fr.p_me, fr.p_state, fr.s_loc, lc.targets, cfg.loss);
        LossBreakdown bd = terms.values();
        if (!std::isfinite(bd.total))
          throw NonFiniteLoss("non-finite loss at epoch " + std::to_string(epoch) +
                              ", batch starting " + std::to_string(start) +
                              ", clip " + lc.sample.clip_id);
        check_breakdown(bd, cfg.loss, "epoch " + std::to_string(epoch));
        ad::backward(ad::scale(terms.total, 1.0 / double(end - start)));
        bds.push_back(bd);
      }
      clip_gradients(model.params(), cfg.schedule.grad_clip_norm);
      opt.step();
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = mean_breakdown(bds);
    EvalReport rep = eval_metrics(rec);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                      .count();
    log_epoch(rec);

    if (rep.f1_dr > best_f1) {
      best_f1 = rep.f1_dr;
      model.save(result.best_checkpoint);
    }
  }

  model.save(result.final_checkpoint);
  result.final_eval = evaluate_model(model, sp.eval, cfg.eval);
  return result;
}

int epochs_to_fraction(const TrainLog& log, double frac) {
  if (log.records.empty()) return 0;
  double target = frac * log.records.back().f1_dr;
  for (const auto& r : log.records)
    if (r.f1_dr >= target) return r.epoch;
  return log.records.back().epoch;
}

// ---------------------------------------------------------------------------
// Loss ablation

namespace {

void write_svg_plot(const fs::path& path,
                    const std::vector<std::pair<std::string, std::vector<double>>>&
                        curves) {
  const int W = 720, H = 480, ml = 60, mr = 150, mt = 30, mb = 50;
  const int pw = W - ml - mr, ph = H - mt - mb;
  size_t max_n = 1;
  for (const auto& [_, ys] : curves) max_n = std::max(max_n, ys.size());
  const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c",
                          "#d62728", "#9467bd", "#8c564b"};
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write plot: " + path.string());
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H
     << "'>\n<rect width='100%' height='100%' fill='white'/>\n";
  // axes, y in [0,1]
  os << "<line x1='" << ml << "' y1='" << mt + ph << "' x2='" << ml + pw << "' y2='"
     << mt + ph << "' stroke='black'/>\n";
  os << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << mt + ph
     << "' stroke='black'/>\n";
  for (int i = 0; i <= 5; ++i) {
    double y = mt + ph - ph * i / 5.0;
    os << "<text x='" << ml - 35 << "' y='" << y + 4 << "' font-size='12'>"
       << i / 5.0 << "</text>\n";
    os << "<line x1='" << ml - 4 << "' y1='" << y << "' x2='" << ml << "' y2='" << y
       << "' stroke='black'/>\n";
  }
  os << "<text x='" << ml + pw / 2 - 20 << "' y='" << H - 12
     << "' font-size='13'>epoch</text>\n";
  os << "<text x='14' y='" << mt + ph / 2
     << "' font-size='13' transform='rotate(-90 14 " << mt + ph / 2
     << ")'>eval F1_DR</text>\n";
  int ci = 0;
  for (const auto& [name, ys] : curves) {
    std::ostringstream pts;
    for (size_t i = 0; i < ys.size(); ++i) {
      double x = ml + (max_n > 1 ? pw * double(i) / double(max_n - 1) : 0.0);
      double y = mt + ph - ph * std::clamp(ys[i], 0.0, 1.0);
      pts << x << "," << y << " ";
    }
    const char* color = colors[ci % 6];
    os << "<polyline fill='none' stroke='" << color << "' stroke-width='2' points='"
       << pts.str() << "'/>\n";
    os << "<text x='" << ml + pw + 10 << "' y='" << mt + 16 + 18 * ci
       << "' font-size='13' fill='" << color << "'>" << name << "</text>\n";
    ++ci;
  }
  os << "</svg>\n";
}

}  // namespace

AblationResult ablate_losses(const RunConfig& cfg,
                             const std::vector<LocatorLossKind>& kinds) {
  if (kinds.empty()) throw ConfigError("ablate_losses: no kinds given");
  AblationResult out;
  fs::create_directories(cfg.output_dir);
  for (LocatorLossKind kind : kinds) {
    RunConfig sub = cfg;
    sub.loss.locator_loss_kind = kind;
    sub.output_dir = (fs::path(cfg.output_dir) / to_string(kind)).string();
    TrainResult tr = train(sub);
    out.runs.push_back({kind, std::move(tr.log)});
  }

  out.table_path = fs::path(cfg.output_dir) / "ablation_table.csv";
  {
    std::ofstream os(out.table_path, std::ios::trunc);
    os << "kind,epoch,f1_dr\n";
    for (const auto& [kind, log] : out.runs)
      for (const auto& r : log.records)
        os << to_string(kind) << "," << r.epoch << "," << r.f1_dr << "\n";
  }

  out.final_path = fs::path(cfg.output_dir) / "ablation_final.csv";
  {
    std::ofstream os(out.final_path, std::ios::trunc);
    os << "kind,final_f1_dr,epochs_to_90pct\n";
    for (const auto& [kind, log] : out.runs)
      os << to_string(kind) << "," << log.records.back().f1_dr << ","
         << epochs_to_fraction(log, 0.9) << "\n";
  }

  out.plot_path = fs::path(cfg.output_dir) / "ablation.svg";
  std::vector<std::pair<std::string, std::vector<double>>> curves;
  for (const auto& [kind, log] : out.runs) {
    std::vector<double> ys;
    for (const auto& r : log.records) ys.push_back(r.f1_dr);
    curves.push_back({to_string(kind), std::move(ys)});
  }
  write_svg_plot(out.plot_path, curves);
  return out;
}

}  // namespace meldae
