#include "meldae/gradcheck.hpp"

#include <cmath>
#include <sstream>

#include "meldae/model.hpp"

namespace meldae {

bool GradCheckReport::all_pass() const {
  for (const auto& e : entries)
    if (!e.pass) return false;
  return true;
}

std::string GradCheckReport::text() const {
  std::ostringstream os;
  for (const auto& e : entries)
    os << (e.pass ? "PASS" : "FAIL") << "  " << e.name
       << "  max_rel_err=" << e.max_rel_err << "\n";
  os << (all_pass() ? "gradcheck: all losses pass" : "gradcheck: FAILURES present")
     << "\n";
  return os.str();
}

double max_rel_err_fd(const ValueFn& f, const GradFn& g, const Vec& p0, double h) {
  Vec analytic = g(p0);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < p0.size(); ++i) {
    Vec p = p0;
    p[i] = p0[i] + h;
    double up = f(p);
    p[i] = p0[i] - h;
    double dn = f(p);
    double fd = (up - dn) / (2.0 * h);
    double denom = std::max({std::fabs(fd), std::fabs(analytic[i]), 1e-4});
    worst = std::max(worst, std::fabs(fd - analytic[i]) / denom);
  }
  return worst;
}

namespace {

// random probabilities kept away from the clamp boundary so the loss is
// smooth at every probed point
Vec random_probs(Rng& rng, int n) {
  Vec p(n);
  for (int i = 0; i < n; ++i) p[i] = rng.uniform(0.02, 0.98);
  return p;
}

Vec random_labels(Rng& rng, int n) {
  Vec y(n);
  for (int i = 0; i < n; ++i) y[i] = rng.bernoulli(0.3) ? 1.0 : 0.0;
  return y;
}

// random non-overlapping segments for boundary weights
std::vector<SegmentAnnotation> random_segments(Rng& rng, int T, Vec* mask_out) {
  std::vector<SegmentAnnotation> segs;
  int t = 0;
  while (t < T - 1) {
    if (rng.bernoulli(0.3)) {
      int len = int(rng.uniform_int(1, std::max(1, std::min(6, T - t))));
      segs.push_back({t, t + len - 1, ConversationalState::Listening});
      t += len + 1;
    } else {
      ++t;
    }
  }
  if (mask_out) *mask_out = frame_mask(segs, T);
  return segs;
}

struct TapeGrad {
  ValueFn value;
  GradFn grad;
};

TapeGrad wrap(std::function<ad::Var(const ad::Var&)> build) {
  TapeGrad tg;
  tg.value = [build](const Vec& p) { return build(ad::constant(p)).scalar(); };
  tg.grad = [build](const Vec& p) {
    Mat sink;
    ad::Var leaf = ad::leaf(p, &sink);
    ad::backward(build(leaf));
    return Vec(sink.size() ? sink.col(0) : Mat(Mat::Zero(p.size(), 1)).col(0));
  };
  return tg;
}

GradCheckEntry sweep(const std::string& name, const GradCheckOptions& opts,
                     std::uint64_t salt,
                     std::function<TapeGrad(Rng&, int T, Vec& p0)> make) {
  GradCheckEntry e;
  e.name = name;
  Rng rng = Rng::substream(opts.seed, salt);
  for (int i = 0; i < opts.instances; ++i) {
    int T = int(rng.uniform_int(opts.t_min, opts.t_max));
    Vec p0;
    TapeGrad tg = make(rng, T, p0);
    e.max_rel_err =
        std::max(e.max_rel_err, max_rel_err_fd(tg.value, tg.grad, p0, opts.h));
  }
  e.pass = e.max_rel_err < opts.tol;
  return e;
}

GradCheckEntry check_model_params(const GradCheckOptions& opts) {
  GradCheckEntry e;
  e.name = "model_params";
  Rng rng = Rng::substream(opts.seed, 0x3dEull);

  ModelConfig mc;
  mc.d_in = 8;
  mc.D = 4;
  mc.R = 2;
  mc.K = 2;
  mc.recurrent_hidden = 3;
  mc.attention_heads = 2;
  mc.dropout = 0.0;
  Model model(mc, 11);

  ClipSample clip;
  clip.clip_id = "gradcheck";
  const int T = 7;
  clip.features.resize(T, mc.d_in);
  for (Eigen::Index i = 0; i < clip.features.size(); ++i)
    clip.features(i) = rng.normal();
  clip.has_me = true;
  clip.state = ConversationalState::Speaking;
  clip.segments = {{2, 4, clip.state}};

  LossConfig lc;
  ClipTargets targets;
  targets.has_me = clip.has_me;
  targets.is_speaking = true;
  targets.frame_mask = frame_mask(clip);
  targets.boundary_weights = boundary_weights(clip, lc.w_boundary);

  auto loss_value = [&]() {
    ForwardResult fr = model.forward(clip);
    return total_loss(fr.p_me, fr.p_state, fr.s_loc, targets, lc).total.scalar();
  };

  model.zero_grad();
  {
    ForwardResult fr = model.forward(clip);
    ad::backward(total_loss(fr.p_me, fr.p_state, fr.s_loc, targets, lc).total);
  }

  for (auto& p : model.params()) {
    Mat analytic =
        p.grad.size() ? p.grad : Mat(Mat::Zero(p.value.rows(), p.value.cols()));
    // probe a handful of entries per parameter
    int probes = std::min<int>(4, int(p.value.size()));
    for (int k = 0; k < probes; ++k) {
      Eigen::Index idx = Eigen::Index(rng.uniform_int(0, p.value.size() - 1));
      double orig = p.value(idx);
      p.value(idx) = orig + opts.h;
      double up = loss_value();
      p.value(idx) = orig - opts.h;
      double dn = loss_value();
      p.value(idx) = orig;
      double fd = (up - dn) / (2.0 * opts.h);
      double a = analytic(idx);
      double denom = std::max({std::fabs(fd), std::fabs(a), 1e-4});
      e.max_rel_err = std::max(e.max_rel_err, std::fabs(fd - a) / denom);
    }
  }
  e.pass = e.max_rel_err < opts.tol;
  return e;
}

}  // namespace

GradCheckReport run_gradcheck(const GradCheckOptions& opts) {
  GradCheckReport rep;
  LossConfig lc;

  rep.entries.push_back(sweep("focal", opts, 1, [&](Rng& rng, int T, Vec& p0) {
    p0 = random_probs(rng, T);
    Vec y = random_labels(rng, T);
    double alpha = rng.uniform(0.1, 0.9), gamma = rng.uniform(0.0, 3.0);
    return wrap([=](const ad::Var& p) { return focal_loss(p, y, alpha, gamma); });
  }));

  rep.entries.push_back(
      sweep("focal_tversky", opts, 2, [&](Rng& rng, int T, Vec& p0) {
        p0 = random_probs(rng, T);
        Vec y = random_labels(rng, T);
        double a = rng.uniform(0.2, 0.8), b = rng.uniform(0.2, 0.8);
        double g = rng.uniform(0.5, 2.0);
        return wrap([=](const ad::Var& p) {
          return focal_tversky(p, y, a, b, g, 1e-6);
        });
      }));

  rep.entries.push_back(
      sweep("boundary_weighted_bce", opts, 3, [&](Rng& rng, int T, Vec& p0) {
        p0 = random_probs(rng, T);
        Vec mask;
        auto segs = random_segments(rng, T, &mask);
        Vec w = boundary_weights(segs, T, 5.0);
        return wrap([=](const ad::Var& p) {
          return boundary_weighted_bce(p, mask, w);
        });
      }));

  rep.entries.push_back(sweep("bal", opts, 4, [&](Rng& rng, int T, Vec& p0) {
    p0 = random_probs(rng, T);
    Vec mask;
    auto segs = random_segments(rng, T, &mask);
    Vec w = boundary_weights(segs, T, lc.w_boundary);
    LossConfig cfg = lc;
    return wrap([=](const ad::Var& p) { return bal(p, mask, w, cfg).l_loc; });
  }));

  rep.entries.push_back(sweep("total", opts, 5, [&](Rng& rng, int T, Vec& p0) {
    // layout: [p_me, p_state, s_loc...]
    p0 = random_probs(rng, T + 2);
    ClipTargets targets;
    auto segs = random_segments(rng, T, &targets.frame_mask);
    targets.boundary_weights = boundary_weights(segs, T, lc.w_boundary);
    targets.has_me = !segs.empty();
    targets.is_speaking = rng.bernoulli(0.5);
    LossConfig cfg = lc;
    return wrap([=](const ad::Var& p) {
      ad::Var p_me = ad::rows(p, 0, 1);
      ad::Var p_state = ad::rows(p, 1, 1);
      ad::Var s_loc = ad::rows(p, 2, p.rows() - 2);
      return total_loss(p_me, p_state, s_loc, targets, cfg).total;
    });
  }));

  const std::pair<const char*, LocatorLossKind> baselines[] = {
      {"bce", LocatorLossKind::Bce},
      {"smooth_l1", LocatorLossKind::SmoothL1},
      {"soft_iou", LocatorLossKind::SoftIou},
      {"mse", LocatorLossKind::Mse},
      {"mae", LocatorLossKind::Mae},
  };
  std::uint64_t salt = 6;
  for (auto [name, kind] : baselines) {
    rep.entries.push_back(
        sweep(name, opts, salt++, [&, kind](Rng& rng, int T, Vec& p0) {
          p0 = random_probs(rng, T);
          Vec y = random_labels(rng, T);
          return wrap([=](const ad::Var& p) {
            return baseline_locator_loss(kind, p, y);
          });
        }));
  }

  rep.entries.push_back(check_model_params(opts));
  return rep;
}

}  // namespace meldae
