#include "meldae/losses.hpp"

#include <cmath>

namespace meldae {

using ad::Var;

std::string to_string(LocatorLossKind k) {
  switch (k) {
    case LocatorLossKind::Bal: return "bal";
    case LocatorLossKind::Bce: return "bce";
    case LocatorLossKind::SmoothL1: return "smooth_l1";
    case LocatorLossKind::SoftIou: return "soft_iou";
    case LocatorLossKind::Mse: return "mse";
    case LocatorLossKind::Mae: return "mae";
  }
  throw DomainError("bad locator loss kind");
}

LocatorLossKind locator_loss_kind_from_string(const std::string& s) {
  if (s == "bal") return LocatorLossKind::Bal;
  if (s == "bce") return LocatorLossKind::Bce;
  if (s == "smooth_l1") return LocatorLossKind::SmoothL1;
  if (s == "soft_iou") return LocatorLossKind::SoftIou;
  if (s == "mse") return LocatorLossKind::Mse;
  if (s == "mae") return LocatorLossKind::Mae;
  throw ConfigError("unknown locator loss kind: " + s);
}

void LossConfig::validate() const {
  if (w1 < 0 || w2 < 0 || w3 < 0 || lambda < 0)
    throw ConfigError("loss weights must be nonnegative");
  if (w_boundary < 1.0) throw ConfigError("w_boundary must be >= 1");
  if (!(focal_alpha > 0 && focal_alpha < 1)) throw ConfigError("focal_alpha in (0,1)");
  if (focal_gamma < 0) throw ConfigError("focal_gamma must be >= 0");
  if (!(tversky_alpha > 0 && tversky_alpha < 1 && tversky_beta > 0 &&
        tversky_beta < 1))
    throw ConfigError("tversky alpha/beta in (0,1)");
  if (!(tversky_gamma > 0)) throw ConfigError("tversky_gamma must be > 0");
  if (!(smooth > 0)) throw ConfigError("smooth must be > 0");
}

namespace {

void check_binary(const Vec& y) {
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (y[i] != 0.0 && y[i] != 1.0)
      throw DomainError("labels must be 0 or 1");
}

void check_lengths(const Var& p, const Vec& y) {
  if (p.cols() != 1) throw ShapeError("probabilities must be a column");
  if (p.rows() != y.size()) throw ShapeError("probability/label length mismatch");
}

Var clamp_probs(const Var& p) { return ad::clamp(p, kProbEps, 1.0 - kProbEps); }

// per-element BCE column: -(y log p + (1-y) log(1-p))
Var bce_elems(const Var& p, const Vec& y) {
  Var pc = clamp_probs(p);
  Var one_minus = ad::add_scalar(ad::scale(pc, -1.0), 1.0);
  Var ypos = ad::cmul(ad::constant(y), ad::log(pc));
  Var yneg = ad::cmul(ad::constant(Vec::Ones(y.size()) - y), ad::log(one_minus));
  return ad::scale(ad::add(ypos, yneg), -1.0);
}

}  // namespace

Var focal_loss(const Var& p, const Vec& y, double alpha, double gamma) {
  check_lengths(p, y);
  check_binary(y);
  Var pc = clamp_probs(p);
  Var one_minus = ad::add_scalar(ad::scale(pc, -1.0), 1.0);
  // -alpha*y*(1-p)^g*log p - (1-alpha)*(1-y)*p^g*log(1-p)
  Vec c_pos = alpha * y;
  Vec c_neg = (1.0 - alpha) * (Vec::Ones(y.size()) - y);
  Var pos = ad::cmul(ad::constant(c_pos),
                     ad::cmul(ad::pow(one_minus, gamma), ad::log(pc)));
  Var neg = ad::cmul(ad::constant(c_neg),
                     ad::cmul(ad::pow(pc, gamma), ad::log(one_minus)));
  return ad::scale(ad::mean(ad::add(pos, neg)), -1.0);
}

Var focal_tversky(const Var& p, const Vec& y, double alpha, double beta,
                  double gamma, double smooth) {
  check_lengths(p, y);
  check_binary(y);
  Var pc = clamp_probs(p);
  Var yv = ad::constant(y);
  Var not_y = ad::constant(Vec(Vec::Ones(y.size()) - y));
  Var tp = ad::sum(ad::cmul(pc, yv));
  Var fn = ad::sub(ad::constant_scalar(y.sum()), tp);  // sum((1-p)*y)
  Var fp = ad::sum(ad::cmul(pc, not_y));
  Var num = ad::add_scalar(tp, smooth);
  Var den = ad::add_scalar(
      ad::add(tp, ad::add(ad::scale(fn, alpha), ad::scale(fp, beta))), smooth);
  Var ti = ad::cdiv(num, den);
  return ad::pow(ad::add_scalar(ad::scale(ti, -1.0), 1.0), gamma);
}

Var boundary_weighted_bce(const Var& p, const Vec& y, const Vec& weights) {
  check_lengths(p, y);
  check_binary(y);
  if (weights.size() != y.size()) throw ShapeError("weights length mismatch");
  Var weighted = ad::cmul(ad::constant(weights), bce_elems(p, y));
  return ad::scale(ad::sum(weighted), 1.0 / weights.sum());
}

BalTerms bal(const Var& p, const Vec& y, const Vec& weights, const LossConfig& cfg) {
  BalTerms t;
  t.l_overlap = focal_tversky(p, y, cfg.tversky_alpha, cfg.tversky_beta,
                              cfg.tversky_gamma, cfg.smooth);
  t.l_boundary = boundary_weighted_bce(p, y, weights);
  t.l_loc = ad::add(t.l_overlap, ad::scale(t.l_boundary, cfg.lambda));
  return t;
}

Var baseline_locator_loss(LocatorLossKind kind, const Var& p, const Vec& y) {
  check_lengths(p, y);
  check_binary(y);
  switch (kind) {
    case LocatorLossKind::Bce:
      return ad::mean(bce_elems(p, y));
    case LocatorLossKind::SmoothL1:
      return ad::mean(ad::huber(p, y));
    case LocatorLossKind::SoftIou: {
      const double s = 1e-6;
      Var inter = ad::sum(ad::cmul(p, ad::constant(y)));
      Var uni = ad::sub(ad::add_scalar(ad::sum(p), y.sum()), inter);
      Var iou = ad::cdiv(ad::add_scalar(inter, s), ad::add_scalar(uni, s));
      return ad::add_scalar(ad::scale(iou, -1.0), 1.0);
    }
    case LocatorLossKind::Mse:
      return ad::mean(ad::square(ad::sub(p, ad::constant(y))));
    case LocatorLossKind::Mae:
      return ad::mean(ad::abs(ad::sub(p, ad::constant(y))));
    case LocatorLossKind::Bal:
      throw DomainError("bal is not a baseline kind; use bal()");
  }
  throw DomainError("unknown locator loss kind");
}

LossTerms total_loss(const Var& p_me, const Var& p_state, const Var& s_loc,
                     const ClipTargets& targets, const LossConfig& cfg) {
  LossTerms t;
  Vec y_me(1), y_state(1);
  y_me[0] = targets.has_me ? 1.0 : 0.0;
  y_state[0] = targets.is_speaking ? 1.0 : 0.0;
  t.l_me = focal_loss(p_me, y_me, cfg.focal_alpha, cfg.focal_gamma);
  t.l_state = focal_loss(p_state, y_state, cfg.focal_alpha, cfg.focal_gamma);
  if (cfg.locator_loss_kind == LocatorLossKind::Bal) {
    BalTerms b = bal(s_loc, targets.frame_mask, targets.boundary_weights, cfg);
    t.l_loc = b.l_loc;
    t.l_overlap = b.l_overlap;
    t.l_boundary = b.l_boundary;
  } else {
    t.l_loc = baseline_locator_loss(cfg.locator_loss_kind, s_loc, targets.frame_mask);
  }
  t.total = ad::add(ad::scale(t.l_me, cfg.w1),
                    ad::add(ad::scale(t.l_state, cfg.w2), ad::scale(t.l_loc, cfg.w3)));
  return t;
}

LossBreakdown LossTerms::values() const {
  LossBreakdown b;
  b.total = total.scalar();
  b.l_me = l_me.scalar();
  b.l_state = l_state.scalar();
  b.l_loc = l_loc.scalar();
  b.l_overlap = l_overlap.valid() ? l_overlap.scalar() : 0.0;
  b.l_boundary = l_boundary.valid() ? l_boundary.scalar() : 0.0;
  return b;
}

double focal_loss_value(const Vec& p, const Vec& y, double alpha, double gamma) {
  return focal_loss(ad::constant(p), y, alpha, gamma).scalar();
}
double focal_tversky_value(const Vec& p, const Vec& y, double alpha, double beta,
                           double gamma, double smooth) {
  return focal_tversky(ad::constant(p), y, alpha, beta, gamma, smooth).scalar();
}
double boundary_weighted_bce_value(const Vec& p, const Vec& y, const Vec& weights) {
  return boundary_weighted_bce(ad::constant(p), y, weights).scalar();
}
double baseline_locator_loss_value(LocatorLossKind kind, const Vec& p, const Vec& y) {
  return baseline_locator_loss(kind, ad::constant(p), y).scalar();
}

}  // namespace meldae
