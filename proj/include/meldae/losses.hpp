#pragma once

#include <string>

#include "meldae/autograd.hpp"
#include "meldae/data_model.hpp"

namespace meldae {

enum class LocatorLossKind { Bal, Bce, SmoothL1, SoftIou, Mse, Mae };

std::string to_string(LocatorLossKind k);
LocatorLossKind locator_loss_kind_from_string(const std::string& s);

struct LossConfig {
  double w1 = 1.0;
  double w2 = 1.0;
  double w3 = 2.0;
  double lambda = 0.5;
  double w_boundary = 5.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double tversky_alpha = 0.7;
  double tversky_beta = 0.3;
  double tversky_gamma = 0.75;
  double smooth = 1e-6;
  LocatorLossKind locator_loss_kind = LocatorLossKind::Bal;

  void validate() const;
};

// probabilities are clamped to [kProbEps, 1 - kProbEps] before any logarithm
inline constexpr double kProbEps = 1e-7;

struct LossBreakdown {
  double total = 0, l_me = 0, l_state = 0, l_loc = 0, l_overlap = 0, l_boundary = 0;
};

// All losses take probabilities (post-sigmoid) and 0/1 targets. Tape variants
// return differentiable scalars; *_value wrappers evaluate on a throwaway tape.

ad::Var focal_loss(const ad::Var& p, const Vec& y, double alpha, double gamma);
ad::Var focal_tversky(const ad::Var& p, const Vec& y, double alpha, double beta,
                      double gamma, double smooth);
ad::Var boundary_weighted_bce(const ad::Var& p, const Vec& y, const Vec& weights);

struct BalTerms {
  ad::Var l_loc, l_overlap, l_boundary;
};
BalTerms bal(const ad::Var& p, const Vec& y, const Vec& weights,
             const LossConfig& cfg);

ad::Var baseline_locator_loss(LocatorLossKind kind, const ad::Var& p, const Vec& y);

struct ClipTargets {
  bool has_me = false;
  bool is_speaking = false;
  Vec frame_mask;
  Vec boundary_weights;
};

struct LossTerms {
  ad::Var total, l_me, l_state, l_loc, l_overlap, l_boundary;
  LossBreakdown values() const;
};

LossTerms total_loss(const ad::Var& p_me, const ad::Var& p_state,
                     const ad::Var& s_loc, const ClipTargets& targets,
                     const LossConfig& cfg);

double focal_loss_value(const Vec& p, const Vec& y, double alpha, double gamma);
double focal_tversky_value(const Vec& p, const Vec& y, double alpha, double beta,
                           double gamma, double smooth);
double boundary_weighted_bce_value(const Vec& p, const Vec& y, const Vec& weights);
double baseline_locator_loss_value(LocatorLossKind kind, const Vec& p, const Vec& y);

}  // namespace meldae
