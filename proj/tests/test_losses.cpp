#include <doctest.h>

#include <cmath>

#include "meldae/gradcheck.hpp"
#include "meldae/losses.hpp"
#include "meldae/rng.hpp"

using namespace meldae;

namespace {

Vec vec(std::initializer_list<double> v) {
  Vec out(v.size());
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

double bce_scalar(double p, double y) {
  p = std::clamp(p, kProbEps, 1.0 - kProbEps);
  return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

Vec random_probs(Rng& rng, int n) {
  Vec p(n);
  for (int i = 0; i < n; ++i) p[i] = rng.uniform(0.02, 0.98);
  return p;
}

Vec random_labels(Rng& rng, int n) {
  Vec y(n);
  for (int i = 0; i < n; ++i) y[i] = rng.bernoulli(0.4) ? 1.0 : 0.0;
  return y;
}

}  // namespace

TEST_CASE("focal loss vanishes for a confident correct prediction") {
  CHECK(focal_loss_value(vec({1.0 - 1e-9}), vec({1.0}), 0.25, 2.0) < 1e-5);
}

TEST_CASE("focal loss at gamma=0, alpha=0.5 is half the BCE") {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    int n = int(rng.uniform_int(1, 16));
    Vec p = random_probs(rng, n), y = random_labels(rng, n);
    double bce = 0;
    for (int i = 0; i < n; ++i) bce += bce_scalar(p[i], y[i]);
    bce /= n;
    CHECK(focal_loss_value(p, y, 0.5, 0.0) ==
          doctest::Approx(0.5 * bce).epsilon(1e-7));
  }
}

TEST_CASE("focal loss frozen scalar value") {
  // alpha*(1-p)^gamma*(-log p) at p=0.5, y=1, alpha=0.25, gamma=2
  double expect = 0.25 * 0.25 * std::log(2.0);
  CHECK(focal_loss_value(vec({0.5}), vec({1.0}), 0.25, 2.0) ==
        doctest::Approx(expect).epsilon(1e-12));
  CHECK(expect == doctest::Approx(0.04332).epsilon(1e-3));
}

TEST_CASE("focal loss rejects non-binary labels") {
  CHECK_THROWS_AS(focal_loss_value(vec({0.5}), vec({0.5}), 0.25, 2.0), DomainError);
}

TEST_CASE("focal tversky vanishes on perfect overlap") {
  Vec y = vec({1, 1, 0, 0, 1});
  CHECK(focal_tversky_value(y, y, 0.7, 0.3, 0.75, 1e-6) < 1e-5);
}

TEST_CASE("focal tversky at alpha=beta=0.5, gamma=1 equals Dice loss") {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    int n = int(rng.uniform_int(2, 32));
    Vec p = random_probs(rng, n), y = random_labels(rng, n);
    double s = 1e-6;
    double tp = 0, fn = 0, fp = 0;
    for (int i = 0; i < n; ++i) {
      tp += p[i] * y[i];
      fn += (1 - p[i]) * y[i];
      fp += p[i] * (1 - y[i]);
    }
    double dice = 1.0 - (2 * tp + 2 * s) / (2 * tp + fn + fp + 2 * s);
    CHECK(focal_tversky_value(p, y, 0.5, 0.5, 1.0, s) ==
          doctest::Approx(dice).epsilon(1e-7));
  }
}

TEST_CASE("focal tversky frozen scalar value") {
  // y=[1,1,0,0], p=[1,0,0,0]: TP=1, FN=1, FP=0, TI=1/1.7 (smooth -> 0)
  double expect = std::pow(1.0 - 1.0 / 1.7, 0.75);
  double got = focal_tversky_value(vec({1, 0, 0, 0}), vec({1, 1, 0, 0}), 0.7, 0.3,
                                   0.75, 1e-9);
  CHECK(got == doctest::Approx(expect).epsilon(1e-4));
  CHECK(expect == doctest::Approx(0.514).epsilon(1e-3));
}

TEST_CASE("focal tversky rejects length mismatch") {
  CHECK_THROWS_AS(focal_tversky_value(vec({0.5, 0.5}), vec({1.0}), 0.5, 0.5, 1, 1e-6),
                  ShapeError);
}

TEST_CASE("boundary-weighted BCE with uniform per-frame BCE ignores weights") {
  Vec y = vec({0, 1, 1, 1, 0});
  Vec p = vec({0.1, 0.9, 0.9, 0.9, 0.1});
  Vec w = vec({1, 5, 1, 5, 1});
  CHECK(boundary_weighted_bce_value(p, y, w) ==
        doctest::Approx(-std::log(0.9)).epsilon(1e-9));
}

TEST_CASE("boundary-weighted BCE with unit weights is plain mean BCE") {
  Rng rng(3);
  Vec p = random_probs(rng, 12), y = random_labels(rng, 12);
  double bce = 0;
  for (int i = 0; i < 12; ++i) bce += bce_scalar(p[i], y[i]);
  CHECK(boundary_weighted_bce_value(p, y, Vec::Ones(12)) ==
        doctest::Approx(bce / 12).epsilon(1e-9));
}

TEST_CASE("boundary-weighted BCE vanishes for perfect predictions") {
  Vec y = vec({0, 1, 1, 0});
  CHECK(boundary_weighted_bce_value(y, y, vec({1, 5, 5, 1})) < 1e-5);
}

TEST_CASE("heavier boundary weights raise the boundary term when boundary frames are hard") {
  // boundary-frame BCE above the off-boundary mean => strictly increasing in w
  Vec y = vec({0, 1, 1, 1, 0});
  Vec p = vec({0.05, 0.55, 0.95, 0.6, 0.05});  // sloppy boundaries, good interior
  double prev = -1;
  for (double wb : {1.0, 2.0, 5.0, 10.0}) {
    Vec w = boundary_weights({{1, 3, ConversationalState::Listening}}, 5, wb);
    double v = boundary_weighted_bce_value(p, y, w);
    CHECK(v > prev);
    prev = v;
  }
}

TEST_CASE("bal composes its two terms linearly") {
  LossConfig cfg;
  Rng rng(4);
  Vec p = random_probs(rng, 16);
  Vec mask = frame_mask({{4, 9, ConversationalState::Listening}}, 16);
  Vec w = boundary_weights({{4, 9, ConversationalState::Listening}}, 16,
                           cfg.w_boundary);

  SUBCASE("lambda = 0 leaves only the overlap term") {
    cfg.lambda = 0.0;
    BalTerms t = bal(ad::constant(p), mask, w, cfg);
    CHECK(t.l_loc.scalar() == t.l_overlap.scalar());
  }
  SUBCASE("components recompose") {
    cfg.lambda = 0.5;
    BalTerms t = bal(ad::constant(p), mask, w, cfg);
    double overlap = focal_tversky_value(p, mask, cfg.tversky_alpha,
                                         cfg.tversky_beta, cfg.tversky_gamma,
                                         cfg.smooth);
    double boundary = boundary_weighted_bce_value(p, mask, w);
    CHECK(t.l_overlap.scalar() == doctest::Approx(overlap).epsilon(1e-12));
    CHECK(t.l_boundary.scalar() == doctest::Approx(boundary).epsilon(1e-12));
    CHECK(t.l_loc.scalar() ==
          doctest::Approx(overlap + cfg.lambda * boundary).epsilon(1e-9));
  }
  SUBCASE("perfect predictions vanish") {
    BalTerms t = bal(ad::constant(mask), mask, w, cfg);
    CHECK(t.l_loc.scalar() < 2e-5);
  }
}

TEST_CASE("total_loss composes the three weighted tasks") {
  LossConfig cfg;
  Rng rng(5);
  ClipTargets targets;
  targets.has_me = true;
  targets.is_speaking = false;
  targets.frame_mask = frame_mask({{3, 7, ConversationalState::Listening}}, 20);
  targets.boundary_weights =
      boundary_weights({{3, 7, ConversationalState::Listening}}, 20, cfg.w_boundary);
  Vec s = random_probs(rng, 20);
  double pm = rng.uniform(0.05, 0.95), ps = rng.uniform(0.05, 0.95);

  auto terms = [&](const LossConfig& c) {
    return total_loss(ad::constant(Mat::Constant(1, 1, pm)),
                      ad::constant(Mat::Constant(1, 1, ps)), ad::constant(s),
                      targets, c);
  };

  SUBCASE("matches hand-composed components") {
    LossBreakdown b = terms(cfg).values();
    double l_me = focal_loss_value(vec({pm}), vec({1.0}), cfg.focal_alpha,
                                   cfg.focal_gamma);
    double l_state = focal_loss_value(vec({ps}), vec({0.0}), cfg.focal_alpha,
                                      cfg.focal_gamma);
    CHECK(b.l_me == doctest::Approx(l_me).epsilon(1e-12));
    CHECK(b.l_state == doctest::Approx(l_state).epsilon(1e-12));
    CHECK(b.total ==
          doctest::Approx(cfg.w1 * b.l_me + cfg.w2 * b.l_state + cfg.w3 * b.l_loc)
              .epsilon(1e-9));
    CHECK(b.l_loc ==
          doctest::Approx(b.l_overlap + cfg.lambda * b.l_boundary).epsilon(1e-9));
  }
  SUBCASE("zeroed classification weights leave only the locator") {
    cfg.w1 = cfg.w2 = 0.0;
    LossBreakdown b = terms(cfg).values();
    CHECK(b.total == doctest::Approx(cfg.w3 * b.l_loc).epsilon(1e-12));
  }
  SUBCASE("perfect predictions vanish") {
    ClipTargets t2 = targets;
    LossBreakdown b =
        total_loss(ad::constant(Mat::Constant(1, 1, 1.0 - 1e-9)),
                   ad::constant(Mat::Constant(1, 1, 1e-9)),
                   ad::constant(t2.frame_mask), t2, cfg)
            .values();
    CHECK(b.total < 1e-4);
  }
}

TEST_CASE("baseline locator losses") {
  SUBCASE("mse is zero at the target") {
    Vec y = vec({0, 1, 1, 0});
    CHECK(baseline_locator_loss_value(LocatorLossKind::Mse, y, y) == 0.0);
  }
  SUBCASE("mae single element") {
    CHECK(baseline_locator_loss_value(LocatorLossKind::Mae, vec({0.25}), vec({1})) ==
          doctest::Approx(0.75).epsilon(1e-12));
  }
  SUBCASE("soft IoU vanishes at a binary match") {
    Vec y = vec({0, 1, 1, 0, 1});
    CHECK(baseline_locator_loss_value(LocatorLossKind::SoftIou, y, y) < 1e-5);
  }
  SUBCASE("smooth_l1 is the Huber mean") {
    Vec p = vec({0.2, 0.9}), y = vec({1, 1});
    double expect = (0.5 * 0.8 * 0.8 + 0.5 * 0.1 * 0.1) / 2.0;
    CHECK(baseline_locator_loss_value(LocatorLossKind::SmoothL1, p, y) ==
          doctest::Approx(expect).epsilon(1e-12));
  }
  SUBCASE("bce matches the scalar formula") {
    Vec p = vec({0.3, 0.8}), y = vec({0, 1});
    double expect = (bce_scalar(0.3, 0) + bce_scalar(0.8, 1)) / 2.0;
    CHECK(baseline_locator_loss_value(LocatorLossKind::Bce, p, y) ==
          doctest::Approx(expect).epsilon(1e-12));
  }
  SUBCASE("length mismatch throws") {
    CHECK_THROWS_AS(
        baseline_locator_loss_value(LocatorLossKind::Mse, vec({0.5}), vec({1, 0})),
        ShapeError);
  }
}

TEST_CASE("all losses are nonnegative and finite on random inputs") {
  Rng rng(6);
  LossConfig cfg;
  for (int trial = 0; trial < 200; ++trial) {
    int n = int(rng.uniform_int(2, 40));
    Vec p = random_probs(rng, n), y = random_labels(rng, n);
    Vec w = Vec::Ones(n);
    for (double v : {focal_loss_value(p, y, 0.25, 2.0),
                     focal_tversky_value(p, y, 0.7, 0.3, 0.75, 1e-6),
                     boundary_weighted_bce_value(p, y, w),
                     baseline_locator_loss_value(LocatorLossKind::Bce, p, y),
                     baseline_locator_loss_value(LocatorLossKind::SmoothL1, p, y),
                     baseline_locator_loss_value(LocatorLossKind::SoftIou, p, y),
                     baseline_locator_loss_value(LocatorLossKind::Mse, p, y),
                     baseline_locator_loss_value(LocatorLossKind::Mae, p, y)}) {
      CHECK(std::isfinite(v));
      CHECK(v >= 0.0);
    }
  }
}

TEST_CASE("loss config validation") {
  LossConfig cfg;
  SUBCASE("defaults are valid") { CHECK_NOTHROW(cfg.validate()); }
  SUBCASE("negative weight") {
    cfg.w3 = -1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("w_boundary below 1") {
    cfg.w_boundary = 0.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("zero smooth") {
    cfg.smooth = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
}

TEST_CASE("quick finite-difference sanity for every loss") {
  GradCheckOptions opts;
  opts.instances = 10;
  opts.t_max = 24;
  GradCheckReport rep = run_gradcheck(opts);
  for (const auto& e : rep.entries) {
    INFO(e.name, " max_rel_err=", e.max_rel_err);
    CHECK(e.pass);
  }
}

TEST_CASE("the checker flags an injected wrong-sign gradient") {
  Vec p0 = vec({0.3, 0.6, 0.8});
  Vec y = vec({0, 1, 1});
  ValueFn f = [&](const Vec& p) {
    return baseline_locator_loss_value(LocatorLossKind::Mse, p, y);
  };
  GradFn bad = [&](const Vec& p) { return Vec(-2.0 / 3.0 * (p - y)); };
  CHECK(max_rel_err_fd(f, bad, p0, 1e-5) > 1e-2);
}
