#pragma once

#include <functional>
#include <string>
#include <vector>

#include "meldae/losses.hpp"
#include "meldae/rng.hpp"

namespace meldae {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool all_pass() const;
  std::string text() const;
};

using ValueFn = std::function<double(const Vec&)>;
using GradFn = std::function<Vec(const Vec&)>;

// Central finite differences against an analytic gradient; returns the worst
// relative error over the entries of p0. Relative error uses a floored
// denominator so near-zero gradients are compared absolutely.
double max_rel_err_fd(const ValueFn& f, const GradFn& g, const Vec& p0, double h);

struct GradCheckOptions {
  int instances = 100;
  int t_min = 2;
  int t_max = 64;
  double h = 1e-5;
  double tol = 1e-4;
  std::uint64_t seed = 7;
};

// Finite-difference sweep over every loss kind, plus a tiny end-to-end model
// probe (loss gradient w.r.t. a sample of model parameters).
GradCheckReport run_gradcheck(const GradCheckOptions& opts);

}  // namespace meldae
