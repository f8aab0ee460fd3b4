#include "meldae/autograd.hpp"

#include <cmath>
#include <unordered_set>

#include "meldae/errors.hpp"

namespace meldae::ad {

namespace {

NodePtr make(Mat v, std::vector<NodePtr> parents, std::function<void(Node&)> bp) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  bool ng = false;
  for (auto& p : parents) ng = ng || p->needs_grad;
  n->needs_grad = ng;
  if (ng) {
    n->parents = std::move(parents);
    n->backprop = std::move(bp);
  }
  return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch");
}

}  // namespace

Var constant(Mat v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  return Var(n);
}

Var constant_scalar(double v) { return constant(Mat::Constant(1, 1, v)); }

Var leaf(const Mat& v, Mat* grad_sink) {
  auto n = std::make_shared<Node>();
  n->value = v;
  n->needs_grad = true;
  n->grad_sink = grad_sink;
  return Var(n);
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dims differ");
  auto pa = a.node(), pb = b.node();
  return Var(make(pa->value * pb->value, {pa, pb}, [pa, pb](Node& n) {
    if (pa->needs_grad) pa->accumulate(n.grad * pb->value.transpose());
    if (pb->needs_grad) pb->accumulate(pa->value.transpose() * n.grad);
  }));
}

Var transpose(const Var& a) {
  auto p = a.node();
  return Var(make(p->value.transpose(), {p},
                  [p](Node& n) { p->accumulate(n.grad.transpose()); }));
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  auto pa = a.node(), pb = b.node();
  return Var(make(pa->value + pb->value, {pa, pb}, [pa, pb](Node& n) {
    if (pa->needs_grad) pa->accumulate(n.grad);
    if (pb->needs_grad) pb->accumulate(n.grad);
  }));
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  auto pa = a.node(), pb = b.node();
  return Var(make(pa->value - pb->value, {pa, pb}, [pa, pb](Node& n) {
    if (pa->needs_grad) pa->accumulate(n.grad);
    if (pb->needs_grad) pb->accumulate(-n.grad);
  }));
}

Var cmul(const Var& a, const Var& b) {
  check_same_shape(a, b, "cmul");
  auto pa = a.node(), pb = b.node();
  return Var(make(pa->value.cwiseProduct(pb->value), {pa, pb}, [pa, pb](Node& n) {
    if (pa->needs_grad) pa->accumulate(n.grad.cwiseProduct(pb->value));
    if (pb->needs_grad) pb->accumulate(n.grad.cwiseProduct(pa->value));
  }));
}

Var cdiv(const Var& a, const Var& b) {
  check_same_shape(a, b, "cdiv");
  auto pa = a.node(), pb = b.node();
  return Var(make(pa->value.cwiseQuotient(pb->value), {pa, pb}, [pa, pb](Node& n) {
    if (pa->needs_grad) pa->accumulate(n.grad.cwiseQuotient(pb->value));
    if (pb->needs_grad)
      pb->accumulate(-n.grad.cwiseProduct(pa->value).cwiseQuotient(
          pb->value.cwiseProduct(pb->value)));
  }));
}

Var scale(const Var& a, double s) {
  auto p = a.node();
  return Var(make(p->value * s, {p}, [p, s](Node& n) { p->accumulate(n.grad * s); }));
}

Var add_scalar(const Var& a, double s) {
  auto p = a.node();
  return Var(make(p->value.array() + s, {p}, [p](Node& n) { p->accumulate(n.grad); }));
}

Var sigmoid(const Var& a) {
  auto p = a.node();
  Mat s = (1.0 / (1.0 + (-p->value.array()).exp())).matrix();
  return Var(make(s, {p}, [p](Node& n) {
    p->accumulate(
        (n.grad.array() * n.value.array() * (1.0 - n.value.array())).matrix());
  }));
}

Var tanh(const Var& a) {
  auto p = a.node();
  return Var(make(p->value.array().tanh().matrix(), {p}, [p](Node& n) {
    p->accumulate((n.grad.array() * (1.0 - n.value.array().square())).matrix());
  }));
}

Var log(const Var& a) {
  auto p = a.node();
  return Var(make(p->value.array().log().matrix(), {p}, [p](Node& n) {
    p->accumulate(n.grad.cwiseQuotient(p->value));
  }));
}

Var pow(const Var& a, double e) {
  auto p = a.node();
  return Var(make(p->value.array().pow(e).matrix(), {p}, [p, e](Node& n) {
    if (e == 0.0) return;
    p->accumulate((n.grad.array() * e * p->value.array().pow(e - 1.0)).matrix());
  }));
}

Var abs(const Var& a) {
  auto p = a.node();
  return Var(make(p->value.array().abs().matrix(), {p}, [p](Node& n) {
    p->accumulate((n.grad.array() * p->value.array().sign()).matrix());
  }));
}

Var square(const Var& a) {
  auto p = a.node();
  return Var(make(p->value.array().square().matrix(), {p}, [p](Node& n) {
    p->accumulate((n.grad.array() * 2.0 * p->value.array()).matrix());
  }));
}

Var huber(const Var& a, const Mat& target) {
  auto p = a.node();
  Mat d = p->value - target;
  Mat out(d.rows(), d.cols());
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    double x = d(i);
    out(i) = std::fabs(x) < 1.0 ? 0.5 * x * x : std::fabs(x) - 0.5;
  }
  return Var(make(out, {p}, [p, d](Node& n) {
    Mat g(d.rows(), d.cols());
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      double x = d(i);
      g(i) = std::fabs(x) < 1.0 ? x : (x > 0 ? 1.0 : -1.0);
    }
    p->accumulate(n.grad.cwiseProduct(g));
  }));
}

Var clamp(const Var& a, double lo, double hi) {
  auto p = a.node();
  return Var(make(p->value.array().max(lo).min(hi).matrix(), {p},
                  [p, lo, hi](Node& n) {
                    Mat g = n.grad;
                    for (Eigen::Index i = 0; i < g.size(); ++i)
                      if (p->value(i) < lo || p->value(i) > hi) g(i) = 0.0;
                    p->accumulate(g);
                  }));
}

Var softmax_rows(const Var& a) {
  auto p = a.node();
  Mat s(p->value.rows(), p->value.cols());
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    Eigen::ArrayXd row = p->value.row(r).array();
    row -= row.maxCoeff();
    Eigen::ArrayXd e = row.exp();
    s.row(r) = (e / e.sum()).matrix();
  }
  return Var(make(s, {p}, [p](Node& n) {
    Mat g(n.value.rows(), n.value.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      Eigen::ArrayXd sm = n.value.row(r).array();
      Eigen::ArrayXd gr = n.grad.row(r).array();
      double dot = (sm * gr).sum();
      g.row(r) = (sm * (gr - dot)).matrix();
    }
    p->accumulate(g);
  }));
}

Var hcat(const Var& a, const Var& b) {
  if (a.rows() != b.rows()) throw ShapeError("hcat: row mismatch");
  auto pa = a.node(), pb = b.node();
  Mat v(a.rows(), a.cols() + b.cols());
  v << pa->value, pb->value;
  Eigen::Index ca = a.cols();
  return Var(make(v, {pa, pb}, [pa, pb, ca](Node& n) {
    if (pa->needs_grad) pa->accumulate(n.grad.leftCols(ca));
    if (pb->needs_grad) pb->accumulate(n.grad.rightCols(n.grad.cols() - ca));
  }));
}

Var vcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("vcat: empty");
  Eigen::Index total = 0, c = parts[0].cols();
  for (auto& p : parts) {
    if (p.cols() != c) throw ShapeError("vcat: col mismatch");
    total += p.rows();
  }
  Mat v(total, c);
  std::vector<NodePtr> ps;
  Eigen::Index r = 0;
  for (auto& p : parts) {
    v.middleRows(r, p.rows()) = p.value();
    r += p.rows();
    ps.push_back(p.node());
  }
  auto ps_copy = ps;
  return Var(make(v, ps, [ps_copy](Node& n) {
    Eigen::Index r = 0;
    for (auto& p : ps_copy) {
      if (p->needs_grad) p->accumulate(n.grad.middleRows(r, p->value.rows()));
      r += p->value.rows();
    }
  }));
}

Var rows(const Var& a, Eigen::Index r0, Eigen::Index n) {
  auto p = a.node();
  return Var(make(p->value.middleRows(r0, n), {p}, [p, r0, n](Node& nd) {
    Mat g = Mat::Zero(p->value.rows(), p->value.cols());
    g.middleRows(r0, n) = nd.grad;
    p->accumulate(g);
  }));
}

Var cols(const Var& a, Eigen::Index c0, Eigen::Index n) {
  auto p = a.node();
  return Var(make(p->value.middleCols(c0, n), {p}, [p, c0, n](Node& nd) {
    Mat g = Mat::Zero(p->value.rows(), p->value.cols());
    g.middleCols(c0, n) = nd.grad;
    p->accumulate(g);
  }));
}

Var sum(const Var& a) {
  auto p = a.node();
  return Var(make(Mat::Constant(1, 1, p->value.sum()), {p}, [p](Node& n) {
    p->accumulate(Mat::Constant(p->value.rows(), p->value.cols(), n.grad(0, 0)));
  }));
}

Var mean(const Var& a) {
  auto p = a.node();
  double inv = 1.0 / double(p->value.size());
  return Var(make(Mat::Constant(1, 1, p->value.sum() * inv), {p}, [p, inv](Node& n) {
    p->accumulate(
        Mat::Constant(p->value.rows(), p->value.cols(), n.grad(0, 0) * inv));
  }));
}

Var colmean(const Var& a) {
  auto p = a.node();
  double inv = 1.0 / double(p->value.rows());
  return Var(make(p->value.colwise().mean(), {p}, [p, inv](Node& n) {
    p->accumulate(Mat::Ones(p->value.rows(), 1) * (n.grad * inv));
  }));
}

Var add_rowvec(const Var& m, const Var& r) {
  if (r.rows() != 1 || r.cols() != m.cols())
    throw ShapeError("add_rowvec: bad row vector");
  auto pm = m.node(), pr = r.node();
  Mat v = pm->value;
  v.rowwise() += pr->value.row(0);
  return Var(make(v, {pm, pr}, [pm, pr](Node& n) {
    if (pm->needs_grad) pm->accumulate(n.grad);
    if (pr->needs_grad) pr->accumulate(n.grad.colwise().sum());
  }));
}

Var dropout(const Var& a, double rate, Rng& rng) {
  if (rate <= 0.0) return a;
  auto p = a.node();
  Mat mask(p->value.rows(), p->value.cols());
  double keep = 1.0 - rate;
  for (Eigen::Index i = 0; i < mask.size(); ++i)
    mask(i) = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
  return Var(make(p->value.cwiseProduct(mask), {p}, [p, mask](Node& n) {
    p->accumulate(n.grad.cwiseProduct(mask));
  }));
}

void backward(const Var& root) {
  if (root.rows() != 1 || root.cols() != 1)
    throw ShapeError("backward: root must be scalar");
  // iterative topological order
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack{{root.node().get(), 0}};
  if (!root.node()->needs_grad) return;
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* par = n->parents[idx++].get();
      if (par->needs_grad && !seen.count(par)) {
        seen.insert(par);
        stack.push_back({par, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.node()->grad = Mat::Constant(1, 1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->grad.size() == 0) continue;
    if (n->backprop) n->backprop(*n);
    if (n->grad_sink) {
      if (n->grad_sink->size() == 0)
        *n->grad_sink = Mat::Zero(n->value.rows(), n->value.cols());
      *n->grad_sink += n->grad;
    }
  }
}

}  // namespace meldae::ad
