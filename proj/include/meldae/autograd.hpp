#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <vector>

#include "meldae/rng.hpp"

namespace meldae::ad {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// One tape node. Values are dense matrices; scalars are 1x1.
struct Node {
  Mat value;
  Mat grad;  // sized lazily on first accumulation
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // pushes this->grad into parents
  Mat* grad_sink = nullptr;             // leaves: external gradient accumulator
  bool needs_grad = false;

  void accumulate(const Mat& g) {
    if (grad.size() == 0) grad = Mat::Zero(value.rows(), value.cols());
    grad += g;
  }
};

using NodePtr = std::shared_ptr<Node>;

// Value-semantic handle to a tape node.
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr n) : node_(std::move(n)) {}

  const Mat& value() const { return node_->value; }
  const Mat& grad() const { return node_->grad; }
  double scalar() const { return node_->value(0, 0); }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  bool valid() const { return node_ != nullptr; }
  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

Var constant(Mat v);
Var constant_scalar(double v);
// Leaf whose gradient, after backward(), is added into *grad_sink (may be null
// to only make the value differentiable through).
Var leaf(const Mat& v, Mat* grad_sink);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var cmul(const Var& a, const Var& b);  // elementwise
Var cdiv(const Var& a, const Var& b);  // elementwise
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var log(const Var& a);
Var pow(const Var& a, double e);
Var abs(const Var& a);
Var square(const Var& a);
// Huber with delta = 1, elementwise on (a - b_const)
Var huber(const Var& a, const Mat& target);
Var clamp(const Var& a, double lo, double hi);  // zero grad outside [lo, hi]
Var softmax_rows(const Var& a);
Var hcat(const Var& a, const Var& b);
Var vcat(const std::vector<Var>& parts);
Var rows(const Var& a, Eigen::Index r0, Eigen::Index n);
Var cols(const Var& a, Eigen::Index c0, Eigen::Index n);
Var sum(const Var& a);       // 1x1
Var mean(const Var& a);      // 1x1
Var colmean(const Var& a);   // 1 x C (mean over rows)
Var add_rowvec(const Var& m, const Var& r);  // broadcast 1xC row onto each row
// Inverted dropout; identity when rate == 0. Mask drawn from rng.
Var dropout(const Var& a, double rate, Rng& rng);

// Reverse pass from a 1x1 root. Accumulates into every reachable leaf's sink.
void backward(const Var& root);

}  // namespace meldae::ad
