#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "gradsup/tensor.hpp"

namespace gradsup::ad {

class Var;

namespace detail {

// One node of the computation graph. Nodes only reference their inputs,
// which were created earlier, so the graph is acyclic and reverse creation
// order is a topological order for the backward pass.
struct Node {
  std::uint64_t id = 0;
  Tensor value;
  bool requires_grad = false;
  bool is_leaf = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Maps the gradient flowing into this node to gradients for each input.
  // Implemented with the public ops so that, when grad recording is on,
  // the produced gradients are themselves differentiable (double backprop).
  std::function<std::vector<Var>(const Var& grad_out)> backward;
};

std::uint64_t next_node_id();

}  // namespace detail

// Handle to a graph node. Cheap to copy; the graph is confined to the
// thread that built it.
class Var {
 public:
  Var() = default;

  const Tensor& value() const { return node()->value; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  double item() const { return value().item(); }

  // Mutable storage, leaves only (a Var is a handle, so a const handle still
  // reaches the node). Used by optimizers and the finite-difference probe;
  // graphs built from old values are stale after.
  Tensor& leaf_value() const;

  static Var make(Tensor value, bool requires_grad, bool leaf, const char* op,
                  std::vector<std::shared_ptr<detail::Node>> inputs,
                  std::function<std::vector<Var>(const Var&)> backward);

  std::shared_ptr<detail::Node> node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node() const {
    if (!node_) throw std::invalid_argument("use of empty Var");
    return node_;
  }
  std::shared_ptr<detail::Node> node_;
};

// Leaf that participates in differentiation (model weights, probed inputs).
Var parameter(Tensor value);
// Leaf excluded from differentiation (data, targets, masks).
Var constant(Tensor value);
Var constant(double scalar);

// While alive, ops evaluate without recording graph links. Used for
// inference paths and the non-retained backward pass.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_recording_enabled();

// Reverse-mode gradients of a scalar output with respect to `wrt`.
// Each reachable node's backward runs exactly once with its accumulated
// gradient, in reverse creation order. With create_graph the returned
// gradients carry graph links and can be differentiated again; without it
// they are constants and differentiating them is an error.
// Throws if output is not scalar, does not require grad, or some wrt
// variable is not in output's graph.
std::vector<Var> gradients(const Var& output, std::span<const Var> wrt,
                           bool create_graph = false);
Var gradient(const Var& output, const Var& wrt, bool create_graph = false);

// ---- ops ----
// Binary elementwise ops take equal shapes, or a scalar on either side.

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);

Var add(const Var& a, double b);
Var sub(double a, const Var& b);
Var mul(const Var& a, double b);
Var div(const Var& a, double b);

Var sum(const Var& a);                  // -> scalar
Var dot(const Var& a, const Var& b);    // vectors -> scalar

Var matvec(const Var& w, const Var& x);   // (r,c)x(c) -> (r)
Var tmatvec(const Var& w, const Var& y);  // (r,c)^T x(r) -> (c)
Var outer(const Var& u, const Var& v);    // (r)x(c) -> (r,c)

Var relu(const Var& a);     // d/dx at 0 is defined as 0
Var sigmoid(const Var& a);  // numerically stable, output in (0,1)
Var sqrt(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var maximum(const Var& a, double floor);  // d/dx at a==floor is 0

Var pick(const Var& v, std::size_t i);  // vector component -> scalar

// Stable fused losses; derivatives are taken on logits.
Var bce_with_logit(const Var& logit, double target);  // target in {0,1}
Var softmax(const Var& logits);
Var softmax_ce(const Var& logits, std::size_t target_class);

Var affine(const Var& x, const Var& w, const Var& b);  // w x + b

// ∂output/∂input. With retain the result is differentiable with respect to
// anything upstream (the second-order path of the GS objective).
Var input_gradient(const Var& output, const Var& input, bool retain);

// Gradients of a scalar loss for a parameter list, plain tensors.
std::vector<Tensor> parameter_gradients(const Var& loss,
                                        std::span<const Var> params);

// Central-difference check of parameter_gradients. make_loss rebuilds the
// loss from the parameters' current values; params are perturbed in place
// and restored. Returns the elementwise max relative error with denominator
// max(|a|,|b|,1e-8).
double finite_difference_check(const std::function<Var()>& make_loss,
                               std::span<Var> params, double eps);

}  // namespace gradsup::ad
