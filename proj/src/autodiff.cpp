#include "gradsup/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <unordered_map>
#include <unordered_set>

namespace gradsup::ad {

namespace detail {

namespace {
thread_local std::uint64_t node_counter = 0;
thread_local int no_grad_depth = 0;
}  // namespace

std::uint64_t next_node_id() { return ++node_counter; }

}  // namespace detail

bool grad_recording_enabled() { return detail::no_grad_depth == 0; }

NoGradGuard::NoGradGuard() { ++detail::no_grad_depth; }
NoGradGuard::~NoGradGuard() { --detail::no_grad_depth; }

Var Var::make(Tensor value, bool requires_grad, bool leaf, const char* op,
              std::vector<std::shared_ptr<detail::Node>> inputs,
              std::function<std::vector<Var>(const Var&)> backward) {
  auto n = std::make_shared<detail::Node>();
  n->id = detail::next_node_id();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->is_leaf = leaf;
  n->op = op;
  n->inputs = std::move(inputs);
  n->backward = std::move(backward);
  Var v;
  v.node_ = std::move(n);
  return v;
}

Tensor& Var::leaf_value() const {
  auto n = node();
  if (!n->is_leaf)
    throw std::invalid_argument("leaf_value: not a leaf (op=" +
                                std::string(n->op) + ")");
  return n->value;
}

Var parameter(Tensor value) {
  return Var::make(std::move(value), true, true, "leaf", {}, nullptr);
}

Var constant(Tensor value) {
  return Var::make(std::move(value), false, true, "const", {}, nullptr);
}

Var constant(double scalar) { return constant(Tensor::scalar(scalar)); }

namespace {

using detail::Node;

Var make_op(Tensor value, const char* op, std::vector<Var> inputs,
            std::function<std::vector<Var>(const Var&)> backward) {
  bool wants_grad = false;
  for (const auto& v : inputs) wants_grad = wants_grad || v.requires_grad();
  if (!grad_recording_enabled() || !wants_grad)
    return constant(std::move(value));
  std::vector<std::shared_ptr<Node>> in_nodes;
  in_nodes.reserve(inputs.size());
  for (const auto& v : inputs) in_nodes.push_back(v.node_ptr());
  return Var::make(std::move(value), true, false, op, std::move(in_nodes),
                   std::move(backward));
}

void check_same_or_scalar(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b) && !a.is_scalar() && !b.is_scalar())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                a.shape_str() + " vs " + b.shape_str());
}

// Elementwise apply with scalar broadcast on either side.
template <typename F>
Tensor broadcast_apply(const Tensor& a, const Tensor& b, F f) {
  const Tensor& big = a.is_scalar() ? b : a;
  Tensor out = Tensor::zeros(big.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double av = a.is_scalar() ? a[0] : a[i];
    double bv = b.is_scalar() ? b[0] : b[i];
    out[i] = f(av, bv);
  }
  return out;
}

// Collapses a gradient to a scalar when the differentiated operand was a
// scalar broadcast against a tensor.
Var reduce_like(const Var& grad, const Var& operand) {
  if (operand.value().is_scalar() && !grad.value().is_scalar())
    return sum(grad);
  return grad;
}

Tensor ones_like(const Tensor& t) {
  Tensor out = Tensor::zeros(t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0;
  return out;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var add(const Var& a, const Var& b) {
  check_same_or_scalar(a.value(), b.value(), "add");
  Tensor out = broadcast_apply(a.value(), b.value(),
                               [](double x, double y) { return x + y; });
  return make_op(std::move(out), "add", {a, b}, [a, b](const Var& g) {
    return std::vector<Var>{reduce_like(g, a), reduce_like(g, b)};
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_or_scalar(a.value(), b.value(), "sub");
  Tensor out = broadcast_apply(a.value(), b.value(),
                               [](double x, double y) { return x - y; });
  return make_op(std::move(out), "sub", {a, b}, [a, b](const Var& g) {
    return std::vector<Var>{reduce_like(g, a), reduce_like(neg(g), b)};
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_or_scalar(a.value(), b.value(), "mul");
  Tensor out = broadcast_apply(a.value(), b.value(),
                               [](double x, double y) { return x * y; });
  return make_op(std::move(out), "mul", {a, b}, [a, b](const Var& g) {
    return std::vector<Var>{reduce_like(mul(g, b), a),
                            reduce_like(mul(g, a), b)};
  });
}

Var div(const Var& a, const Var& b) {
  check_same_or_scalar(a.value(), b.value(), "div");
  Tensor out = broadcast_apply(a.value(), b.value(),
                               [](double x, double y) { return x / y; });
  return make_op(std::move(out), "div", {a, b}, [a, b](const Var& g) {
    Var ga = reduce_like(div(g, b), a);
    Var gb = reduce_like(neg(div(mul(g, a), mul(b, b))), b);
    return std::vector<Var>{ga, gb};
  });
}

Var neg(const Var& a) { return mul(a, -1.0); }

Var add(const Var& a, double b) { return add(a, constant(b)); }
Var sub(double a, const Var& b) { return sub(constant(a), b); }
Var mul(const Var& a, double b) { return mul(a, constant(b)); }

Var div(const Var& a, double b) { return div(a, constant(b)); }

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return make_op(Tensor::scalar(total), "sum", {a}, [a](const Var& g) {
    return std::vector<Var>{mul(g, constant(ones_like(a.value())))};
  });
}

Var dot(const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument("dot: shape mismatch " +
                                a.value().shape_str() + " vs " +
                                b.value().shape_str());
  double total = 0.0;
  auto da = a.value().data();
  auto db = b.value().data();
  for (std::size_t i = 0; i < da.size(); ++i) total += da[i] * db[i];
  return make_op(Tensor::scalar(total), "dot", {a, b}, [a, b](const Var& g) {
    return std::vector<Var>{mul(b, g), mul(a, g)};
  });
}

Var matvec(const Var& w, const Var& x) {
  const Tensor& wt = w.value();
  const Tensor& xt = x.value();
  if (wt.rank() != 2 || xt.rank() != 1 || wt.cols() != xt.size())
    throw std::invalid_argument("matvec: shape mismatch " + wt.shape_str() +
                                " x " + xt.shape_str());
  Tensor out = Tensor::zeros({wt.rows()});
  for (std::size_t r = 0; r < wt.rows(); ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < wt.cols(); ++c) acc += wt.at(r, c) * xt[c];
    out[r] = acc;
  }
  return make_op(std::move(out), "matvec", {w, x}, [w, x](const Var& g) {
    return std::vector<Var>{outer(g, x), tmatvec(w, g)};
  });
}

Var tmatvec(const Var& w, const Var& y) {
  const Tensor& wt = w.value();
  const Tensor& yt = y.value();
  if (wt.rank() != 2 || yt.rank() != 1 || wt.rows() != yt.size())
    throw std::invalid_argument("tmatvec: shape mismatch " + wt.shape_str() +
                                "^T x " + yt.shape_str());
  Tensor out = Tensor::zeros({wt.cols()});
  for (std::size_t r = 0; r < wt.rows(); ++r)
    for (std::size_t c = 0; c < wt.cols(); ++c)
      out[c] += wt.at(r, c) * yt[r];
  return make_op(std::move(out), "tmatvec", {w, y}, [w, y](const Var& g) {
    return std::vector<Var>{outer(y, g), matvec(w, g)};
  });
}

Var outer(const Var& u, const Var& v) {
  const Tensor& ut = u.value();
  const Tensor& vt = v.value();
  if (ut.rank() != 1 || vt.rank() != 1)
    throw std::invalid_argument("outer: expects vectors, got " +
                                ut.shape_str() + " and " + vt.shape_str());
  Tensor out = Tensor::zeros({ut.size(), vt.size()});
  for (std::size_t r = 0; r < ut.size(); ++r)
    for (std::size_t c = 0; c < vt.size(); ++c) out.at(r, c) = ut[r] * vt[c];
  return make_op(std::move(out), "outer", {u, v}, [u, v](const Var& g) {
    return std::vector<Var>{matvec(g, v), tmatvec(g, u)};
  });
}

Var relu(const Var& a) {
  Tensor out = Tensor::zeros(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.value()[i] > 0.0 ? a.value()[i] : 0.0;
  return make_op(std::move(out), "relu", {a}, [a](const Var& g) {
    // Mask is piecewise constant; its second derivative is 0 a.e., so a
    // plain constant keeps higher-order passes correct.
    Tensor mask = Tensor::zeros(a.value().shape());
    for (std::size_t i = 0; i < mask.size(); ++i)
      mask[i] = a.value()[i] > 0.0 ? 1.0 : 0.0;
    return std::vector<Var>{mul(g, constant(std::move(mask)))};
  });
}

Var sigmoid(const Var& a) {
  Tensor out = Tensor::zeros(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = stable_sigmoid(a.value()[i]);
  return make_op(std::move(out), "sigmoid", {a}, [a](const Var& g) {
    Var s = sigmoid(a);
    return std::vector<Var>{mul(mul(g, s), sub(1.0, s))};
  });
}

Var sqrt(const Var& a) {
  Tensor out = Tensor::zeros(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(a.value()[i]);
  return make_op(std::move(out), "sqrt", {a}, [a](const Var& g) {
    // Floor keeps 0 * d(sqrt)/dx at x=0 finite instead of 0 * inf = NaN
    // (the masked branch of the GS norm guard hits this).
    Var root = maximum(sqrt(a), 1e-300);
    return std::vector<Var>{div(mul(g, 0.5), root)};
  });
}

Var exp(const Var& a) {
  Tensor out = Tensor::zeros(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.value()[i]);
  return make_op(std::move(out), "exp", {a}, [a](const Var& g) {
    return std::vector<Var>{mul(g, exp(a))};
  });
}

Var log(const Var& a) {
  Tensor out = Tensor::zeros(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.value()[i]);
  return make_op(std::move(out), "log", {a}, [a](const Var& g) {
    return std::vector<Var>{div(g, a)};
  });
}

Var maximum(const Var& a, double floor) {
  Tensor out = Tensor::zeros(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.value()[i] > floor ? a.value()[i] : floor;
  return make_op(std::move(out), "maximum", {a}, [a, floor](const Var& g) {
    Tensor mask = Tensor::zeros(a.value().shape());
    for (std::size_t i = 0; i < mask.size(); ++i)
      mask[i] = a.value()[i] > floor ? 1.0 : 0.0;
    return std::vector<Var>{mul(g, constant(std::move(mask)))};
  });
}

Var pick(const Var& v, std::size_t i) {
  const Tensor& t = v.value();
  if (t.rank() != 1)
    throw std::invalid_argument("pick: expects a vector, got " +
                                t.shape_str());
  if (i >= t.size())
    throw std::out_of_range("pick: index " + std::to_string(i) +
                            " out of range for length " +
                            std::to_string(t.size()));
  return make_op(Tensor::scalar(t[i]), "pick", {v}, [v, i](const Var& g) {
    Tensor onehot = Tensor::zeros(v.value().shape());
    onehot[i] = 1.0;
    return std::vector<Var>{mul(constant(std::move(onehot)), g)};
  });
}

Var bce_with_logit(const Var& logit, double target) {
  if (target != 0.0 && target != 1.0)
    throw std::invalid_argument("bce_with_logit: target must be 0 or 1");
  double z = logit.value().item();
  // max(z,0) - z t + log(1 + e^{-|z|}), the log-sum-exp form.
  double loss = (z > 0.0 ? z : 0.0) - z * target + std::log1p(std::exp(-std::abs(z)));
  return make_op(Tensor::scalar(loss), "bce_with_logit", {logit},
                 [logit, target](const Var& g) {
                   Var dz = add(sigmoid(logit), -target);
                   return std::vector<Var>{mul(g, dz)};
                 });
}

Var softmax(const Var& logits) {
  const Tensor& z = logits.value();
  if (z.rank() != 1)
    throw std::invalid_argument("softmax: expects a vector, got " +
                                z.shape_str());
  double zmax = z[0];
  for (std::size_t i = 1; i < z.size(); ++i) zmax = std::max(zmax, z[i]);
  Tensor out = Tensor::zeros(z.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - zmax);
    total += out[i];
  }
  for (std::size_t i = 0; i < z.size(); ++i) out[i] /= total;
  return make_op(std::move(out), "softmax", {logits}, [logits](const Var& g) {
    Var s = softmax(logits);
    return std::vector<Var>{mul(s, sub(g, dot(s, g)))};
  });
}

Var softmax_ce(const Var& logits, std::size_t target_class) {
  const Tensor& z = logits.value();
  if (z.rank() != 1)
    throw std::invalid_argument("softmax_ce: expects a vector, got " +
                                z.shape_str());
  if (target_class >= z.size())
    throw std::out_of_range("softmax_ce: class " +
                            std::to_string(target_class) +
                            " out of range for " + std::to_string(z.size()) +
                            " logits");
  double zmax = z[0];
  for (std::size_t i = 1; i < z.size(); ++i) zmax = std::max(zmax, z[i]);
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) total += std::exp(z[i] - zmax);
  double loss = zmax + std::log(total) - z[target_class];
  return make_op(Tensor::scalar(loss), "softmax_ce", {logits},
                 [logits, target_class](const Var& g) {
                   Tensor onehot = Tensor::zeros(logits.value().shape());
                   onehot[target_class] = 1.0;
                   Var dz = sub(softmax(logits), constant(std::move(onehot)));
                   return std::vector<Var>{mul(dz, g)};
                 });
}

Var affine(const Var& x, const Var& w, const Var& b) {
  return add(matvec(w, x), b);
}

std::vector<Var> gradients(const Var& output, std::span<const Var> wrt,
                           bool create_graph) {
  if (!output.defined())
    throw std::invalid_argument("gradients: empty output");
  if (output.size() != 1)
    throw std::invalid_argument("gradients: output must be scalar, got " +
                                output.value().shape_str());
  if (!output.requires_grad())
    throw std::invalid_argument(
        "gradients: output does not require grad (built without graph "
        "retention)");

  using detail::Node;

  // Reachable requires-grad subgraph.
  std::unordered_set<Node*> reachable;
  std::vector<Node*> stack{output.node_ptr().get()};
  reachable.insert(stack[0]);
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    for (const auto& in : n->inputs) {
      if (in->requires_grad && reachable.insert(in.get()).second)
        stack.push_back(in.get());
    }
  }

  for (std::size_t i = 0; i < wrt.size(); ++i) {
    if (!wrt[i].defined() || !wrt[i].requires_grad() ||
        !reachable.count(wrt[i].node_ptr().get()))
      throw std::invalid_argument("gradients: wrt[" + std::to_string(i) +
                                  "] is not in the output's graph");
  }

  std::vector<Node*> order(reachable.begin(), reachable.end());
  std::sort(order.begin(), order.end(),
            [](Node* a, Node* b) { return a->id > b->id; });

  std::optional<NoGradGuard> guard;
  if (!create_graph) guard.emplace();

  std::unordered_map<Node*, Var> acc;
  acc[output.node_ptr().get()] =
      constant(Tensor::scalar(1.0));

  for (Node* n : order) {
    auto it = acc.find(n);
    if (it == acc.end() || !n->backward) continue;
    std::vector<Var> in_grads = n->backward(it->second);
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      Node* in = n->inputs[i].get();
      if (!in->requires_grad || !in_grads[i].defined()) continue;
      auto slot = acc.find(in);
      if (slot == acc.end())
        acc.emplace(in, in_grads[i]);
      else
        slot->second = add(slot->second, in_grads[i]);
    }
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (const auto& v : wrt) {
    auto it = acc.find(v.node_ptr().get());
    if (it != acc.end())
      result.push_back(it->second);
    else
      result.push_back(constant(Tensor::zeros(v.value().shape())));
  }
  return result;
}

Var gradient(const Var& output, const Var& wrt, bool create_graph) {
  const Var list[] = {wrt};
  return gradients(output, list, create_graph)[0];
}

Var input_gradient(const Var& output, const Var& input, bool retain) {
  return gradient(output, input, retain);
}

std::vector<Tensor> parameter_gradients(const Var& loss,
                                        std::span<const Var> params) {
  auto grads = gradients(loss, params, false);
  std::vector<Tensor> out;
  out.reserve(grads.size());
  for (const auto& g : grads) out.push_back(g.value());
  return out;
}

double finite_difference_check(const std::function<Var()>& make_loss,
                               std::span<Var> params, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("finite_difference_check: eps must be > 0");
  Var loss = make_loss();
  std::vector<Var> wrt(params.begin(), params.end());
  auto analytic = parameter_gradients(loss, wrt);

  double max_rel = 0.0;
  for (std::size_t p = 0; p < wrt.size(); ++p) {
    Tensor& value = wrt[p].leaf_value();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + eps;
      double hi = make_loss().value().item();
      value[i] = saved - eps;
      double lo = make_loss().value().item();
      value[i] = saved;
      double numeric = (hi - lo) / (2.0 * eps);
      double a = analytic[p][i];
      double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace gradsup::ad
