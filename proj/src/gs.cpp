#include "gradsup/gs.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "gradsup/data.hpp"
#include "gradsup/model.hpp"

namespace gradsup {

CounterfactualPair make_undirected_pair(std::size_t i, std::size_t j) {
  if (i == j)
    throw std::invalid_argument("counterfactual pair links an example to itself");
  return i < j ? CounterfactualPair{i, j} : CounterfactualPair{j, i};
}

std::vector<SupervisedClass> supervised_classes(std::span<const int> y_a,
                                                std::span<const int> y_b,
                                                bool per_class) {
  if (y_a.size() != y_b.size())
    throw std::invalid_argument("pair label vectors have different lengths");
  std::vector<SupervisedClass> out;
  for (std::size_t c = 0; c < y_a.size(); ++c) {
    if (y_a[c] != y_b[c]) out.push_back({c, y_b[c] == 1});
  }
  if (out.empty())
    throw std::invalid_argument("no class differs within the pair");
  if (!per_class && out.size() > 1) out.resize(1);
  return out;
}

Tensor target_gradient(const Tensor& x_from, const Tensor& x_to) {
  if (x_from.shape() != x_to.shape())
    throw std::invalid_argument("target_gradient: endpoint shapes differ");
  Tensor d = Tensor::zeros(x_from.shape());
  bool nonzero = false;
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = x_to[i] - x_from[i];
    nonzero |= d[i] != 0.0;
  }
  if (!nonzero) throw std::invalid_argument("degenerate pair: endpoints coincide");
  return d;
}

ad::Var gs_loss(const ad::Var& g, const ad::Var& g_hat, double norm_epsilon) {
  if (norm_epsilon <= 0.0)
    throw std::invalid_argument("gs_loss: norm epsilon must be positive");
  if (g.value().size() != g_hat.value().size())
    throw std::invalid_argument("gs_loss: vector lengths differ");
  double hat_sq = 0.0;
  for (std::size_t i = 0; i < g_hat.value().size(); ++i)
    hat_sq += g_hat.value()[i] * g_hat.value()[i];
  if (hat_sq == 0.0)
    throw std::invalid_argument("gs_loss: zero target gradient (degenerate pair)");
  using namespace ad;
  Var gn = maximum(sqrt(dot(g, g)), norm_epsilon);
  Var hn = maximum(sqrt(dot(g_hat, g_hat)), norm_epsilon);
  return sub(1.0, div(dot(g, g_hat), mul(gn, hn)));
}

ad::Var select_supervised_output(const ad::Var& logits,
                                 std::span<const int> y_a,
                                 std::span<const int> y_b,
                                 bool tie_break_lowest) {
  if (logits.size() == 1) return ad::pick(logits, 0);
  auto classes = supervised_classes(y_a, y_b, true);
  if (classes.size() > 1 && !tie_break_lowest)
    throw std::invalid_argument(
        "pair differs in several classes and no tie-break is configured");
  return ad::pick(logits, classes.front().class_index);
}

ad::Var combined_loss(const ad::Var& main, const ad::Var& gs, double lambda) {
  if (lambda < 0.0)
    throw std::invalid_argument("combined_loss: lambda must be non-negative");
  return ad::add(main, ad::mul(gs, lambda));
}

GsBatch batch_gs_loss(const Model& model, const Dataset& data,
                      std::span<const CounterfactualPair> pairs,
                      const GsConfig& config) {
  if (config.lambda < 0.0 || config.norm_epsilon <= 0.0)
    throw std::invalid_argument("batch_gs_loss: invalid GS configuration");
  GsBatch out;
  out.loss = ad::constant(0.0);
  if (pairs.empty()) return out;

  ad::Var acc = ad::constant(0.0);
  for (const auto& pair : pairs) {
    if (pair.a >= data.examples.size() || pair.b >= data.examples.size())
      throw std::out_of_range("batch_gs_loss: pair index " +
                              std::to_string(std::max(pair.a, pair.b)) +
                              " outside dataset");
    const Example& ea = data.examples[pair.a];
    const Example& eb = data.examples[pair.b];
    if (!ea.features || !eb.features)
      throw std::invalid_argument("batch_gs_loss: paired example lacks features");
    auto classes = supervised_classes(ea.labels, eb.labels, config.per_class);
    Tensor xa = Tensor::vec(*ea.features);
    Tensor xb = Tensor::vec(*eb.features);
    for (const auto& sc : classes) {
      const Tensor& x_pos = sc.positive_is_b ? xb : xa;
      const Tensor& x_neg = sc.positive_is_b ? xa : xb;
      Tensor d = target_gradient(x_neg, x_pos);
      auto endpoint_term = [&](const Tensor& x) {
        ad::Var xin = ad::parameter(x);
        ad::Var logit = model.output_arity() == 1
                            ? ad::pick(model.forward(xin), 0)
                            : ad::pick(model.forward(xin), sc.class_index);
        ad::Var g = ad::input_gradient(logit, xin, true);
        return gs_loss(g, ad::constant(d), config.norm_epsilon);
      };
      acc = ad::add(acc, endpoint_term(x_neg));
      ++out.terms;
      if (config.bidirectional) {
        acc = ad::add(acc, endpoint_term(x_pos));
        ++out.terms;
      }
    }
  }
  out.loss = ad::div(acc, static_cast<double>(out.terms));
  return out;
}

}  // namespace gradsup
