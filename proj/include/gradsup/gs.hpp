#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gradsup/autodiff.hpp"
#include "gradsup/tensor.hpp"

namespace gradsup {

class Model;
struct Dataset;

// Undirected link between two dataset positions, stored with a < b so that
// (i,j) and (j,i) compare equal.
struct CounterfactualPair {
  std::size_t a = 0;
  std::size_t b = 0;
  friend bool operator==(const CounterfactualPair&,
                         const CounterfactualPair&) = default;
  friend auto operator<=>(const CounterfactualPair&,
                          const CounterfactualPair&) = default;
};

// Normalizes the endpoint order; rejects self-pairs.
CounterfactualPair make_undirected_pair(std::size_t i, std::size_t j);

struct GsConfig {
  double lambda = 1.0;
  double norm_epsilon = 1e-8;
  bool bidirectional = true;
  // Multilabel pairs differing in several classes: one term per differing
  // class when set, lowest differing index only otherwise.
  bool per_class = true;
};

// One supervised class of a pair: which logit to differentiate and which
// endpoint carries the positive label (the target direction points at it).
struct SupervisedClass {
  std::size_t class_index = 0;
  bool positive_is_b = false;
};

// Classes whose presence differs between the two label vectors, ascending.
// Throws when none differ; when several differ and per_class is off, only the
// lowest index is kept.
std::vector<SupervisedClass> supervised_classes(std::span<const int> y_a,
                                                std::span<const int> y_b,
                                                bool per_class);

// x_to - x_from; rejects identical inputs (degenerate pair).
Tensor target_gradient(const Tensor& x_from, const Tensor& x_to);

// 1 - g.ghat / (max(|g|, eps) * max(|ghat|, eps)), built from autodiff ops so
// it stays differentiable through g.
ad::Var gs_loss(const ad::Var& g, const ad::Var& g_hat,
                double norm_epsilon = 1e-8);

// The logit whose input-gradient the pair supervises. Binary scalar-output
// models always return their single logit; wider models return the logit of
// the class positive on exactly one side.
ad::Var select_supervised_output(const ad::Var& logits,
                                 std::span<const int> y_a,
                                 std::span<const int> y_b,
                                 bool tie_break_lowest = true);

// main + lambda * gs.
ad::Var combined_loss(const ad::Var& main, const ad::Var& gs, double lambda);

struct GsBatch {
  ad::Var loss;  // scalar; a constant 0 when no pair contributed
  std::size_t terms = 0;
  bool empty() const { return terms == 0; }
};

// Mean gs_loss over the supervised endpoints of the given pairs. The target
// direction always points from the negative-side example toward the
// positive-side one; bidirectional mode adds the positive endpoint's own
// gradient term against the same direction.
GsBatch batch_gs_loss(const Model& model, const Dataset& data,
                      std::span<const CounterfactualPair> pairs,
                      const GsConfig& config);

}  // namespace gradsup
