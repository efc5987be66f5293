#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gradsup/data.hpp"
#include "gradsup/gs.hpp"
#include "gradsup/model.hpp"

namespace gradsup {

// Fraction correct. Binary models count logit > 0 as positive; wider models
// take the argmax with ties resolved to the lowest index. Scores come from
// the logit average when several members are given.
double accuracy(std::span<const ModelParams> members, const Dataset& data);
double accuracy(const ModelParams& model, const Dataset& data);

// Average precision of one score column: all-points form, area under the
// interpolated precision envelope over recall. Ties rank by example index.
// Returns -1 when the column has no positive.
double average_precision(std::span<const double> scores,
                         std::span<const int> labels);

// Mean AP over classes with at least one positive; classes without positives
// are skipped and reported through `skipped`.
double mean_average_precision(const std::vector<std::vector<double>>& scores,
                              const std::vector<std::vector<int>>& labels,
                              std::vector<std::size_t>* skipped = nullptr);

// mAP of model (or ensemble) scores over a dataset.
double model_map(std::span<const ModelParams> members, const Dataset& data,
                 std::vector<std::size_t>* skipped = nullptr);
double model_map(const ModelParams& model, const Dataset& data,
                 std::vector<std::size_t>* skipped = nullptr);

// Mean cosine between the input-gradient of the supervised logit and the
// pair direction, measured at the negative-side endpoint of each supervised
// class, which makes it 1 minus the unidirectional batch GS loss up to the
// norm-guard epsilon.
double gradient_alignment(const ModelParams& model,
                          std::span<const CounterfactualPair> pairs,
                          const Dataset& data);

struct LinearizationGap {
  double gap = 0.0;   // |f(x_j) - f(x_i) - grad_f(x_i).(x_j - x_i)|
  double step = 0.0;  // |x_j - x_i|
};

// First-order Taylor remainder of the class-c logit across a pair. Affine
// models return an exact zero rather than summation round-off.
LinearizationGap linearization_gap(const ModelParams& model, const Tensor& x_i,
                                   const Tensor& x_j, std::size_t cls);

// Analytic no-information level: majority-class frequency for accuracy
// metrics, mean positive rate over evaluated classes for mAP.
double chance_level(const Dataset& data);

struct SplitReport {
  std::string name;
  std::string metric;  // "accuracy" or "map"
  double value = 0.0;
  double chance = 0.0;
  std::size_t examples = 0;
  std::vector<std::size_t> skipped_classes;  // mAP classes with no positives
};

struct SuiteReport {
  std::vector<SplitReport> rows;
  bool has_alignment = false;
  double alignment = 0.0;
  std::size_t ensemble_size = 1;
};

// One row per split, in the given order; alignment is measured on
// `pair_data`'s pairs when any exist. Deterministic, timestamp-free.
SuiteReport evaluate_suite(
    std::span<const ModelParams> members,
    const std::vector<std::pair<std::string, const Dataset*>>& splits,
    const Dataset* pair_data = nullptr);

std::string report_text(const SuiteReport& report);
std::string report_json(const SuiteReport& report);

}  // namespace gradsup
