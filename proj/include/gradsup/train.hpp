#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "gradsup/data.hpp"
#include "gradsup/gs.hpp"
#include "gradsup/model.hpp"

namespace gradsup {

enum class OptimizerKind { AdaDelta, Sgd };
enum class Task { Auto, Binary, Multiclass, Multilabel };

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::AdaDelta;
  double learning_rate = 0.1;  // sgd only
  double rho = 0.95;           // adadelta decay
  double epsilon = 1e-6;       // adadelta stabilizer
  std::size_t batch_size = 64;
  std::size_t max_epochs = 30;
  std::size_t patience = 10;   // epochs without validation improvement
  std::size_t warmup_epochs = 0;  // epochs trained with the GS term off
  GsConfig gs;                 // gs.lambda weighs the GS term
  Task task = Task::Auto;
  std::uint64_t seed = 0;
  std::size_t ensemble = 1;
};

struct EpochStats {
  std::size_t epoch = 0;
  double main_loss = 0.0;
  double gs_loss = 0.0;
  double val_metric = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  // argmax of val_metric, earliest on ties; npos while empty.
  std::size_t chosen_epoch = npos;
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
};

struct TrainResult {
  ModelParams best;
  TrainHistory history;
};

// theta <- theta - lr * g, elementwise over the flat parameter list.
void sgd_step(std::vector<Tensor>& params, std::span<const Tensor> grads,
              double lr);

struct AdaDeltaState {
  std::vector<Tensor> sq_grad;
  std::vector<Tensor> sq_delta;
};

// Standard accumulator update: E[g2] <- rho E[g2] + (1-rho) g2;
// step = -sqrt(E[d2]+eps)/sqrt(E[g2]+eps) * g; E[d2] tracks the steps.
void adadelta_step(std::vector<Tensor>& params, std::span<const Tensor> grads,
                   AdaDeltaState& state, double rho, double eps);

// Mini-batch training of the combined objective. Pairs join a batch when
// either endpoint is sampled; the partner's features come from the dataset
// regardless of batch membership. Returns the snapshot of the best epoch by
// validation metric (accuracy, or mAP for multilabel tasks). Reruns with the
// same inputs are bit-identical. Non-finite loss aborts with the epoch/batch
// in the error.
TrainResult train(const ModelParams& init, const Dataset& train_data,
                  std::span<const CounterfactualPair> pairs,
                  const Dataset& val_data, const TrainConfig& config);

// Replaces each pair with uniformly drawn endpoints that carry different
// labels (and different features); same pair count, seeded.
std::vector<CounterfactualPair> randomize_relations(
    std::span<const CounterfactualPair> pairs, const Dataset& data,
    std::uint64_t seed);

// Permutes label vectors across examples and drops counterfactual links;
// features untouched.
Dataset shuffle_labels(const Dataset& data, std::uint64_t seed);

// k independent runs differing only by seed (init and data order), collected
// in seed order. GRADSUP_THREADS caps how many run concurrently.
std::vector<TrainResult> train_ensemble(const ModelParams& init,
                                        const Dataset& train_data,
                                        std::span<const CounterfactualPair> pairs,
                                        const Dataset& val_data,
                                        const TrainConfig& config);

// Resolves the Auto tag from the label structure: arity 1 is binary,
// one positive per row is multiclass, anything else multilabel.
Task detect_task(const Dataset& data, Task requested);

// Index of the largest value, earliest on ties; npos for empty input. This is
// the rule behind TrainHistory::chosen_epoch.
std::size_t argmax_earliest(std::span<const double> values);

std::string history_csv(const TrainHistory& history);

}  // namespace gradsup
