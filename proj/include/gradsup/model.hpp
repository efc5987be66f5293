#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "gradsup/autodiff.hpp"
#include "gradsup/tensor.hpp"

namespace gradsup {

struct Dataset;

enum class Activation { None, Relu, Sigmoid };

std::string_view activation_name(Activation a);
Activation parse_activation(std::string_view name);

struct Layer {
  Tensor w;
  Tensor b;
  friend bool operator==(const Layer&, const Layer&) = default;
};

// Immutable weight snapshot; training produces new snapshots.
struct ModelParams {
  std::vector<Layer> layers;
  Activation hidden = Activation::Relu;
  std::uint64_t seed = 0;

  std::size_t input_width() const;
  std::size_t output_arity() const;
  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Deterministic init: weights uniform in +-sqrt(6/(fan_in+fan_out)), biases 0.
// sizes lists layer widths input-first, so {d, h, c} is a 2-layer model.
ModelParams init_model(std::span<const std::size_t> sizes, Activation hidden,
                       std::uint64_t seed);

// Graph-building view of a snapshot: weights become autodiff leaves once, and
// every forward call links new graph nodes to the same leaves, so parameter
// gradients accumulate across examples of a batch. Confined to one thread.
class Model {
 public:
  explicit Model(const ModelParams& src);

  // Pre-activation logits; losses and gradient supervision consume these.
  ad::Var forward(const ad::Var& x) const;
  ad::Var forward(const Tensor& x) const;

  std::span<const ad::Var> parameters() const { return params_; }
  ModelParams snapshot() const;
  std::size_t input_width() const;
  std::size_t output_arity() const;
  Activation hidden() const { return hidden_; }

 private:
  std::vector<ad::Var> params_;  // w0, b0, w1, b1, ...
  Activation hidden_;
  std::uint64_t seed_;
};

// Graph-free inference.
Tensor forward_values(const ModelParams& params, const Tensor& x);

// Arithmetic mean of member logits.
Tensor ensemble_logits(std::span<const ModelParams> members, const Tensor& x);

struct BowEncoderConfig {
  std::size_t vocab_cap = 20000;
  std::size_t embedding_dim = 50;
  std::size_t max_tokens = 32;
  Tensor embeddings;  // vocab_cap rows, frozen
};

BowEncoderConfig make_bow_encoder(std::size_t vocab_cap,
                                  std::size_t embedding_dim,
                                  std::size_t max_tokens, std::uint64_t seed);

// Mean embedding of the first max_tokens in-vocabulary ids; out-of-vocabulary
// ids are skipped and the divisor counts only contributing tokens. Empty or
// all-OOV input yields the zero vector.
Tensor encode_bag_of_words(std::span<const int> tokens,
                           const BowEncoderConfig& config);

// Raw token id -> dense rank by descending training-split frequency, ties by
// first occurrence, capped at the top `cap` entries.
std::unordered_map<int, int> build_vocabulary(const Dataset& train,
                                              std::size_t cap);

std::vector<int> remap_tokens(std::span<const int> tokens,
                              const std::unordered_map<int, int>& vocab);

}  // namespace gradsup
