#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gradsup/gs.hpp"
#include "gradsup/tensor.hpp"

namespace gradsup {

struct Example {
  std::string id;
  std::optional<std::vector<double>> features;
  std::optional<std::vector<int>> tokens;
  std::vector<int> labels;  // entries are 0/1
  std::optional<std::string> counterfactual_of;
  std::string split;
  friend bool operator==(const Example&, const Example&) = default;
};

struct Dataset {
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }
  std::size_t label_arity() const;
  std::size_t feature_width() const;  // 0 when token-based
  // Position of an id; throws when absent.
  std::size_t index_of(const std::string& id) const;
  const Example* find(const std::string& id) const;
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Structural checks: unique ids, uniform label arity and feature width,
// resolvable counterfactual links, linked labels and features differing.
// Throws one error listing every offending id.
void validate(const Dataset& data);

Dataset load_jsonl(const std::filesystem::path& path);
void save_jsonl(const Dataset& data, const std::filesystem::path& path);

// One undirected pair per counterfactual link, deduplicated, sorted.
std::vector<CounterfactualPair> pair_index(const Dataset& data);

// Copy of x with the masked coordinates zeroed.
std::vector<double> mask_features(std::span<const double> x,
                                  std::span<const std::size_t> mask);

struct SpuriousConfig {
  std::size_t n = 2000;  // training examples before counterfactual partners
  std::size_t d = 10;    // >= 3: core, spurious, d-2 distractors
  double sigma = 0.1;    // gaussian noise on the core coordinate
  double rho = 0.95;     // train-time label/spurious agreement, in (0.5, 1]
  // Fraction of training examples given a counterfactual partner. Full
  // pairing would balance the spurious coordinate exactly and erase the
  // shortcut the benchmark exists to expose, so the default keeps it partial.
  double cf_fraction = 0.25;
};

struct SpuriousBenchmark {
  Dataset train;  // originals plus linked counterfactual partners
  Dataset val;    // same correlation as train
  Dataset ood_test;  // spurious agreement flipped to 1 - rho
};

// Binary benchmark with a core coordinate that carries the label, a spurious
// coordinate correlated with it only at train time, and noise distractors.
// Partners negate the core coordinate and flip the label, so the pair
// difference lies on the core axis.
SpuriousBenchmark gen_spurious_ood(const SpuriousConfig& config,
                                   std::uint64_t seed);

struct MultilabelConfig {
  std::size_t n = 2000;            // training examples before partners
  std::size_t classes = 10;
  std::size_t prototype_dim = 64;
  double noise = 0.1;              // per-coordinate feature noise
  double cf_fraction = 0.5;        // fraction of train examples masked
  // Symmetric class co-occurrence probabilities in [0,1]; empty selects the
  // default partnered pattern (adjacent classes co-occur at 0.9, others 0.05).
  std::vector<std::vector<double>> cooccurrence;
  // Counterfactuals clear every present class instead of a single one; such
  // pairs supervise one gradient term per removed class.
  bool all_clear = false;
};

struct MultilabelBenchmark {
  Dataset train;
  Dataset test_original;
  Dataset test_edited;       // fresh examples with one class masked out
  Dataset test_hard_edited;  // label patterns absent from the training multiset
};

// Multilabel benchmark where features are sums of fixed class prototypes and
// label sets follow a co-occurrence model; counterfactuals subtract one
// present prototype and clear its label.
MultilabelBenchmark gen_masked_multilabel(const MultilabelConfig& config,
                                          std::uint64_t seed);

// Deterministic disjoint split keeping counterfactual partners together.
std::vector<Dataset> split(const Dataset& data, std::span<const double> fractions,
                           std::uint64_t seed);

}  // namespace gradsup
