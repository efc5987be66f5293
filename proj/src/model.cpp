#include "gradsup/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "gradsup/data.hpp"
#include "gradsup/rng.hpp"

namespace gradsup {

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::None: return "none";
    case Activation::Relu: return "relu";
    case Activation::Sigmoid: return "sigmoid";
  }
  throw std::logic_error("unknown activation tag");
}

Activation parse_activation(std::string_view name) {
  if (name == "none") return Activation::None;
  if (name == "relu") return Activation::Relu;
  if (name == "sigmoid") return Activation::Sigmoid;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

std::size_t ModelParams::input_width() const {
  if (layers.empty()) throw std::logic_error("model has no layers");
  return layers.front().w.cols();
}

std::size_t ModelParams::output_arity() const {
  if (layers.empty()) throw std::logic_error("model has no layers");
  return layers.back().w.rows();
}

ModelParams init_model(std::span<const std::size_t> sizes, Activation hidden,
                       std::uint64_t seed) {
  if (sizes.size() < 2)
    throw std::invalid_argument("init_model needs at least input and output sizes");
  for (std::size_t s : sizes)
    if (s == 0) throw std::invalid_argument("layer sizes must be positive");
  Rng rng(seed);
  ModelParams params;
  params.hidden = hidden;
  params.seed = seed;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const std::size_t fan_in = sizes[l];
    const std::size_t fan_out = sizes[l + 1];
    const double bound =
        std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> w(fan_in * fan_out);
    for (auto& v : w) v = rng.uniform(-bound, bound);
    Layer layer;
    layer.w = Tensor::matrix(fan_out, fan_in, std::move(w));
    layer.b = Tensor::zeros({fan_out});
    params.layers.push_back(std::move(layer));
  }
  return params;
}

Model::Model(const ModelParams& src) : hidden_(src.hidden), seed_(src.seed) {
  if (src.layers.empty()) throw std::invalid_argument("model has no layers");
  for (std::size_t l = 0; l < src.layers.size(); ++l) {
    const Layer& layer = src.layers[l];
    if (l > 0 && layer.w.cols() != src.layers[l - 1].w.rows())
      throw std::invalid_argument("layer shapes do not chain");
    if (layer.b.size() != layer.w.rows())
      throw std::invalid_argument("bias width does not match layer output");
    for (double v : layer.w.data())
      if (!std::isfinite(v))
        throw std::invalid_argument("model weights must be finite");
    params_.push_back(ad::parameter(layer.w));
    params_.push_back(ad::parameter(layer.b));
  }
}

ad::Var Model::forward(const ad::Var& x) const {
  if (x.value().rank() != 1 || x.value().size() != input_width())
    throw std::invalid_argument("forward: input width " +
                                std::to_string(x.value().size()) +
                                " does not match model width " +
                                std::to_string(input_width()));
  ad::Var h = x;
  const std::size_t n_layers = params_.size() / 2;
  for (std::size_t l = 0; l < n_layers; ++l) {
    h = ad::affine(h, params_[2 * l], params_[2 * l + 1]);
    if (l + 1 == n_layers) break;
    switch (hidden_) {
      case Activation::None: break;
      case Activation::Relu: h = ad::relu(h); break;
      case Activation::Sigmoid: h = ad::sigmoid(h); break;
    }
  }
  return h;
}

ad::Var Model::forward(const Tensor& x) const { return forward(ad::constant(x)); }

ModelParams Model::snapshot() const {
  ModelParams out;
  out.hidden = hidden_;
  out.seed = seed_;
  for (std::size_t l = 0; l + 1 < params_.size(); l += 2)
    out.layers.push_back(Layer{params_[l].value(), params_[l + 1].value()});
  return out;
}

std::size_t Model::input_width() const { return params_.front().value().cols(); }

std::size_t Model::output_arity() const {
  return params_[params_.size() - 2].value().rows();
}

Tensor forward_values(const ModelParams& params, const Tensor& x) {
  ad::NoGradGuard guard;
  Model model(params);
  return model.forward(x).value();
}

Tensor ensemble_logits(std::span<const ModelParams> members, const Tensor& x) {
  if (members.empty())
    throw std::invalid_argument("ensemble_logits: empty member list");
  const std::size_t arity = members.front().output_arity();
  Tensor mean = Tensor::zeros({arity});
  for (const ModelParams& m : members) {
    if (m.output_arity() != arity)
      throw std::invalid_argument("ensemble members disagree on output arity");
    Tensor logits = forward_values(m, x);
    for (std::size_t i = 0; i < arity; ++i) mean[i] += logits[i];
  }
  for (std::size_t i = 0; i < arity; ++i)
    mean[i] /= static_cast<double>(members.size());
  return mean;
}

BowEncoderConfig make_bow_encoder(std::size_t vocab_cap,
                                  std::size_t embedding_dim,
                                  std::size_t max_tokens, std::uint64_t seed) {
  if (vocab_cap == 0 || embedding_dim == 0 || max_tokens == 0)
    throw std::invalid_argument("bag-of-words config values must be positive");
  Rng rng(seed);
  std::vector<double> table(vocab_cap * embedding_dim);
  for (auto& v : table) v = rng.normal();
  BowEncoderConfig cfg;
  cfg.vocab_cap = vocab_cap;
  cfg.embedding_dim = embedding_dim;
  cfg.max_tokens = max_tokens;
  cfg.embeddings = Tensor::matrix(vocab_cap, embedding_dim, std::move(table));
  return cfg;
}

Tensor encode_bag_of_words(std::span<const int> tokens,
                           const BowEncoderConfig& config) {
  const std::size_t rows = config.embeddings.rows();
  const std::size_t dim = config.embeddings.cols();
  Tensor out = Tensor::zeros({dim});
  std::size_t used = 0;
  for (int t : tokens) {
    if (used == config.max_tokens) break;
    if (t < 0 || static_cast<std::size_t>(t) >= rows) continue;  // OOV
    for (std::size_t k = 0; k < dim; ++k)
      out[k] += config.embeddings.at(static_cast<std::size_t>(t), k);
    ++used;
  }
  if (used > 0)
    for (std::size_t k = 0; k < dim; ++k) out[k] /= static_cast<double>(used);
  return out;
}

std::unordered_map<int, int> build_vocabulary(const Dataset& train,
                                              std::size_t cap) {
  std::unordered_map<int, std::size_t> count;
  std::unordered_map<int, std::size_t> first_seen;
  std::size_t position = 0;
  for (const Example& e : train.examples) {
    if (!e.tokens) continue;
    for (int t : *e.tokens) {
      ++count[t];
      first_seen.emplace(t, position++);
    }
  }
  std::vector<int> ids;
  ids.reserve(count.size());
  for (const auto& [id, _] : count) ids.push_back(id);
  std::sort(ids.begin(), ids.end(), [&](int a, int b) {
    if (count[a] != count[b]) return count[a] > count[b];
    return first_seen[a] < first_seen[b];
  });
  if (ids.size() > cap) ids.resize(cap);
  std::unordered_map<int, int> vocab;
  for (std::size_t rank = 0; rank < ids.size(); ++rank)
    vocab.emplace(ids[rank], static_cast<int>(rank));
  return vocab;
}

std::vector<int> remap_tokens(std::span<const int> tokens,
                              const std::unordered_map<int, int>& vocab) {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (int t : tokens) {
    auto it = vocab.find(t);
    out.push_back(it == vocab.end() ? -1 : it->second);
  }
  return out;
}

}  // namespace gradsup
