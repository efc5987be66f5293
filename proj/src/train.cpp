#include "gradsup/train.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>

#include "gradsup/eval.hpp"
#include "gradsup/rng.hpp"

namespace gradsup {

void sgd_step(std::vector<Tensor>& params, std::span<const Tensor> grads,
              double lr) {
  if (lr <= 0.0) throw std::invalid_argument("sgd_step: lr must be positive");
  if (params.size() != grads.size())
    throw std::invalid_argument("sgd_step: parameter/gradient count mismatch");
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!params[p].same_shape(grads[p]))
      throw std::invalid_argument("sgd_step: shape mismatch at parameter " +
                                  std::to_string(p));
    for (std::size_t i = 0; i < params[p].size(); ++i)
      params[p][i] -= lr * grads[p][i];
  }
}

void adadelta_step(std::vector<Tensor>& params, std::span<const Tensor> grads,
                   AdaDeltaState& state, double rho, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("adadelta_step: eps must be positive");
  if (rho < 0.0 || rho >= 1.0)
    throw std::invalid_argument("adadelta_step: rho must lie in [0, 1)");
  if (params.size() != grads.size())
    throw std::invalid_argument("adadelta_step: parameter/gradient count mismatch");
  if (state.sq_grad.empty()) {
    for (const Tensor& p : params) {
      state.sq_grad.push_back(Tensor::zeros(p.shape()));
      state.sq_delta.push_back(Tensor::zeros(p.shape()));
    }
  }
  if (state.sq_grad.size() != params.size())
    throw std::invalid_argument("adadelta_step: state does not match parameters");
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!params[p].same_shape(grads[p]) ||
        !params[p].same_shape(state.sq_grad[p]))
      throw std::invalid_argument("adadelta_step: shape mismatch at parameter " +
                                  std::to_string(p));
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double g = grads[p][i];
      double& eg = state.sq_grad[p][i];
      double& ed = state.sq_delta[p][i];
      eg = rho * eg + (1.0 - rho) * g * g;
      const double delta = -std::sqrt(ed + eps) / std::sqrt(eg + eps) * g;
      ed = rho * ed + (1.0 - rho) * delta * delta;
      params[p][i] += delta;
    }
  }
}

std::size_t argmax_earliest(std::span<const double> values) {
  std::size_t best = TrainHistory::npos;
  double best_value = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] > best_value) {
      best_value = values[i];
      best = i;
    }
  }
  return best;
}

Task detect_task(const Dataset& data, Task requested) {
  const std::size_t arity = data.label_arity();
  if (requested == Task::Binary) {
    if (arity != 1)
      throw std::invalid_argument("binary task requires label arity 1");
    return requested;
  }
  if (requested != Task::Auto) return requested;
  if (arity == 1) return Task::Binary;
  for (const Example& e : data.examples) {
    if (std::accumulate(e.labels.begin(), e.labels.end(), 0) != 1)
      return Task::Multilabel;
  }
  return Task::Multiclass;
}

namespace {

std::size_t positive_class(const Example& e) {
  for (std::size_t c = 0; c < e.labels.size(); ++c)
    if (e.labels[c]) return c;
  throw std::invalid_argument("example '" + e.id + "' has no positive class");
}

ad::Var example_loss(const Model& model, const Example& e, Task task) {
  ad::Var logits = model.forward(Tensor::vec(*e.features));
  switch (task) {
    case Task::Binary:
      return ad::bce_with_logit(ad::pick(logits, 0), e.labels[0]);
    case Task::Multiclass:
      return ad::softmax_ce(logits, positive_class(e));
    case Task::Multilabel: {
      ad::Var acc = ad::constant(0.0);
      for (std::size_t c = 0; c < e.labels.size(); ++c)
        acc = ad::add(acc, ad::bce_with_logit(ad::pick(logits, c), e.labels[c]));
      return ad::div(acc, static_cast<double>(e.labels.size()));
    }
    case Task::Auto: break;
  }
  throw std::logic_error("unresolved task tag");
}

double validation_metric(const ModelParams& params, const Dataset& val,
                         Task task) {
  if (val.examples.empty()) return 0.0;
  const ModelParams members[] = {params};
  if (task == Task::Multilabel) return model_map(members, val);
  return accuracy(members, val);
}

std::string fmt_double(double v) {
  std::array<char, 32> buf;
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

}  // namespace

TrainResult train(const ModelParams& init, const Dataset& train_data,
                  std::span<const CounterfactualPair> pairs,
                  const Dataset& val_data, const TrainConfig& config) {
  if (config.batch_size < 1)
    throw std::invalid_argument("batch size must be at least 1");
  if (config.gs.lambda < 0.0)
    throw std::invalid_argument("lambda must be non-negative");
  if (train_data.examples.empty())
    throw std::invalid_argument("empty training set");
  const Task task = detect_task(train_data, config.task);

  TrainResult result{init, {}};
  if (config.max_epochs == 0) return result;

  Model model(init);
  const std::size_t n = train_data.examples.size();

  // Pairs attach to a batch when either endpoint is sampled into it.
  std::vector<std::vector<std::size_t>> pairs_of(n);
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    pairs_of[pairs[p].a].push_back(p);
    pairs_of[pairs[p].b].push_back(p);
  }

  Rng rng(config.seed);
  AdaDeltaState opt_state;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  double best_metric = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch = TrainHistory::npos;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    rng.shuffle(order);
    const double lambda =
        epoch < config.warmup_epochs ? 0.0 : config.gs.lambda;

    double main_sum = 0.0, gs_sum = 0.0;
    std::size_t main_count = 0, gs_count = 0;

    for (std::size_t start = 0, batch_no = 0; start < n;
         start += config.batch_size, ++batch_no) {
      const std::size_t stop = std::min(n, start + config.batch_size);

      ad::Var acc = ad::constant(0.0);
      for (std::size_t k = start; k < stop; ++k)
        acc = ad::add(acc, example_loss(model, train_data.examples[order[k]], task));
      ad::Var main = ad::div(acc, static_cast<double>(stop - start));
      main_sum += main.value().item() * static_cast<double>(stop - start);
      main_count += stop - start;

      ad::Var total = main;
      if (lambda > 0.0 && !pairs.empty()) {
        std::set<std::size_t> touched;
        for (std::size_t k = start; k < stop; ++k)
          touched.insert(pairs_of[order[k]].begin(), pairs_of[order[k]].end());
        if (!touched.empty()) {
          std::vector<CounterfactualPair> batch_pairs;
          batch_pairs.reserve(touched.size());
          for (std::size_t p : touched) batch_pairs.push_back(pairs[p]);
          GsBatch gs = batch_gs_loss(model, train_data, batch_pairs, config.gs);
          if (!gs.empty()) {
            total = combined_loss(main, gs.loss, lambda);
            gs_sum += gs.loss.value().item() * static_cast<double>(gs.terms);
            gs_count += gs.terms;
          }
        }
      }

      if (!std::isfinite(total.value().item()))
        throw std::runtime_error("training diverged at epoch " +
                                 std::to_string(epoch) + ", batch " +
                                 std::to_string(batch_no) +
                                 " (non-finite loss)");

      auto grads = ad::parameter_gradients(total, model.parameters());
      std::vector<Tensor> values;
      values.reserve(model.parameters().size());
      for (const ad::Var& p : model.parameters()) values.push_back(p.value());
      if (config.optimizer == OptimizerKind::Sgd)
        sgd_step(values, grads, config.learning_rate);
      else
        adadelta_step(values, grads, opt_state, config.rho, config.epsilon);
      for (std::size_t p = 0; p < values.size(); ++p)
        model.parameters()[p].leaf_value() = std::move(values[p]);
    }

    ModelParams snapshot = model.snapshot();
    EpochStats stats;
    stats.epoch = epoch;
    stats.main_loss = main_sum / static_cast<double>(main_count);
    stats.gs_loss =
        gs_count == 0 ? 0.0 : gs_sum / static_cast<double>(gs_count);
    stats.val_metric = validation_metric(snapshot, val_data, task);
    result.history.epochs.push_back(stats);

    if (stats.val_metric > best_metric) {
      best_metric = stats.val_metric;
      best_epoch = epoch;
      result.best = std::move(snapshot);
    }
    if (epoch - best_epoch > config.patience) break;
  }
  result.history.chosen_epoch = best_epoch;
  return result;
}

std::vector<CounterfactualPair> randomize_relations(
    std::span<const CounterfactualPair> pairs, const Dataset& data,
    std::uint64_t seed) {
  const std::size_t n = data.examples.size();
  if (n < 2) throw std::invalid_argument("randomize_relations: need >= 2 examples");
  bool any_differ = false;
  for (std::size_t i = 1; i < n && !any_differ; ++i)
    any_differ = data.examples[i].labels != data.examples.front().labels;
  if (!any_differ)
    throw std::invalid_argument(
        "randomize_relations: no differently-labeled example pair exists");

  Rng rng(seed);
  std::vector<CounterfactualPair> out;
  out.reserve(pairs.size());
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    for (std::size_t attempt = 0;; ++attempt) {
      if (attempt > 100000)
        throw std::runtime_error("randomize_relations: rejection sampling stalled");
      const std::size_t i = rng.index(n);
      const std::size_t j = rng.index(n);
      if (i == j) continue;
      const Example& a = data.examples[i];
      const Example& b = data.examples[j];
      if (a.labels == b.labels) continue;
      if (a.features && b.features && *a.features == *b.features) continue;
      out.push_back(make_undirected_pair(i, j));
      break;
    }
  }
  return out;
}

Dataset shuffle_labels(const Dataset& data, std::uint64_t seed) {
  if (data.examples.size() < 2)
    throw std::invalid_argument("shuffle_labels: need >= 2 examples");
  Rng rng(seed);
  std::vector<std::size_t> perm(data.examples.size());
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  Dataset out = data;
  for (std::size_t i = 0; i < out.examples.size(); ++i) {
    out.examples[i].labels = data.examples[perm[i]].labels;
    out.examples[i].counterfactual_of.reset();
  }
  return out;
}

namespace {

std::size_t thread_cap() {
  if (const char* env = std::getenv("GRADSUP_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) return static_cast<std::size_t>(v);
  }
  return 1;
}

}  // namespace

std::vector<TrainResult> train_ensemble(const ModelParams& init,
                                        const Dataset& train_data,
                                        std::span<const CounterfactualPair> pairs,
                                        const Dataset& val_data,
                                        const TrainConfig& config) {
  if (config.ensemble < 1)
    throw std::invalid_argument("ensemble size must be at least 1");
  std::vector<std::size_t> sizes;
  sizes.push_back(init.input_width());
  for (const Layer& l : init.layers) sizes.push_back(l.w.rows());

  const std::size_t k = config.ensemble;
  std::vector<TrainResult> results(k);
  std::vector<std::exception_ptr> errors(k);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t m = next.fetch_add(1); m < k; m = next.fetch_add(1)) {
      try {
        TrainConfig member = config;
        member.seed = config.seed + m;
        member.ensemble = 1;
        ModelParams member_init = init_model(sizes, init.hidden, member.seed);
        results[m] = train(member_init, train_data, pairs, val_data, member);
      } catch (...) {
        errors[m] = std::current_exception();
      }
    }
  };

  const std::size_t threads = std::min(k, thread_cap());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& err : errors)
    if (err) std::rethrow_exception(err);
  return results;
}

std::string history_csv(const TrainHistory& history) {
  std::string out = "epoch,main_loss,gs_loss,val_metric\n";
  for (const EpochStats& s : history.epochs) {
    out += std::to_string(s.epoch);
    out += ',';
    out += fmt_double(s.main_loss);
    out += ',';
    out += fmt_double(s.gs_loss);
    out += ',';
    out += fmt_double(s.val_metric);
    out += '\n';
  }
  return out;
}

}  // namespace gradsup
