#include "gradsup/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "gradsup/rng.hpp"
#include "json.hpp"

namespace gradsup {

namespace {

using nlohmann::json;

std::unordered_map<std::string, std::size_t> id_map(const Dataset& data) {
  std::unordered_map<std::string, std::size_t> map;
  map.reserve(data.examples.size());
  for (std::size_t i = 0; i < data.examples.size(); ++i)
    map.emplace(data.examples[i].id, i);
  return map;
}

}  // namespace

std::size_t Dataset::label_arity() const {
  return examples.empty() ? 0 : examples.front().labels.size();
}

std::size_t Dataset::feature_width() const {
  for (const auto& e : examples)
    if (e.features) return e.features->size();
  return 0;
}

std::size_t Dataset::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < examples.size(); ++i)
    if (examples[i].id == id) return i;
  throw std::out_of_range("dataset has no example with id '" + id + "'");
}

const Example* Dataset::find(const std::string& id) const {
  for (const auto& e : examples)
    if (e.id == id) return &e;
  return nullptr;
}

void validate(const Dataset& data) {
  std::vector<std::string> faults;
  auto fault = [&](const std::string& id, const char* what) {
    faults.push_back(id + ": " + what);
  };

  std::unordered_map<std::string, std::size_t> seen;
  const std::size_t arity = data.label_arity();
  const std::size_t width = data.feature_width();
  for (std::size_t i = 0; i < data.examples.size(); ++i) {
    const Example& e = data.examples[i];
    if (!seen.emplace(e.id, i).second) fault(e.id, "duplicate id");
    if (e.features.has_value() == e.tokens.has_value())
      fault(e.id, "needs exactly one of features/tokens");
    if (e.labels.size() != arity) fault(e.id, "label arity differs");
    for (int v : e.labels)
      if (v != 0 && v != 1) {
        fault(e.id, "label entries must be 0 or 1");
        break;
      }
    if (e.features && e.features->size() != width)
      fault(e.id, "feature width differs");
  }
  for (const Example& e : data.examples) {
    if (!e.counterfactual_of) continue;
    auto it = seen.find(*e.counterfactual_of);
    if (it == seen.end()) {
      fault(e.id, ("link to missing id '" + *e.counterfactual_of + "'").c_str());
      continue;
    }
    const Example& partner = data.examples[it->second];
    if (partner.labels == e.labels) fault(e.id, "linked labels are equal");
    if (e.features && partner.features && *e.features == *partner.features)
      fault(e.id, "linked features are identical");
  }
  if (!faults.empty()) {
    std::string msg = "dataset validation failed:";
    for (const auto& f : faults) msg += "\n  " + f;
    throw std::runtime_error(msg);
  }
}

Dataset load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file " + path.string());
  Dataset data;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": " + e.what());
    }
    try {
      Example e;
      e.id = j.at("id").get<std::string>();
      if (!j.at("features").is_null())
        e.features = j["features"].get<std::vector<double>>();
      if (!j.at("tokens").is_null())
        e.tokens = j["tokens"].get<std::vector<int>>();
      e.labels = j.at("labels").get<std::vector<int>>();
      if (!j.at("counterfactual_of").is_null())
        e.counterfactual_of = j["counterfactual_of"].get<std::string>();
      e.split = j.at("split").get<std::string>();
      data.examples.push_back(std::move(e));
    } catch (const json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": " + e.what());
    }
  }
  validate(data);
  return data;
}

void save_jsonl(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset file " + path.string());
  for (const Example& e : data.examples) {
    json j;
    j["id"] = e.id;
    j["features"] = nullptr;
    if (e.features) j["features"] = *e.features;
    j["tokens"] = nullptr;
    if (e.tokens) j["tokens"] = *e.tokens;
    j["labels"] = e.labels;
    j["counterfactual_of"] = nullptr;
    if (e.counterfactual_of) j["counterfactual_of"] = *e.counterfactual_of;
    j["split"] = e.split;
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<CounterfactualPair> pair_index(const Dataset& data) {
  auto ids = id_map(data);
  std::set<CounterfactualPair> pairs;
  for (std::size_t i = 0; i < data.examples.size(); ++i) {
    const Example& e = data.examples[i];
    if (!e.counterfactual_of) continue;
    auto it = ids.find(*e.counterfactual_of);
    if (it == ids.end())
      throw std::runtime_error("dangling counterfactual link from '" + e.id +
                               "' to '" + *e.counterfactual_of + "'");
    pairs.insert(make_undirected_pair(i, it->second));
  }
  return {pairs.begin(), pairs.end()};
}

std::vector<double> mask_features(std::span<const double> x,
                                  std::span<const std::size_t> mask) {
  std::vector<double> out(x.begin(), x.end());
  for (std::size_t idx : mask) {
    if (idx >= out.size())
      throw std::out_of_range("mask index " + std::to_string(idx) +
                              " outside feature width " +
                              std::to_string(out.size()));
    out[idx] = 0.0;
  }
  return out;
}

namespace {

// Exactly floor(m/2) positives, order shuffled.
std::vector<int> balanced_labels(std::size_t m, Rng& rng) {
  std::vector<int> labels(m, 0);
  for (std::size_t i = 0; i < m / 2; ++i) labels[i] = 1;
  rng.shuffle(labels);
  return labels;
}

Example spurious_example(std::string id, int label, double agreement,
                         const SpuriousConfig& cfg, std::string split,
                         Rng& rng) {
  const double s = label == 1 ? 1.0 : -1.0;
  std::vector<double> x(cfg.d);
  x[0] = s + cfg.sigma * rng.normal();
  x[1] = rng.bernoulli(agreement) ? s : -s;
  for (std::size_t k = 2; k < cfg.d; ++k) x[k] = rng.normal();
  return Example{std::move(id), std::move(x), std::nullopt,
                 std::vector<int>{label}, std::nullopt, std::move(split)};
}

}  // namespace

SpuriousBenchmark gen_spurious_ood(const SpuriousConfig& cfg,
                                   std::uint64_t seed) {
  if (!(cfg.rho > 0.5 && cfg.rho <= 1.0))
    throw std::invalid_argument(
        "train correlation rho must lie in (0.5, 1]");
  if (cfg.d < 3) throw std::invalid_argument("need d >= 3 (core, spurious, noise)");
  if (cfg.n < 4) throw std::invalid_argument("need n >= 4");
  if (cfg.sigma < 0.0) throw std::invalid_argument("sigma must be non-negative");
  if (cfg.cf_fraction < 0.0 || cfg.cf_fraction > 1.0)
    throw std::invalid_argument("cf_fraction must lie in [0, 1]");

  Rng rng(seed);
  SpuriousBenchmark out;

  auto labels = balanced_labels(cfg.n, rng);
  for (std::size_t i = 0; i < cfg.n; ++i)
    out.train.examples.push_back(spurious_example(
        "tr" + std::to_string(i), labels[i], cfg.rho, cfg, "train", rng));

  std::vector<std::size_t> order(cfg.n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const auto n_cf =
      static_cast<std::size_t>(std::llround(cfg.cf_fraction * cfg.n));
  std::vector<std::size_t> chosen(order.begin(), order.begin() + n_cf);
  std::sort(chosen.begin(), chosen.end());
  for (std::size_t i : chosen) {
    Example cf = out.train.examples[i];
    cf.id += "_cf";
    (*cf.features)[0] = -(*cf.features)[0];
    cf.labels[0] = 1 - cf.labels[0];
    cf.counterfactual_of = out.train.examples[i].id;
    out.train.examples.push_back(std::move(cf));
  }

  const std::size_t n_val = std::max<std::size_t>(2, cfg.n / 5);
  auto val_labels = balanced_labels(n_val, rng);
  for (std::size_t i = 0; i < n_val; ++i)
    out.val.examples.push_back(spurious_example(
        "va" + std::to_string(i), val_labels[i], cfg.rho, cfg, "val", rng));

  const std::size_t n_ood = std::max<std::size_t>(2, cfg.n / 2);
  auto ood_labels = balanced_labels(n_ood, rng);
  for (std::size_t i = 0; i < n_ood; ++i)
    out.ood_test.examples.push_back(
        spurious_example("te" + std::to_string(i), ood_labels[i],
                         1.0 - cfg.rho, cfg, "ood_test", rng));

  validate(out.train);
  validate(out.val);
  validate(out.ood_test);
  return out;
}

namespace {

std::vector<std::vector<double>> default_cooccurrence(std::size_t C) {
  std::vector<std::vector<double>> m(C, std::vector<double>(C, 0.05));
  for (std::size_t i = 0; i < C; ++i) {
    m[i][i] = 1.0;
    const std::size_t partner = i ^ 1u;
    if (partner < C) m[i][partner] = 0.9;
  }
  return m;
}

void check_cooccurrence(const std::vector<std::vector<double>>& m,
                        std::size_t C) {
  if (m.size() != C)
    throw std::invalid_argument("impossible co-occurrence request: matrix is not "
                                "classes x classes");
  for (std::size_t i = 0; i < C; ++i) {
    if (m[i].size() != C)
      throw std::invalid_argument(
          "impossible co-occurrence request: matrix is not square");
    for (std::size_t j = 0; j < C; ++j) {
      if (!(m[i][j] >= 0.0 && m[i][j] <= 1.0))
        throw std::invalid_argument(
            "impossible co-occurrence request: entries must lie in [0, 1]");
      if (std::abs(m[i][j] - m[j][i]) > 1e-12)
        throw std::invalid_argument(
            "impossible co-occurrence request: matrix must be symmetric");
    }
  }
}

std::string pattern_key(const std::vector<int>& labels) {
  std::string key(labels.size(), '0');
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i]) key[i] = '1';
  return key;
}

struct MultilabelSampler {
  const MultilabelConfig& cfg;
  const std::vector<std::vector<double>>& co;
  std::vector<std::vector<double>> prototypes;  // unit rows

  MultilabelSampler(const MultilabelConfig& c,
                    const std::vector<std::vector<double>>& m, Rng& rng)
      : cfg(c), co(m) {
    prototypes.assign(cfg.classes, std::vector<double>(cfg.prototype_dim));
    for (auto& row : prototypes) {
      double sq = 0.0;
      for (auto& v : row) {
        v = rng.normal();
        sq += v * v;
      }
      const double norm = std::sqrt(sq);
      for (auto& v : row) v /= norm;
    }
  }

  std::vector<int> sample_labels(Rng& rng) const {
    std::vector<int> labels(cfg.classes, 0);
    const std::size_t seed_class = rng.index(cfg.classes);
    labels[seed_class] = 1;
    for (std::size_t c = 0; c < cfg.classes; ++c) {
      if (c == seed_class) continue;
      labels[c] = rng.bernoulli(co[seed_class][c]) ? 1 : 0;
    }
    return labels;
  }

  std::vector<double> features_for(const std::vector<int>& labels,
                                   Rng& rng) const {
    std::vector<double> x(cfg.prototype_dim, 0.0);
    for (std::size_t c = 0; c < cfg.classes; ++c)
      if (labels[c])
        for (std::size_t k = 0; k < cfg.prototype_dim; ++k)
          x[k] += prototypes[c][k];
    for (auto& v : x) v += cfg.noise * rng.normal();
    return x;
  }

  // Removes one present class (or all, in all-clear mode) from a copy of the
  // example: prototype subtracted exactly, label cleared.
  Example masked_partner(const Example& src, Rng& rng) const {
    Example cf = src;
    std::vector<std::size_t> present;
    for (std::size_t c = 0; c < cfg.classes; ++c)
      if (cf.labels[c]) present.push_back(c);
    std::vector<std::size_t> removed;
    if (cfg.all_clear)
      removed = present;
    else
      removed.push_back(present[rng.index(present.size())]);
    for (std::size_t c : removed) {
      cf.labels[c] = 0;
      for (std::size_t k = 0; k < cfg.prototype_dim; ++k)
        (*cf.features)[k] -= prototypes[c][k];
    }
    return cf;
  }
};

}  // namespace

MultilabelBenchmark gen_masked_multilabel(const MultilabelConfig& cfg,
                                          std::uint64_t seed) {
  if (cfg.classes < 2) throw std::invalid_argument("need at least 2 classes");
  if (cfg.prototype_dim < 1)
    throw std::invalid_argument("prototype_dim must be positive");
  if (cfg.n < 8) throw std::invalid_argument("need n >= 8");
  if (cfg.noise < 0.0) throw std::invalid_argument("noise must be non-negative");
  if (cfg.cf_fraction < 0.0 || cfg.cf_fraction > 1.0)
    throw std::invalid_argument("cf_fraction must lie in [0, 1]");
  const auto& co =
      cfg.cooccurrence.empty() ? default_cooccurrence(cfg.classes) : cfg.cooccurrence;
  check_cooccurrence(co, cfg.classes);

  Rng rng(seed);
  MultilabelSampler sampler(cfg, co, rng);
  MultilabelBenchmark out;

  for (std::size_t i = 0; i < cfg.n; ++i) {
    Example e;
    e.id = "tr" + std::to_string(i);
    e.labels = sampler.sample_labels(rng);
    e.features = sampler.features_for(e.labels, rng);
    e.split = "train";
    out.train.examples.push_back(std::move(e));
  }

  std::vector<std::size_t> order(cfg.n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const auto n_cf =
      static_cast<std::size_t>(std::llround(cfg.cf_fraction * cfg.n));
  std::vector<std::size_t> chosen(order.begin(), order.begin() + n_cf);
  std::sort(chosen.begin(), chosen.end());
  for (std::size_t i : chosen) {
    Example cf = sampler.masked_partner(out.train.examples[i], rng);
    cf.id += "_cf";
    cf.counterfactual_of = out.train.examples[i].id;
    out.train.examples.push_back(std::move(cf));
  }

  std::unordered_set<std::string> train_patterns;
  for (const Example& e : out.train.examples)
    train_patterns.insert(pattern_key(e.labels));

  const std::size_t n_test = std::max<std::size_t>(2, cfg.n / 4);
  for (std::size_t i = 0; i < n_test; ++i) {
    Example e;
    e.id = "to" + std::to_string(i);
    e.labels = sampler.sample_labels(rng);
    e.features = sampler.features_for(e.labels, rng);
    e.split = "test_original";
    out.test_original.examples.push_back(std::move(e));
  }

  for (std::size_t i = 0; i < n_test; ++i) {
    Example e;
    e.id = "te" + std::to_string(i);
    e.labels = sampler.sample_labels(rng);
    e.features = sampler.features_for(e.labels, rng);
    e.split = "test_edited";
    Example edited = sampler.masked_partner(e, rng);
    edited.id = e.id;
    out.test_edited.examples.push_back(std::move(edited));
  }

  // Edited examples whose resulting label pattern never occurs in training:
  // sample, drop one class from multi-class patterns, keep only unseen results.
  const std::size_t n_hard = std::max<std::size_t>(2, cfg.n / 8);
  const std::size_t attempt_cap = 400 * n_hard + 10000;
  std::size_t attempts = 0;
  while (out.test_hard_edited.examples.size() < n_hard) {
    if (++attempts > attempt_cap)
      throw std::runtime_error(
          "could not construct hard-edited label patterns absent from the "
          "training set; co-occurrence too uniform");
    auto labels = sampler.sample_labels(rng);
    std::vector<std::size_t> present;
    for (std::size_t c = 0; c < cfg.classes; ++c)
      if (labels[c]) present.push_back(c);
    if (present.size() < 2) continue;
    labels[present[rng.index(present.size())]] = 0;
    if (train_patterns.contains(pattern_key(labels))) continue;
    Example e;
    e.id = "th" + std::to_string(out.test_hard_edited.examples.size());
    e.labels = labels;
    e.features = sampler.features_for(labels, rng);
    e.split = "test_hard_edited";
    out.test_hard_edited.examples.push_back(std::move(e));
  }

  validate(out.train);
  validate(out.test_original);
  validate(out.test_edited);
  validate(out.test_hard_edited);
  return out;
}

std::vector<Dataset> split(const Dataset& data, std::span<const double> fractions,
                           std::uint64_t seed) {
  if (fractions.empty()) throw std::invalid_argument("no split fractions given");
  double sum = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw std::invalid_argument("split fractions must be non-negative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("split fractions must sum to 1");

  const std::size_t n = data.examples.size();
  // Union counterfactual partners so a pair can never straddle splits.
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  auto ids = id_map(data);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& link = data.examples[i].counterfactual_of;
    if (!link) continue;
    auto it = ids.find(*link);
    if (it == ids.end())
      throw std::runtime_error("dangling counterfactual link from '" +
                               data.examples[i].id + "'");
    parent[find(i)] = find(it->second);
  }
  std::vector<std::vector<std::size_t>> groups;
  std::unordered_map<std::size_t, std::size_t> root_slot;
  for (std::size_t i = 0; i < n; ++i) {
    auto r = find(i);
    auto [it, fresh] = root_slot.emplace(r, groups.size());
    if (fresh) groups.emplace_back();
    groups[it->second].push_back(i);
  }

  Rng rng(seed);
  rng.shuffle(groups);

  std::vector<std::size_t> target(fractions.size());
  std::size_t assigned_total = 0;
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    target[k] = static_cast<std::size_t>(fractions[k] * static_cast<double>(n));
    assigned_total += target[k];
  }
  for (std::size_t k = 0; assigned_total < n; k = (k + 1) % target.size()) {
    ++target[k];
    ++assigned_total;
  }

  std::vector<std::vector<std::size_t>> members(fractions.size());
  std::vector<std::size_t> counts(fractions.size(), 0);
  for (const auto& group : groups) {
    std::size_t dest = fractions.size() - 1;
    for (std::size_t k = 0; k < fractions.size(); ++k) {
      if (counts[k] < target[k]) {
        dest = k;
        break;
      }
    }
    counts[dest] += group.size();
    members[dest].insert(members[dest].end(), group.begin(), group.end());
  }

  std::vector<Dataset> out(fractions.size());
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    std::sort(members[k].begin(), members[k].end());
    for (std::size_t i : members[k])
      out[k].examples.push_back(data.examples[i]);
  }
  return out;
}

}  // namespace gradsup
