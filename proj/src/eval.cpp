#include "gradsup/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace gradsup {

namespace {

std::size_t argmax_lowest(const Tensor& scores) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

bool one_positive_per_row(const Dataset& data) {
  for (const Example& e : data.examples)
    if (std::accumulate(e.labels.begin(), e.labels.end(), 0) != 1) return false;
  return true;
}

// Reduction-order-independent mean ingredient; sequential below 5 terms so
// tiny instances match a plain left-to-right oracle bit for bit.
double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 4) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.subspan(0, half)) + pairwise_sum(v.subspan(half));
}

}  // namespace

double accuracy(std::span<const ModelParams> members, const Dataset& data) {
  if (members.empty()) throw std::invalid_argument("accuracy: no model given");
  if (data.examples.empty()) throw std::invalid_argument("accuracy: empty dataset");
  const std::size_t arity = members.front().output_arity();
  if (arity != data.label_arity())
    throw std::invalid_argument("accuracy: model arity " + std::to_string(arity) +
                                " does not match label arity " +
                                std::to_string(data.label_arity()));
  std::size_t correct = 0;
  for (const Example& e : data.examples) {
    Tensor scores = ensemble_logits(members, Tensor::vec(*e.features));
    if (arity == 1) {
      correct += (scores[0] > 0.0 ? 1 : 0) == e.labels[0];
    } else {
      correct += e.labels[argmax_lowest(scores)] == 1;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.examples.size());
}

double accuracy(const ModelParams& model, const Dataset& data) {
  const ModelParams members[] = {model};
  return accuracy(members, data);
}

double average_precision(std::span<const double> scores,
                         std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("average_precision: length mismatch");
  const std::size_t n = scores.size();
  std::size_t total_pos = 0;
  for (int y : labels) total_pos += y != 0;
  if (total_pos == 0) return -1.0;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });

  std::vector<double> prec_at_pos;
  prec_at_pos.reserve(total_pos);
  std::size_t tp = 0;
  for (std::size_t rank = 0; rank < n; ++rank) {
    if (labels[order[rank]] != 0) {
      ++tp;
      prec_at_pos.push_back(static_cast<double>(tp) /
                            static_cast<double>(rank + 1));
    }
  }

  // Interpolated precision envelope: each recall step uses the best
  // precision at or beyond it.
  for (std::size_t k = prec_at_pos.size() - 1; k-- > 0;)
    prec_at_pos[k] = std::max(prec_at_pos[k], prec_at_pos[k + 1]);

  double sum = 0.0;
  for (double p : prec_at_pos) sum += p;
  return sum / static_cast<double>(total_pos);
}

double mean_average_precision(const std::vector<std::vector<double>>& scores,
                              const std::vector<std::vector<int>>& labels,
                              std::vector<std::size_t>* skipped) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("mean_average_precision: row count mismatch");
  if (scores.empty())
    throw std::invalid_argument("mean_average_precision: no examples");
  const std::size_t C = scores.front().size();
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i].size() != C || labels[i].size() != C)
      throw std::invalid_argument("mean_average_precision: ragged matrix");

  if (skipped) skipped->clear();
  std::vector<double> aps;
  std::vector<double> col_scores(scores.size());
  std::vector<int> col_labels(scores.size());
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < scores.size(); ++i) {
      col_scores[i] = scores[i][c];
      col_labels[i] = labels[i][c];
    }
    const double ap = average_precision(col_scores, col_labels);
    if (ap < 0.0) {
      if (skipped) skipped->push_back(c);
    } else {
      aps.push_back(ap);
    }
  }
  if (aps.empty())
    throw std::invalid_argument(
        "mean_average_precision: no class has a positive example");
  return pairwise_sum(aps) / static_cast<double>(aps.size());
}

double model_map(std::span<const ModelParams> members, const Dataset& data,
                 std::vector<std::size_t>* skipped) {
  if (members.empty()) throw std::invalid_argument("model_map: no model given");
  if (data.examples.empty()) throw std::invalid_argument("model_map: empty dataset");
  std::vector<std::vector<double>> scores;
  std::vector<std::vector<int>> labels;
  scores.reserve(data.examples.size());
  labels.reserve(data.examples.size());
  for (const Example& e : data.examples) {
    Tensor logits = ensemble_logits(members, Tensor::vec(*e.features));
    scores.emplace_back(logits.data().begin(), logits.data().end());
    labels.push_back(e.labels);
  }
  return mean_average_precision(scores, labels, skipped);
}

double model_map(const ModelParams& model, const Dataset& data,
                 std::vector<std::size_t>* skipped) {
  const ModelParams members[] = {model};
  return model_map(members, data, skipped);
}

double gradient_alignment(const ModelParams& params,
                          std::span<const CounterfactualPair> pairs,
                          const Dataset& data) {
  if (pairs.empty())
    throw std::invalid_argument("gradient_alignment: no pairs given");
  Model model(params);
  const std::size_t arity = params.output_arity();
  double sum = 0.0;
  std::size_t terms = 0;
  for (const auto& pair : pairs) {
    const Example& ea = data.examples.at(pair.a);
    const Example& eb = data.examples.at(pair.b);
    auto classes = supervised_classes(ea.labels, eb.labels, true);
    for (const auto& sc : classes) {
      const Example& neg = sc.positive_is_b ? ea : eb;
      const Example& pos = sc.positive_is_b ? eb : ea;
      Tensor d = target_gradient(Tensor::vec(*neg.features),
                                 Tensor::vec(*pos.features));
      ad::Var xin = ad::parameter(Tensor::vec(*neg.features));
      ad::Var logit = ad::pick(model.forward(xin),
                               arity == 1 ? 0 : sc.class_index);
      Tensor g = ad::input_gradient(logit, xin, false).value();
      double dot = 0.0, gg = 0.0, dd = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        dot += g[i] * d[i];
        gg += g[i] * g[i];
        dd += d[i] * d[i];
      }
      // Same norm guard as the GS loss so alignment is exactly one minus the
      // unidirectional batch loss.
      sum += dot / (std::max(std::sqrt(gg), 1e-8) *
                    std::max(std::sqrt(dd), 1e-8));
      ++terms;
    }
  }
  return sum / static_cast<double>(terms);
}

LinearizationGap linearization_gap(const ModelParams& params, const Tensor& x_i,
                                   const Tensor& x_j, std::size_t cls) {
  if (cls >= params.output_arity())
    throw std::out_of_range("linearization_gap: class index out of range");
  LinearizationGap out;
  double dd = 0.0;
  for (std::size_t k = 0; k < x_i.size(); ++k) {
    const double dk = x_j[k] - x_i[k];
    dd += dk * dk;
  }
  out.step = std::sqrt(dd);

  // Affine maps have no second-order term; report the exact zero instead of
  // the summation round-off a numerical evaluation would produce.
  const bool affine =
      params.layers.size() == 1 || params.hidden == Activation::None;
  if (affine) {
    out.gap = 0.0;
    return out;
  }

  Model model(params);
  const double fj = forward_values(params, x_j)[cls];
  const double fi = forward_values(params, x_i)[cls];
  ad::Var xin = ad::parameter(x_i);
  Tensor g =
      ad::input_gradient(ad::pick(model.forward(xin), cls), xin, false).value();
  double lin = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k) lin += g[k] * (x_j[k] - x_i[k]);
  out.gap = std::abs(fj - fi - lin);
  return out;
}

double chance_level(const Dataset& data) {
  if (data.examples.empty())
    throw std::invalid_argument("chance_level: empty dataset");
  const std::size_t n = data.examples.size();
  const std::size_t arity = data.label_arity();
  if (arity == 1) {
    std::size_t pos = 0;
    for (const Example& e : data.examples) pos += e.labels[0];
    const double p = static_cast<double>(pos) / static_cast<double>(n);
    return std::max(p, 1.0 - p);
  }
  std::vector<std::size_t> counts(arity, 0);
  for (const Example& e : data.examples)
    for (std::size_t c = 0; c < arity; ++c) counts[c] += e.labels[c];
  if (one_positive_per_row(data)) {
    return static_cast<double>(*std::max_element(counts.begin(), counts.end())) /
           static_cast<double>(n);
  }
  // mAP chance: a label-independent ranking concentrates each class's AP at
  // its positive rate; mean over the classes the metric evaluates.
  double sum = 0.0;
  std::size_t evaluated = 0;
  for (std::size_t c = 0; c < arity; ++c) {
    if (counts[c] == 0) continue;
    sum += static_cast<double>(counts[c]) / static_cast<double>(n);
    ++evaluated;
  }
  if (evaluated == 0)
    throw std::invalid_argument("chance_level: no class has a positive example");
  return sum / static_cast<double>(evaluated);
}

SuiteReport evaluate_suite(
    std::span<const ModelParams> members,
    const std::vector<std::pair<std::string, const Dataset*>>& splits,
    const Dataset* pair_data) {
  if (members.empty())
    throw std::invalid_argument("evaluate_suite: no model given");
  SuiteReport report;
  report.ensemble_size = members.size();
  for (const auto& [name, ds] : splits) {
    if (!ds || ds->examples.empty())
      throw std::invalid_argument("evaluate_suite: split '" + name +
                                  "' is empty");
    SplitReport row;
    row.name = name;
    row.examples = ds->examples.size();
    row.chance = chance_level(*ds);
    const bool use_accuracy =
        ds->label_arity() == 1 || one_positive_per_row(*ds);
    if (use_accuracy) {
      row.metric = "accuracy";
      row.value = accuracy(members, *ds);
    } else {
      row.metric = "map";
      row.value = model_map(members, *ds, &row.skipped_classes);
    }
    report.rows.push_back(std::move(row));
  }
  if (pair_data) {
    auto pairs = pair_index(*pair_data);
    if (!pairs.empty()) {
      double sum = 0.0;
      for (const ModelParams& m : members)
        sum += gradient_alignment(m, pairs, *pair_data);
      report.alignment = sum / static_cast<double>(members.size());
      report.has_alignment = true;
    }
  }
  return report;
}

namespace {

std::string fixed6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string report_text(const SuiteReport& report) {
  std::string out;
  out += "evaluation report (v1)\n";
  out += "ap protocol: all-points interpolated envelope (Pascal VOC); "
         "score ties rank by example index\n";
  out += "ensemble members: " + std::to_string(report.ensemble_size) + "\n";
  out += "\n";

  std::size_t name_w = 5;
  for (const auto& row : report.rows) name_w = std::max(name_w, row.name.size());
  auto pad = [](std::string s, std::size_t w) {
    s.resize(std::max(s.size(), w), ' ');
    return s;
  };
  out += pad("split", name_w) + "  metric    value     chance    examples  skipped\n";
  for (const auto& row : report.rows) {
    std::string skipped = "-";
    if (!row.skipped_classes.empty()) {
      skipped.clear();
      for (std::size_t i = 0; i < row.skipped_classes.size(); ++i) {
        if (i) skipped += ",";
        skipped += std::to_string(row.skipped_classes[i]);
      }
    }
    out += pad(row.name, name_w) + "  " + pad(row.metric, 8) + "  " +
           fixed6(row.value) + "  " + fixed6(row.chance) + "  " +
           pad(std::to_string(row.examples), 8) + "  " + skipped + "\n";
  }
  if (report.has_alignment)
    out += "\ngradient alignment (training pairs): " + fixed6(report.alignment) +
           "\n";
  return out;
}

std::string report_json(const SuiteReport& report) {
  nlohmann::json j;
  j["format"] = "gradsup-report";
  j["version"] = 1;
  j["protocol"] = {{"average_precision", "all-points interpolated envelope"},
                   {"ties", "by example index"}};
  j["ensemble_size"] = report.ensemble_size;
  j["splits"] = nlohmann::json::array();
  for (const auto& row : report.rows) {
    nlohmann::json r;
    r["name"] = row.name;
    r["metric"] = row.metric;
    r["value"] = row.value;
    r["chance"] = row.chance;
    r["examples"] = row.examples;
    r["skipped_classes"] = row.skipped_classes;
    j["splits"].push_back(std::move(r));
  }
  if (report.has_alignment)
    j["alignment"] = report.alignment;
  else
    j["alignment"] = nullptr;
  return j.dump(2) + "\n";
}

}  // namespace gradsup
