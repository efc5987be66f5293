// Command-line front end: benchmark generation, training with the gradient
// supervision objective, evaluation reports, and decision-boundary grids.
// Every command is deterministic given its flags and seed; reruns produce
// byte-identical files.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gradsup/boundary.hpp"
#include "gradsup/checkpoint.hpp"
#include "gradsup/data.hpp"
#include "gradsup/eval.hpp"
#include "gradsup/model.hpp"
#include "gradsup/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace gradsup;

namespace {

// Missing inputs exit with 2 so scripts can tell "path problem" from
// "computation problem".
struct MissingPath : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const fs::path& p) {
  if (!fs::exists(p)) throw MissingPath("missing required path: " + p.string());
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + p.string());
}

struct GenSpuriousArgs {
  SpuriousConfig cfg;
  std::uint64_t seed = 0;
  std::string out;
};

int run_gen_spurious(const GenSpuriousArgs& args) {
  fs::create_directories(args.out);
  auto bench = gen_spurious_ood(args.cfg, args.seed);
  save_jsonl(bench.train, fs::path(args.out) / "train.jsonl");
  save_jsonl(bench.val, fs::path(args.out) / "val.jsonl");
  save_jsonl(bench.ood_test, fs::path(args.out) / "ood_test.jsonl");
  nlohmann::json manifest;
  manifest["format"] = "gradsup-manifest";
  manifest["version"] = 1;
  manifest["kind"] = "spurious";
  manifest["seed"] = args.seed;
  manifest["params"] = {{"n", args.cfg.n},
                        {"d", args.cfg.d},
                        {"rho", args.cfg.rho},
                        {"sigma", args.cfg.sigma},
                        {"cf_fraction", args.cfg.cf_fraction}};
  manifest["files"] = {{"train", "train.jsonl"},
                       {"val", "val.jsonl"},
                       {"ood_test", "ood_test.jsonl"}};
  write_text(fs::path(args.out) / "manifest.json", manifest.dump(2) + "\n");
  return 0;
}

struct GenMultilabelArgs {
  MultilabelConfig cfg;
  std::uint64_t seed = 0;
  std::string out;
};

int run_gen_multilabel(const GenMultilabelArgs& args) {
  fs::create_directories(args.out);
  auto bench = gen_masked_multilabel(args.cfg, args.seed);
  save_jsonl(bench.train, fs::path(args.out) / "train.jsonl");
  save_jsonl(bench.test_original, fs::path(args.out) / "test_original.jsonl");
  save_jsonl(bench.test_edited, fs::path(args.out) / "test_edited.jsonl");
  save_jsonl(bench.test_hard_edited,
             fs::path(args.out) / "test_hard_edited.jsonl");
  nlohmann::json manifest;
  manifest["format"] = "gradsup-manifest";
  manifest["version"] = 1;
  manifest["kind"] = "multilabel";
  manifest["seed"] = args.seed;
  manifest["params"] = {{"n", args.cfg.n},
                        {"classes", args.cfg.classes},
                        {"prototype_dim", args.cfg.prototype_dim},
                        {"noise", args.cfg.noise},
                        {"cf_fraction", args.cfg.cf_fraction},
                        {"all_clear", args.cfg.all_clear}};
  manifest["files"] = {{"train", "train.jsonl"},
                       {"test_original", "test_original.jsonl"},
                       {"test_edited", "test_edited.jsonl"},
                       {"test_hard_edited", "test_hard_edited.jsonl"}};
  write_text(fs::path(args.out) / "manifest.json", manifest.dump(2) + "\n");
  return 0;
}

// Token datasets are trained through the frozen bag-of-words encoder; the
// vocabulary comes from the training split only.
struct Encoder {
  std::unordered_map<int, int> vocab;
  BowEncoderConfig bow;

  Dataset encode(const Dataset& data) const {
    Dataset out = data;
    for (Example& e : out.examples) {
      if (!e.tokens) continue;
      auto mapped = remap_tokens(*e.tokens, vocab);
      Tensor enc = encode_bag_of_words(mapped, bow);
      e.features = std::vector<double>(enc.data().begin(), enc.data().end());
      e.tokens.reset();
    }
    return out;
  }
};

std::optional<Encoder> maybe_encoder(const Dataset& train, std::uint64_t seed) {
  if (train.feature_width() != 0) return std::nullopt;
  Encoder enc;
  enc.vocab = build_vocabulary(train, 20000);
  enc.bow = make_bow_encoder(std::max<std::size_t>(1, enc.vocab.size()), 50, 32,
                             seed);
  return enc;
}

struct TrainArgs {
  std::string data_dir;
  std::string out;
  std::string config_file;
  std::string ablation = "none";
  std::string optimizer;
  std::string activation;
  std::vector<std::size_t> hidden;
  double lambda = -1.0;
  double learning_rate = -1.0;
  long long batch_size = -1, max_epochs = -1, patience = -1, warmup = -1;
  long long ensemble = -1;
  long long seed = -1;
  bool unidirectional = false;
  bool lowest_class_only = false;
};

void apply_config_file(const std::string& path, TrainConfig& cfg,
                       std::vector<std::size_t>& hidden,
                       Activation& activation) {
  require_file(path);
  std::ifstream in(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("bad config file " + path + ": " + e.what());
  }
  if (j.contains("optimizer"))
    cfg.optimizer = j["optimizer"].get<std::string>() == "sgd"
                        ? OptimizerKind::Sgd
                        : OptimizerKind::AdaDelta;
  if (j.contains("learning_rate")) cfg.learning_rate = j["learning_rate"];
  if (j.contains("rho")) cfg.rho = j["rho"];
  if (j.contains("epsilon")) cfg.epsilon = j["epsilon"];
  if (j.contains("batch_size")) cfg.batch_size = j["batch_size"];
  if (j.contains("max_epochs")) cfg.max_epochs = j["max_epochs"];
  if (j.contains("patience")) cfg.patience = j["patience"];
  if (j.contains("warmup_epochs")) cfg.warmup_epochs = j["warmup_epochs"];
  if (j.contains("lambda")) cfg.gs.lambda = j["lambda"];
  if (j.contains("norm_epsilon")) cfg.gs.norm_epsilon = j["norm_epsilon"];
  if (j.contains("bidirectional")) cfg.gs.bidirectional = j["bidirectional"];
  if (j.contains("per_class")) cfg.gs.per_class = j["per_class"];
  if (j.contains("seed")) cfg.seed = j["seed"];
  if (j.contains("ensemble")) cfg.ensemble = j["ensemble"];
  if (j.contains("hidden")) hidden = j["hidden"].get<std::vector<std::size_t>>();
  if (j.contains("activation"))
    activation = parse_activation(j["activation"].get<std::string>());
}

fs::path history_path(const fs::path& checkpoint) {
  fs::path p = checkpoint;
  p.replace_extension();
  p += ".history.csv";
  return p;
}

fs::path member_path(const fs::path& checkpoint, std::size_t member) {
  fs::path p = checkpoint;
  fs::path ext = p.extension();
  p.replace_extension();
  p += "_s" + std::to_string(member);
  p += ext;
  return p;
}

int run_train(const TrainArgs& args) {
  const fs::path dir = args.data_dir;
  require_file(dir);
  require_file(dir / "train.jsonl");

  TrainConfig cfg;
  std::vector<std::size_t> hidden;
  Activation activation = Activation::Relu;
  if (!args.config_file.empty())
    apply_config_file(args.config_file, cfg, hidden, activation);
  if (!args.optimizer.empty())
    cfg.optimizer = args.optimizer == "sgd" ? OptimizerKind::Sgd
                                            : OptimizerKind::AdaDelta;
  if (args.lambda >= 0.0) cfg.gs.lambda = args.lambda;
  if (args.learning_rate > 0.0) cfg.learning_rate = args.learning_rate;
  if (args.batch_size > 0) cfg.batch_size = static_cast<std::size_t>(args.batch_size);
  if (args.max_epochs >= 0) cfg.max_epochs = static_cast<std::size_t>(args.max_epochs);
  if (args.patience >= 0) cfg.patience = static_cast<std::size_t>(args.patience);
  if (args.warmup >= 0) cfg.warmup_epochs = static_cast<std::size_t>(args.warmup);
  if (args.ensemble > 0) cfg.ensemble = static_cast<std::size_t>(args.ensemble);
  if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
  if (args.unidirectional) cfg.gs.bidirectional = false;
  if (args.lowest_class_only) cfg.gs.per_class = false;
  if (!args.hidden.empty()) hidden = args.hidden;
  if (!args.activation.empty()) activation = parse_activation(args.activation);

  Dataset train_set = load_jsonl(dir / "train.jsonl");
  auto encoder = maybe_encoder(train_set, cfg.seed);
  if (encoder) train_set = encoder->encode(train_set);

  Dataset val_set;
  if (fs::exists(dir / "val.jsonl")) {
    val_set = load_jsonl(dir / "val.jsonl");
    if (encoder) val_set = encoder->encode(val_set);
  } else {
    // No held-out file: carve a pair-preserving 10% slice off the train set.
    const double fractions[] = {0.9, 0.1};
    auto parts = split(train_set, fractions, cfg.seed);
    train_set = std::move(parts[0]);
    val_set = std::move(parts[1]);
  }

  if (args.ablation == "no-cf-data") {
    Dataset kept;
    for (const Example& e : train_set.examples)
      if (!e.counterfactual_of) kept.examples.push_back(e);
    train_set = std::move(kept);
  } else if (args.ablation == "shuffled-labels") {
    train_set = shuffle_labels(train_set, cfg.seed);
  }
  std::vector<CounterfactualPair> pairs = pair_index(train_set);
  if (args.ablation == "random-relations")
    pairs = randomize_relations(pairs, train_set, cfg.seed);

  std::vector<std::size_t> sizes;
  sizes.push_back(train_set.feature_width());
  for (std::size_t h : hidden) sizes.push_back(h);
  sizes.push_back(train_set.label_arity());
  ModelParams init = init_model(sizes, activation, cfg.seed);

  if (cfg.ensemble <= 1) {
    TrainResult result = train(init, train_set, pairs, val_set, cfg);
    save_checkpoint(result.best, args.out);
    write_text(history_path(args.out), history_csv(result.history));
  } else {
    auto results = train_ensemble(init, train_set, pairs, val_set, cfg);
    for (std::size_t m = 0; m < results.size(); ++m) {
      const fs::path ckpt = member_path(args.out, m);
      save_checkpoint(results[m].best, ckpt);
      write_text(history_path(ckpt), history_csv(results[m].history));
    }
  }
  return 0;
}

struct EvalArgs {
  std::vector<std::string> models;
  std::string data_dir;
  std::string report;
};

int run_eval(const EvalArgs& args) {
  std::vector<ModelParams> members;
  for (const auto& m : args.models) {
    require_file(m);
    members.push_back(load_checkpoint(m));
  }
  const fs::path dir = args.data_dir;
  require_file(dir);

  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".jsonl")
      names.push_back(entry.path().filename().string());
  std::sort(names.begin(), names.end());
  if (names.empty()) throw MissingPath("no .jsonl splits in " + dir.string());

  std::vector<Dataset> datasets;
  datasets.reserve(names.size());
  std::optional<Encoder> encoder;
  for (const auto& name : names) {
    Dataset d = load_jsonl(dir / name);
    if (name == "train.jsonl" && d.feature_width() == 0)
      encoder = maybe_encoder(d, members.front().seed);
    datasets.push_back(std::move(d));
  }
  std::vector<std::pair<std::string, const Dataset*>> splits;
  const Dataset* pair_data = nullptr;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (encoder) datasets[i] = encoder->encode(datasets[i]);
    std::string stem = fs::path(names[i]).stem().string();
    if (stem == "train") pair_data = &datasets[i];
    splits.emplace_back(std::move(stem), &datasets[i]);
  }

  SuiteReport report = evaluate_suite(members, splits, pair_data);
  fs::path json_path = args.report;
  if (json_path.extension() != ".json") json_path += ".json";
  fs::path text_path = json_path;
  text_path.replace_extension(".txt");
  if (json_path.has_parent_path()) fs::create_directories(json_path.parent_path());
  write_text(json_path, report_json(report));
  write_text(text_path, report_text(report));
  return 0;
}

struct BoundaryArgs {
  std::string model;
  std::string data;
  std::string out;
  std::size_t res = 120;
};

int run_boundary(const BoundaryArgs& args) {
  require_file(args.model);
  require_file(args.data);
  ModelParams model = load_checkpoint(args.model);
  Dataset data = load_jsonl(args.data);
  auto pairs = pair_index(data);
  BoundaryGrid grid = boundary_grid(model, data, args.res);
  fs::path stem = args.out;
  stem.replace_extension();
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  fs::path csv = stem;
  csv += ".csv";
  fs::path svg = stem;
  svg += ".svg";
  write_grid_csv(grid, csv);
  write_boundary_svg(grid, data, pairs, svg);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gradient supervision from counterfactual pairs"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "generate a synthetic benchmark");
  gen->require_subcommand(1);

  GenSpuriousArgs sp;
  auto* gen_sp = gen->add_subcommand(
      "spurious", "binary benchmark with a train-only spurious correlation");
  gen_sp->add_option("--n", sp.cfg.n, "training examples before partners");
  gen_sp->add_option("--d", sp.cfg.d, "feature width (>= 3)");
  gen_sp
      ->add_option("--rho", sp.cfg.rho,
                   "train-time label/spurious agreement, in (0.5, 1]")
      ->check([](const std::string& v) -> std::string {
        const double rho = std::stod(v);
        if (rho > 0.5 && rho <= 1.0) return {};
        return "rho must exceed 0.5 and be at most 1";
      });
  gen_sp->add_option("--sigma", sp.cfg.sigma, "core coordinate noise");
  gen_sp->add_option("--cf-fraction", sp.cfg.cf_fraction,
                     "fraction of train examples given a partner");
  gen_sp->add_option("--seed", sp.seed, "generator seed");
  gen_sp->add_option("--out", sp.out, "output directory")->required();

  GenMultilabelArgs ml;
  auto* gen_ml = gen->add_subcommand(
      "multilabel", "prototype-sum benchmark with masked counterfactuals");
  gen_ml->add_option("--n", ml.cfg.n, "training examples before partners");
  gen_ml->add_option("--classes", ml.cfg.classes, "number of classes");
  gen_ml->add_option("--prototype-dim", ml.cfg.prototype_dim, "feature width");
  gen_ml->add_option("--noise", ml.cfg.noise, "per-coordinate feature noise");
  gen_ml->add_option("--cf-fraction", ml.cfg.cf_fraction,
                     "fraction of train examples masked");
  gen_ml->add_flag("--all-clear", ml.cfg.all_clear,
                   "counterfactuals clear every present class");
  gen_ml->add_option("--seed", ml.seed, "generator seed");
  gen_ml->add_option("--out", ml.out, "output directory")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "train on a benchmark directory");
  train_cmd->add_option("--data", tr.data_dir, "directory with train.jsonl")
      ->required();
  train_cmd->add_option("--out", tr.out, "checkpoint output path")->required();
  train_cmd->add_option("--config", tr.config_file, "JSON config file");
  train_cmd
      ->add_option("--ablation", tr.ablation,
                   "none | random-relations | no-cf-data | shuffled-labels")
      ->check(CLI::IsMember(
          {"none", "random-relations", "no-cf-data", "shuffled-labels"}));
  train_cmd->add_option("--lambda", tr.lambda, "GS loss weight");
  train_cmd->add_option("--optimizer", tr.optimizer, "adadelta | sgd")
      ->check(CLI::IsMember({"adadelta", "sgd"}));
  train_cmd->add_option("--lr", tr.learning_rate, "sgd learning rate");
  train_cmd->add_option("--batch-size", tr.batch_size, "mini-batch size");
  train_cmd->add_option("--epochs", tr.max_epochs, "max epochs");
  train_cmd->add_option("--patience", tr.patience, "early stopping patience");
  train_cmd->add_option("--warmup", tr.warmup, "epochs before the GS term");
  train_cmd->add_option("--ensemble", tr.ensemble, "independent members");
  train_cmd->add_option("--seed", tr.seed, "training seed");
  train_cmd->add_option("--hidden", tr.hidden,
                        "hidden layer widths, empty for a linear model");
  train_cmd->add_option("--activation", tr.activation, "relu | sigmoid | none")
      ->check(CLI::IsMember({"relu", "sigmoid", "none"}));
  train_cmd->add_flag("--unidirectional", tr.unidirectional,
                      "GS at the negative endpoint only");
  train_cmd->add_flag("--lowest-class-only", tr.lowest_class_only,
                      "supervise only the lowest differing class");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate checkpoints on a directory");
  eval_cmd->add_option("--model", ev.models, "checkpoint path(s); several form an ensemble")
      ->required();
  eval_cmd->add_option("--data", ev.data_dir, "directory of .jsonl splits")
      ->required();
  eval_cmd->add_option("--report", ev.report, "report path (.json; .txt sibling)")
      ->required();

  BoundaryArgs bd;
  auto* plot_cmd =
      app.add_subcommand("plot-boundary", "score grid and SVG for 2-d data");
  plot_cmd->add_option("--model", bd.model, "checkpoint path")->required();
  plot_cmd->add_option("--data", bd.data, "2-coordinate dataset (.jsonl)")
      ->required();
  plot_cmd->add_option("--res", bd.res, "grid resolution per axis");
  plot_cmd->add_option("--out", bd.out, "output stem (.csv and .svg)")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_sp->parsed()) return run_gen_spurious(sp);
    if (gen_ml->parsed()) return run_gen_multilabel(ml);
    if (train_cmd->parsed()) return run_train(tr);
    if (eval_cmd->parsed()) return run_eval(ev);
    if (plot_cmd->parsed()) return run_boundary(bd);
  } catch (const MissingPath& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
