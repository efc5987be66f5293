#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "gradsup/boundary.hpp"
#include "gradsup/checkpoint.hpp"
#include "gradsup/data.hpp"
#include "gradsup/model.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace gradsup;

namespace {

const std::string kBin = GRADSUP_BIN;

int run(const std::string& args, std::string* output = nullptr) {
  const fs::path log = "cli_last_output.txt";
  const std::string cmd = kBin + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) {
    std::ifstream in(log, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    *output = buf.str();
  }
  if (status == -1 || !WIFEXITED(status)) return -1;
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::path("cli_scratch") / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Tiny linearly separable 2-d set with one counterfactual pair.
Dataset toy_2d() {
  Dataset d;
  auto add = [&](std::string id, double x, double y, int label,
                 std::string link = "") {
    Example e;
    e.id = std::move(id);
    e.features = std::vector<double>{x, y};
    e.labels = {label};
    if (!link.empty()) e.counterfactual_of = std::move(link);
    d.examples.push_back(std::move(e));
  };
  add("a", -1.0, -0.5, 0);
  add("b", -0.8, 0.6, 0);
  add("c", -0.4, -0.9, 0);
  add("d", 1.0, 0.5, 1);
  add("e", 0.7, -0.6, 1);
  add("f", 0.3, 0.9, 1);
  add("a_cf", 0.9, -0.5, 1, "a");
  return d;
}

}  // namespace

TEST_CASE("gen spurious is deterministic across reruns") {
  fs::path d1 = fresh_dir("gen1");
  fs::path d2 = fresh_dir("gen2");
  const std::string common = "gen spurious --n 60 --seed 5 --out ";
  REQUIRE(run(common + d1.string()) == 0);
  REQUIRE(run(common + d2.string()) == 0);

  for (const char* name :
       {"train.jsonl", "val.jsonl", "ood_test.jsonl", "manifest.json"}) {
    CAPTURE(name);
    REQUIRE(fs::exists(d1 / name));
    CHECK(slurp(d1 / name) == slurp(d2 / name));
  }
  auto manifest = nlohmann::json::parse(slurp(d1 / "manifest.json"));
  CHECK(manifest.at("format") == "gradsup-manifest");
  CHECK(manifest.at("seed") == 5);

  fs::path d3 = fresh_dir("gen3");
  REQUIRE(run("gen spurious --n 60 --seed 6 --out " + d3.string()) == 0);
  CHECK(slurp(d1 / "train.jsonl") != slurp(d3 / "train.jsonl"));
}

TEST_CASE("gen rejects an out-of-range rho") {
  std::string out;
  const int rc =
      run("gen spurious --rho 0.3 --out cli_scratch/never", &out);
  CHECK(rc != 0);
  CHECK(out.find("rho") != std::string::npos);
  CHECK_FALSE(fs::exists("cli_scratch/never/train.jsonl"));
}

TEST_CASE("train exits 2 and names the missing data directory") {
  std::string out;
  const int rc = run(
      "train --data cli_scratch/no_such_dir --out cli_scratch/x.json", &out);
  CHECK(rc == 2);
  CHECK(out.find("missing required path") != std::string::npos);
  CHECK(out.find("no_such_dir") != std::string::npos);
}

TEST_CASE("eval exits 2 when the split directory is missing") {
  std::string out;
  const int rc = run(
      "eval --model cli_scratch/x.json --data cli_scratch/no_such_dir "
      "--report cli_scratch/r.json",
      &out);
  CHECK(rc == 2);
  CHECK(out.find("missing required path") != std::string::npos);
}

TEST_CASE("spurious pipeline: gen, train, eval") {
  fs::path data = fresh_dir("pipe_data");
  REQUIRE(run("gen spurious --n 80 --seed 3 --out " + data.string()) == 0);

  fs::path ckpt = fs::path("cli_scratch") / "pipe_model.json";
  const std::string train_cmd = "train --data " + data.string() + " --out " +
                                ckpt.string() +
                                " --lambda 0 --epochs 3 --seed 1";
  REQUIRE(run(train_cmd) == 0);
  REQUIRE(fs::exists(ckpt));
  ModelParams trained = load_checkpoint(ckpt);
  CHECK(trained.input_width() == 10);
  CHECK(trained.output_arity() == 1);

  fs::path hist = fs::path("cli_scratch") / "pipe_model.history.csv";
  REQUIRE(fs::exists(hist));
  std::string csv = slurp(hist);
  CHECK(csv.rfind("epoch,main_loss,gs_loss,val_metric\n", 0) == 0);

  // Retraining reproduces the checkpoint byte for byte.
  fs::path ckpt2 = fs::path("cli_scratch") / "pipe_model_rerun.json";
  REQUIRE(run("train --data " + data.string() + " --out " + ckpt2.string() +
              " --lambda 0 --epochs 3 --seed 1") == 0);
  CHECK(slurp(ckpt) == slurp(ckpt2));

  fs::path report = fs::path("cli_scratch") / "pipe_report.json";
  const std::string eval_cmd = "eval --model " + ckpt.string() + " --data " +
                               data.string() + " --report " + report.string();
  REQUIRE(run(eval_cmd) == 0);
  REQUIRE(fs::exists(report));
  fs::path report_txt = report;
  report_txt.replace_extension(".txt");
  REQUIRE(fs::exists(report_txt));

  auto parsed = nlohmann::json::parse(slurp(report));
  CHECK(parsed.at("format") == "gradsup-report");
  REQUIRE(parsed.at("splits").size() == 3);  // ood_test, train, val
  CHECK(parsed.at("alignment").is_number());  // train.jsonl carries pairs

  // Byte-identical evaluation rerun.
  fs::path report2 = fs::path("cli_scratch") / "pipe_report2.json";
  REQUIRE(run("eval --model " + ckpt.string() + " --data " + data.string() +
              " --report " + report2.string()) == 0);
  CHECK(slurp(report) == slurp(report2));
}

TEST_CASE("lambda changes training, ablations are accepted") {
  fs::path data = fresh_dir("ablate_data");
  REQUIRE(run("gen spurious --n 60 --seed 9 --out " + data.string()) == 0);

  fs::path base = fs::path("cli_scratch") / "ab_base.json";
  fs::path gs = fs::path("cli_scratch") / "ab_gs.json";
  const std::string tail = " --epochs 3 --seed 2 --out ";
  REQUIRE(run("train --data " + data.string() + " --lambda 0" + tail +
              base.string()) == 0);
  REQUIRE(run("train --data " + data.string() + " --lambda 10" + tail +
              gs.string()) == 0);
  CHECK(slurp(base) != slurp(gs));

  for (const char* ablation :
       {"none", "no-cf-data", "random-relations", "shuffled-labels"}) {
    CAPTURE(ablation);
    fs::path out =
        fs::path("cli_scratch") / ("ab_" + std::string(ablation) + ".json");
    CHECK(run("train --data " + data.string() + " --ablation " + ablation +
              " --lambda 10" + tail + out.string()) == 0);
    CHECK(fs::exists(out));
  }
  std::string msg;
  CHECK(run("train --data " + data.string() + " --ablation bogus" + tail +
            "cli_scratch/ab_bogus.json",
            &msg) != 0);
}

TEST_CASE("ensemble training writes one checkpoint per member") {
  fs::path data = fresh_dir("ens_data");
  REQUIRE(run("gen spurious --n 60 --seed 4 --out " + data.string()) == 0);

  fs::path out = fs::path("cli_scratch") / "ens.json";
  REQUIRE(run("train --data " + data.string() + " --out " + out.string() +
              " --lambda 0 --epochs 2 --ensemble 2") == 0);
  fs::path m0 = fs::path("cli_scratch") / "ens_s0.json";
  fs::path m1 = fs::path("cli_scratch") / "ens_s1.json";
  REQUIRE(fs::exists(m0));
  REQUIRE(fs::exists(m1));
  CHECK(fs::exists(fs::path("cli_scratch") / "ens_s0.history.csv"));
  CHECK(slurp(m0) != slurp(m1));

  fs::path report = fs::path("cli_scratch") / "ens_report.json";
  REQUIRE(run("eval --model " + m0.string() + " --model " + m1.string() +
              " --data " + data.string() + " --report " + report.string()) ==
          0);
  auto parsed = nlohmann::json::parse(slurp(report));
  CHECK(parsed.at("ensemble_size") == 2);
}

TEST_CASE("multilabel pipeline reports mAP") {
  fs::path data = fresh_dir("ml_data");
  REQUIRE(run("gen multilabel --n 60 --seed 8 --out " + data.string()) == 0);
  REQUIRE(fs::exists(data / "train.jsonl"));
  REQUIRE(fs::exists(data / "test_hard_edited.jsonl"));

  fs::path ckpt = fs::path("cli_scratch") / "ml_model.json";
  REQUIRE(run("train --data " + data.string() + " --out " + ckpt.string() +
              " --lambda 0 --epochs 2") == 0);
  fs::path report = fs::path("cli_scratch") / "ml_report.json";
  REQUIRE(run("eval --model " + ckpt.string() + " --data " + data.string() +
              " --report " + report.string()) == 0);
  auto parsed = nlohmann::json::parse(slurp(report));
  bool saw_map = false;
  for (const auto& row : parsed.at("splits"))
    if (row.at("metric") == "map") saw_map = true;
  CHECK(saw_map);
}

TEST_CASE("corrupt checkpoints fail evaluation cleanly") {
  fs::path data = fresh_dir("corrupt_data");
  REQUIRE(run("gen spurious --n 60 --seed 2 --out " + data.string()) == 0);
  fs::path bad = fs::path("cli_scratch") / "bad.json";
  std::ofstream(bad) << "{ definitely not a checkpoint";
  std::string out;
  const int rc = run("eval --model " + bad.string() + " --data " +
                         data.string() + " --report cli_scratch/bad_report.json",
                     &out);
  CHECK(rc == 1);
  CHECK(out.find("bad.json") != std::string::npos);
}

TEST_CASE("plot-boundary writes a grid and an svg") {
  fs::path dir = fresh_dir("plot");
  fs::path data = dir / "toy.jsonl";
  Dataset toy = toy_2d();
  save_jsonl(toy, data);

  // A fixed vertical separator: logit = x, boundary at x = 0.
  ModelParams wall;
  wall.layers.push_back({Tensor::matrix(1, 2, {1, 0}), Tensor::zeros({1})});
  wall.hidden = Activation::None;
  fs::path ckpt = dir / "wall.json";
  save_checkpoint(wall, ckpt);

  fs::path stem = dir / "plot_out";
  REQUIRE(run("plot-boundary --model " + ckpt.string() + " --data " +
              data.string() + " --res 41 --out " + stem.string()) == 0);
  fs::path csv = stem;
  csv += ".csv";
  fs::path svg = stem;
  svg += ".svg";
  REQUIRE(fs::exists(csv));
  REQUIRE(fs::exists(svg));

  // The CSV matches the in-process grid and the crossings sit on x = 0.
  std::istringstream in(slurp(csv));
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "x,y,score");
  struct Row {
    double x, y, score;
  };
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    Row r{};
    REQUIRE(std::sscanf(line.c_str(), "%lf,%lf,%lf", &r.x, &r.y, &r.score) ==
            3);
    rows.push_back(r);
  }
  REQUIRE(rows.size() == 41 * 41);

  BoundaryGrid grid = boundary_grid(wall, toy, 41);
  CHECK(rows.front().x == grid.x_at(0));
  CHECK(rows.back().x == grid.x_at(40));
  CHECK(rows.front().score == grid.scores.front());

  std::size_t crossings = 0;
  for (std::size_t row = 0; row < 41; ++row) {
    for (std::size_t col = 0; col + 1 < 41; ++col) {
      const Row& a = rows[row * 41 + col];
      const Row& b = rows[row * 41 + col + 1];
      if ((a.score - 0.5) * (b.score - 0.5) < 0.0) {
        const double t = (0.5 - a.score) / (b.score - a.score);
        const double x0 = a.x + t * (b.x - a.x);
        CHECK(std::abs(x0) < 1e-9);  // sigmoid symmetry makes this exact
        ++crossings;
      } else if (a.score == 0.5) {
        CHECK(std::abs(a.x) < 1e-12);
        ++crossings;
      }
    }
  }
  CHECK(crossings == 41);  // one crossing per grid row

  // The svg draws points, the pair segment, and the contour.
  std::string svg_body = slurp(svg);
  CHECK(svg_body.find("<svg") != std::string::npos);
  CHECK(svg_body.find("class=\"pair\"") != std::string::npos);
  CHECK(svg_body.find("class=\"contour\"") != std::string::npos);

  // Reruns are byte-identical.
  fs::path stem2 = dir / "plot_again";
  REQUIRE(run("plot-boundary --model " + ckpt.string() + " --data " +
              data.string() + " --res 41 --out " + stem2.string()) == 0);
  fs::path csv2 = stem2;
  csv2 += ".csv";
  CHECK(slurp(csv) == slurp(csv2));

  // Without counterfactual links no pair segment is drawn.
  Dataset unpaired = toy;
  for (Example& e : unpaired.examples) e.counterfactual_of.reset();
  fs::path data2 = dir / "unpaired.jsonl";
  save_jsonl(unpaired, data2);
  fs::path stem3 = dir / "plot_unpaired";
  REQUIRE(run("plot-boundary --model " + ckpt.string() + " --data " +
              data2.string() + " --res 5 --out " + stem3.string()) == 0);
  fs::path svg3 = stem3;
  svg3 += ".svg";
  CHECK(slurp(svg3).find("class=\"pair\"") == std::string::npos);

  // Low resolutions are rejected.
  std::string msg;
  CHECK(run("plot-boundary --model " + ckpt.string() + " --data " +
                data.string() + " --res 1 --out " + (dir / "tiny").string(),
            &msg) != 0);
}
