#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "gradsup/data.hpp"
#include "gradsup/gs.hpp"

using namespace gradsup;

namespace {

Example ex(std::string id, std::vector<double> x, std::vector<int> labels,
           std::string link = "") {
  Example e;
  e.id = std::move(id);
  e.features = std::move(x);
  e.labels = std::move(labels);
  if (!link.empty()) e.counterfactual_of = std::move(link);
  return e;
}

std::string pattern(const Example& e) {
  std::string s;
  for (int v : e.labels) s += v ? '1' : '0';
  return s;
}

std::size_t positives(const Dataset& d, bool originals_only) {
  std::size_t count = 0;
  for (const Example& e : d.examples) {
    if (originals_only && e.counterfactual_of) continue;
    if (e.labels[0] == 1) ++count;
  }
  return count;
}

}  // namespace

TEST_CASE("jsonl round-trip preserves everything") {
  Dataset d;
  d.examples.push_back(ex("a", {0.1, 1.0 / 3.0, -0.0}, {0}));
  d.examples.push_back(ex("a_cf", {-0.1, 1.0 / 3.0, 5.0}, {1}, "a"));
  Example tok;
  tok.id = "t1";
  tok.tokens = std::vector<int>{3, 1, 4, 1, 5};
  tok.labels = {1};
  tok.split = "extra";
  d.examples.push_back(tok);

  auto path = std::filesystem::path("data_roundtrip.jsonl");
  save_jsonl(d, path);
  Dataset loaded = load_jsonl(path);
  CHECK(loaded == d);

  // Writing the loaded copy reproduces the file byte for byte.
  auto again = std::filesystem::path("data_roundtrip2.jsonl");
  save_jsonl(loaded, again);
  std::ifstream fa(path, std::ios::binary), fb(again, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(fa)), {});
  std::string sb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(sa == sb);
  std::filesystem::remove(path);
  std::filesystem::remove(again);
}

TEST_CASE("load_jsonl rejects malformed input with location") {
  auto write_and_load = [](const std::string& body, const char* needle) {
    auto path = std::filesystem::path("data_bad.jsonl");
    std::ofstream(path) << body;
    bool threw = false;
    try {
      load_jsonl(path);
    } catch (const std::exception& e) {
      threw = true;
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
    CHECK(threw);
    std::filesystem::remove(path);
  };

  write_and_load("{\"id\": \"a\"\n", "data_bad.jsonl:1");
  write_and_load(R"({"id":"a","features":[1],"labels":[0],)"
                 R"("counterfactual_of":"ghost","split":"train","tokens":null})"
                 "\n",
                 "ghost");
  // Linked examples must disagree on labels.
  write_and_load(
      R"({"id":"a","features":[1.0],"tokens":null,"labels":[0],"counterfactual_of":null,"split":"train"})"
      "\n"
      R"({"id":"b","features":[2.0],"tokens":null,"labels":[0],"counterfactual_of":"a","split":"train"})"
      "\n",
      "b");
  // Duplicate ids.
  write_and_load(
      R"({"id":"a","features":[1.0],"tokens":null,"labels":[0],"counterfactual_of":null,"split":"train"})"
      "\n"
      R"({"id":"a","features":[2.0],"tokens":null,"labels":[1],"counterfactual_of":null,"split":"train"})"
      "\n",
      "a");
  CHECK_THROWS_AS(load_jsonl("missing_file.jsonl"), std::runtime_error);
}

TEST_CASE("validate reports every fault at once") {
  Dataset d;
  d.examples.push_back(ex("a", {1}, {0}));
  d.examples.push_back(ex("b", {2}, {0}, "a"));      // labels equal
  d.examples.push_back(ex("c", {3}, {1}, "ghost"));  // dangling link
  try {
    validate(d);
    FAIL("expected validate to throw");
  } catch (const std::exception& e) {
    std::string msg = e.what();
    CHECK(msg.find("b") != std::string::npos);
    CHECK(msg.find("ghost") != std::string::npos);
  }
}

TEST_CASE("dataset lookups") {
  Dataset d;
  d.examples.push_back(ex("a", {1, 2}, {0}));
  d.examples.push_back(ex("b", {3, 4}, {1}, "a"));
  CHECK(d.size() == 2);
  CHECK(d.label_arity() == 1);
  CHECK(d.feature_width() == 2);
  CHECK(d.index_of("b") == 1);
  CHECK_THROWS_AS(d.index_of("nope"), std::out_of_range);
  CHECK(d.find("a") != nullptr);
  CHECK(d.find("nope") == nullptr);
}

TEST_CASE("pair_index dedupes mutual links") {
  Dataset d;
  d.examples.push_back(ex("a", {1}, {0}, "b"));
  d.examples.push_back(ex("b", {2}, {1}, "a"));
  d.examples.push_back(ex("c", {3}, {0}));
  d.examples.push_back(ex("d", {4}, {1}, "c"));
  auto pairs = pair_index(d);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0] == make_undirected_pair(0, 1));
  CHECK(pairs[1] == make_undirected_pair(2, 3));
  CHECK(std::is_sorted(pairs.begin(), pairs.end()));

  Dataset none;
  none.examples.push_back(ex("x", {1}, {0}));
  CHECK(pair_index(none).empty());
}

TEST_CASE("mask_features zeroes the chosen coordinates") {
  std::vector<double> x{1, 2, 3};
  std::vector<std::size_t> mask{0, 2};
  CHECK(mask_features(x, mask) == std::vector<double>{0, 2, 0});
  std::vector<std::size_t> none;
  CHECK(mask_features(x, none) == x);
  std::vector<std::size_t> bad{3};
  CHECK_THROWS_AS(mask_features(x, bad), std::out_of_range);
}

TEST_CASE("gen_spurious_ood structure") {
  SpuriousConfig cfg;
  cfg.n = 200;
  SpuriousBenchmark b = gen_spurious_ood(cfg, 7);

  CHECK(b.train.size() == 200 + 50);  // cf_fraction 0.25
  CHECK(b.val.size() == 40);
  CHECK(b.ood_test.size() == 100);
  CHECK(b.train.feature_width() == cfg.d);
  CHECK(b.train.label_arity() == 1);

  // Originals are exactly balanced, which pins the chance level at 0.5.
  CHECK(positives(b.train, true) == 100);
  CHECK(positives(b.val, false) == 20);
  CHECK(positives(b.ood_test, false) == 50);

  CHECK(pair_index(b.train).size() == 50);
  CHECK(pair_index(b.val).empty());
  CHECK(pair_index(b.ood_test).empty());

  // Determinism, and seed sensitivity.
  SpuriousBenchmark again = gen_spurious_ood(cfg, 7);
  CHECK(again.train == b.train);
  CHECK(again.val == b.val);
  CHECK(again.ood_test == b.ood_test);
  SpuriousBenchmark other = gen_spurious_ood(cfg, 8);
  CHECK_FALSE(other.train == b.train);
}

TEST_CASE("gen_spurious_ood pair geometry at sigma 0") {
  SpuriousConfig cfg;
  cfg.n = 60;
  cfg.sigma = 0.0;
  cfg.cf_fraction = 1.0;
  SpuriousBenchmark b = gen_spurious_ood(cfg, 3);
  auto pairs = pair_index(b.train);
  REQUIRE(pairs.size() == 60);
  for (const auto& pr : pairs) {
    const Example& u = b.train.examples[pr.a];
    const Example& v = b.train.examples[pr.b];
    REQUIRE(u.labels[0] != v.labels[0]);
    const Example& pos = u.labels[0] == 1 ? u : v;
    const Example& neg = u.labels[0] == 1 ? v : u;
    Tensor d = target_gradient(Tensor::vec(*neg.features),
                               Tensor::vec(*pos.features));
    // The pair difference lies exactly on the core axis, oriented positive.
    CHECK(d[0] == 2.0);
    for (std::size_t k = 1; k < cfg.d; ++k) CHECK(d[k] == 0.0);
  }
}

TEST_CASE("gen_spurious_ood correlation flips out of distribution") {
  SpuriousConfig cfg;
  cfg.n = 400;
  cfg.rho = 1.0;
  cfg.sigma = 0.0;
  SpuriousBenchmark b = gen_spurious_ood(cfg, 5);
  for (const Example& e : b.train.examples) {
    if (e.counterfactual_of) continue;  // partners keep the old spurious value
    const double s = e.labels[0] == 1 ? 1.0 : -1.0;
    CHECK((*e.features)[1] == s);
  }
  for (const Example& e : b.ood_test.examples) {
    const double s = e.labels[0] == 1 ? 1.0 : -1.0;
    CHECK((*e.features)[1] == -s);  // agreement 1 - rho = 0
  }
}

TEST_CASE("gen_spurious_ood rejects bad configs") {
  SpuriousConfig cfg;
  cfg.rho = 0.3;
  CHECK_THROWS_AS(gen_spurious_ood(cfg, 0), std::invalid_argument);
  cfg.rho = 0.5;
  CHECK_THROWS_AS(gen_spurious_ood(cfg, 0), std::invalid_argument);
  cfg.rho = 1.2;
  CHECK_THROWS_AS(gen_spurious_ood(cfg, 0), std::invalid_argument);
  cfg.rho = 0.95;
  cfg.d = 2;
  CHECK_THROWS_AS(gen_spurious_ood(cfg, 0), std::invalid_argument);
  cfg.d = 10;
  cfg.cf_fraction = 1.5;
  CHECK_THROWS_AS(gen_spurious_ood(cfg, 0), std::invalid_argument);
}

TEST_CASE("gen_masked_multilabel structure") {
  MultilabelConfig cfg;
  cfg.n = 240;
  MultilabelBenchmark b = gen_masked_multilabel(cfg, 11);

  CHECK(b.train.size() == 240 + 120);  // cf_fraction 0.5
  CHECK(b.test_original.size() == 60);
  CHECK(b.test_edited.size() == 60);
  CHECK(b.test_hard_edited.size() == 30);
  CHECK(b.train.label_arity() == 10);
  CHECK(b.train.feature_width() == 64);
  CHECK(pair_index(b.train).size() == 120);

  MultilabelBenchmark again = gen_masked_multilabel(cfg, 11);
  CHECK(again.train == b.train);
  CHECK(again.test_hard_edited == b.test_hard_edited);
}

TEST_CASE("masked partners drop one class and its prototype") {
  MultilabelConfig cfg;
  cfg.n = 160;
  cfg.noise = 0.05;
  MultilabelBenchmark b = gen_masked_multilabel(cfg, 2);
  std::size_t checked = 0;
  for (const Example& e : b.train.examples) {
    if (!e.counterfactual_of) continue;
    const Example& base = *b.train.find(*e.counterfactual_of);
    // Exactly one class cleared, none added.
    int removed = 0;
    for (std::size_t c = 0; c < 10; ++c) {
      if (base.labels[c] == 1 && e.labels[c] == 0) ++removed;
      CHECK_FALSE((base.labels[c] == 0 && e.labels[c] == 1));
    }
    CHECK(removed == 1);
    // The feature delta is the removed class's unit prototype.
    double n2 = 0;
    for (std::size_t k = 0; k < 64; ++k) {
      const double dk = (*base.features)[k] - (*e.features)[k];
      n2 += dk * dk;
    }
    CHECK(std::abs(std::sqrt(n2) - 1.0) <= 1e-9);
    ++checked;
  }
  CHECK(checked == 80);
}

TEST_CASE("all_clear partners clear every present class") {
  MultilabelConfig cfg;
  cfg.n = 80;
  cfg.all_clear = true;
  MultilabelBenchmark b = gen_masked_multilabel(cfg, 6);
  std::size_t checked = 0;
  for (const Example& e : b.train.examples) {
    if (!e.counterfactual_of) continue;
    for (int v : e.labels) CHECK(v == 0);
    ++checked;
  }
  CHECK(checked == 40);
}

TEST_CASE("hard-edited patterns never appear in training") {
  MultilabelConfig cfg;
  cfg.n = 240;
  MultilabelBenchmark b = gen_masked_multilabel(cfg, 4);
  std::set<std::string> train_patterns;
  for (const Example& e : b.train.examples) train_patterns.insert(pattern(e));
  for (const Example& e : b.test_hard_edited.examples) {
    CHECK(train_patterns.count(pattern(e)) == 0);
    int present = 0;
    for (int v : e.labels) present += v;
    CHECK(present >= 1);
  }
}

TEST_CASE("co-occurrence validation") {
  MultilabelConfig cfg;
  cfg.classes = 3;
  cfg.prototype_dim = 8;
  cfg.n = 40;
  cfg.cooccurrence = {{1.0, 0.5}, {0.5, 1.0}};  // wrong dimension
  CHECK_THROWS_AS(gen_masked_multilabel(cfg, 0), std::invalid_argument);

  cfg.cooccurrence = {{1.0, 0.2, 0.9}, {0.3, 1.0, 0.1}, {0.9, 0.1, 1.0}};
  bool threw = false;
  try {
    gen_masked_multilabel(cfg, 0);  // asymmetric: (0,1) vs (1,0)
  } catch (const std::exception& e) {
    threw = true;
    CHECK(std::string(e.what()).find("co-occurrence") != std::string::npos);
  }
  CHECK(threw);

  cfg.cooccurrence = {{1.0, 2.0, 0.9}, {2.0, 1.0, 0.1}, {0.9, 0.1, 1.0}};
  CHECK_THROWS_AS(gen_masked_multilabel(cfg, 0), std::invalid_argument);

  // A valid custom matrix generates fine. Eight classes leave enough label
  // patterns (2^8) for the hard-edited split to find unseen ones; three
  // classes would exhaust all patterns in training.
  cfg.classes = 8;
  cfg.cooccurrence.assign(8, std::vector<double>(8, 0.2));
  for (std::size_t i = 0; i < 8; ++i) cfg.cooccurrence[i][i] = 1.0;
  MultilabelBenchmark ok = gen_masked_multilabel(cfg, 0);
  CHECK(ok.train.size() > 0);
}

TEST_CASE("split keeps linked partners together") {
  Dataset d;
  for (int i = 0; i < 40; ++i)
    d.examples.push_back(ex("e" + std::to_string(i), {double(i)}, {i % 2}));
  for (int i = 0; i < 10; ++i)
    d.examples.push_back(ex("e" + std::to_string(i) + "_cf",
                            {double(i) + 0.5}, {1 - i % 2},
                            "e" + std::to_string(i)));

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::vector<double> fr{0.5, 0.3, 0.2};
    auto parts = split(d, fr, seed);
    REQUIRE(parts.size() == 3);

    std::size_t total = 0;
    std::map<std::string, int> where;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      total += parts[p].size();
      for (const Example& e : parts[p].examples) where[e.id] = int(p);
    }
    CHECK(total == d.size());
    CHECK(where.size() == d.size());  // disjoint and exhaustive
    for (int i = 0; i < 10; ++i) {
      std::string a = "e" + std::to_string(i);
      CHECK(where.at(a) == where.at(a + "_cf"));
    }
    // Sizes stay within a group of the target.
    CHECK(parts[0].size() >= 23);
    CHECK(parts[0].size() <= 27);
  }
}

TEST_CASE("split is deterministic and order-preserving") {
  Dataset d;
  for (int i = 0; i < 20; ++i)
    d.examples.push_back(ex("e" + std::to_string(i), {double(i)}, {i % 2}));
  std::vector<double> fr{0.5, 0.5};
  auto a = split(d, fr, 9);
  auto b = split(d, fr, 9);
  CHECK(a[0] == b[0]);
  CHECK(a[1] == b[1]);
  // Within a part, examples keep their original relative order.
  for (const Dataset& part : a) {
    std::vector<std::size_t> positions;
    for (const Example& e : part.examples)
      positions.push_back(d.index_of(e.id));
    CHECK(std::is_sorted(positions.begin(), positions.end()));
  }

  std::vector<double> whole{1.0};
  auto one = split(d, whole, 0);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == d);

  std::vector<double> bad{0.7, 0.7};
  CHECK_THROWS_AS(split(d, bad, 0), std::invalid_argument);
  std::vector<double> none;
  CHECK_THROWS_AS(split(d, none, 0), std::invalid_argument);
}
