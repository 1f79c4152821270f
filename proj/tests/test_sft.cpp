#include <doctest.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "ragmarl/numerics.hpp"
#include "ragmarl/sft.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace ragmarl;
using ragmarl::testing::oracle_labels;
using ragmarl::testing::small_world_config;
using ragmarl::testing::tiny_backbone;

namespace {

// Hand-written world file: documents in order, one train question per
// (question, answer) pair; stop words as listed.
World toy_world(const std::vector<std::string>& docs,
                const std::vector<std::pair<std::string, std::string>>& questions,
                const std::vector<std::string>& stop = {"where", "was", "in", "is", "the"}) {
  Vocab vocab;
  auto add_all = [&](const std::string& s) {
    for (const auto& w : split_words(s)) vocab.add(w);
  };
  for (const auto& d : docs) add_all(d);
  for (const auto& [q, a] : questions) {
    add_all(q);
    add_all(a);
  }
  for (const auto& w : stop) vocab.add(w);
  for (const char* w : {"t", "decompose", "question", ":", "subquestions", "select", "documents",
                        "ids", "answer"}) {
    vocab.add(w);
  }
  std::string text = "ragmarl-world\t1\n";
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    text += "vocab\t" + std::to_string(i) + '\t' + vocab.token(static_cast<int>(i)) + '\n';
  }
  for (const auto& w : stop) text += "stopword\t" + w + '\n';
  for (std::size_t i = 0; i < docs.size(); ++i) {
    text += "doc\t" + std::to_string(i) + "\tt" + '\t' + docs[i] + '\n';
  }
  for (std::size_t i = 0; i < questions.size(); ++i) {
    const auto& [q, a] = questions[i];
    text += "qa\ttrain\t" + std::to_string(i) + "\t1\t0\t" + q + '\t' + a + '\t' + q + '\n';
  }
  return parse_world(text);
}

std::vector<int> iota_ids(std::size_t n) {
  std::vector<int> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<int>(i);
  return v;
}

}  // namespace

TEST_CASE("build_qr_dataset: one line per gold sub-question") {
  auto cfg = small_world_config();
  const World w = build_world(cfg);
  const PipelineOptions opt;
  const auto ex = build_qr_dataset(w, w.train, opt);
  REQUIRE(ex.size() == w.train.size());
  for (std::size_t i = 0; i < ex.size(); ++i) {
    const auto& t = ex[i].target;
    const auto nl = std::count(t.begin(), t.end(), tok::kNewline);
    CHECK(nl == w.train[i].hops - 1);
    CHECK(t.back() == tok::kEos);
    CHECK(ex[i].role == Role::kQueryRewriter);
  }
  const auto again = build_qr_dataset(w, w.train, opt);
  CHECK(format_sft_dataset(w.vocab, ex) == format_sft_dataset(w.vocab, again));
}

TEST_CASE("build_selector_labels: worked example picks the document with the answer") {
  const World w = toy_world({"alice was born in paris", "bob lives in rome"},
                            {{"where was alice born", "paris"}});
  CHECK(build_selector_labels(w, w.train[0], iota_ids(2)) == std::vector<std::size_t>{0});
}

TEST_CASE("build_selector_labels: answer word only in document 7") {
  std::vector<std::string> docs;
  for (int i = 0; i < 10; ++i) docs.push_back("filler" + std::to_string(i) + " words" + std::to_string(i));
  docs[7] = "something about lyon";
  const World w = toy_world(docs, {{"where is zed", "lyon"}});
  CHECK(build_selector_labels(w, w.train[0], iota_ids(10)) == std::vector<std::size_t>{7});
}

TEST_CASE("build_selector_labels: shared question word selects all, nothing falls back to 0") {
  std::vector<std::string> docs;
  for (int i = 0; i < 10; ++i) docs.push_back("zed item" + std::to_string(i));
  const World all = toy_world(docs, {{"where is zed", "nowhere"}});
  const auto labels = build_selector_labels(all, all.train[0], iota_ids(10));
  CHECK(labels.size() == 10);
  CHECK(std::is_sorted(labels.begin(), labels.end()));

  const World none = toy_world({"one two", "three four"}, {{"where is five", "six"}});
  CHECK(build_selector_labels(none, none.train[0], iota_ids(2)) == std::vector<std::size_t>{0});
}

TEST_CASE("build_selector_labels: stop words alone never select") {
  const World w = toy_world({"born in the city", "rome"}, {{"where was the zed", "rome"}});
  CHECK(build_selector_labels(w, w.train[0], iota_ids(2)) == std::vector<std::size_t>{1});
}

TEST_CASE("build_selector_labels: agrees with a brute-force oracle on a generated world") {
  const World w = build_world(small_world_config(8));
  const Bm25Index index(w.corpus, w.vocab);
  std::size_t n = 0;
  for (Split s : {Split::kTrain, Split::kDev, Split::kTest}) {
    for (const auto& qa : w.split(s)) {
      const auto cands = gold_candidates(index, qa, 10);
      CHECK(build_selector_labels(w, qa, cands) == oracle_labels(w, qa, cands));
      ++n;
    }
  }
  CHECK(n == 60);
}

TEST_CASE("build_gen_dataset: delimited targets") {
  const World w = build_world(small_world_config());
  const Bm25Index index(w.corpus, w.vocab);
  const PipelineOptions opt;
  const auto sel = build_selector_dataset(w, index, w.train, opt);
  const auto gen = build_gen_dataset(w, w.train, sel.candidates, sel.selections, opt);
  for (std::size_t i = 0; i < gen.size(); ++i) {
    const auto& t = gen[i].target;
    CHECK(t.front() == tok::kAnswerDelim);
    CHECK(t[t.size() - 2] == tok::kAnswerDelim);
    CHECK(t.back() == tok::kEos);
    CHECK(t.size() == w.train[i].answer.size() + 3);
    const auto docs = std::count(gen[i].input.begin(), gen[i].input.end(), tok::kDocument);
    CHECK(static_cast<std::size_t>(docs) == sel.selections[i].size());
  }
  const auto again = build_gen_dataset(w, w.train, sel.candidates, sel.selections, opt);
  CHECK(format_sft_dataset(w.vocab, gen) == format_sft_dataset(w.vocab, again));
}

TEST_CASE("gold answer of one token gives a four-token target") {
  const World w = toy_world({"alice was born in paris"}, {{"where was alice born", "paris"}});
  const PipelineOptions opt;
  const auto gen = build_gen_dataset(w, w.train, {{0}}, {{0}}, opt);
  CHECK(gen[0].target.size() == 4);
}

TEST_CASE("SftExample masks cover exactly the target") {
  const World w = build_world(small_world_config());
  const Bm25Index index(w.corpus, w.vocab);
  const auto all = build_sft_dataset(w, index, w.train, PipelineOptions{}, true);
  CHECK(all.size() == 4 * w.train.size());
  for (const auto& ex : all) {
    REQUIRE(ex.mask.size() == ex.input.size() + ex.target.size());
    CHECK(static_cast<std::size_t>(std::count(ex.mask.begin(), ex.mask.end(), true)) ==
          ex.target.size());
    CHECK(std::all_of(ex.mask.begin() + static_cast<std::ptrdiff_t>(ex.input.size()),
                      ex.mask.end(), [](bool b) { return b; }));
  }
}

TEST_CASE("dataset dump roundtrips and rejects bad masks") {
  const World w = build_world(small_world_config());
  const Bm25Index index(w.corpus, w.vocab);
  const auto all = build_sft_dataset(w, index, w.train, PipelineOptions{}, false);
  const std::string text = format_sft_dataset(w.vocab, all);
  const auto back = parse_sft_dataset(w.vocab, text);
  CHECK(format_sft_dataset(w.vocab, back) == text);
  std::string bad = text.substr(0, text.find('\n'));
  bad.back() = '0';
  CHECK_THROWS_AS(parse_sft_dataset(w.vocab, bad), FormatError);
}

TEST_CASE("example_loss equals masked NLL read off the full logits") {
  RngStream rng(1);
  Network net(tiny_backbone(12, 2), HeadKind::kActor, rng);
  const auto ex = make_example(Role::kGenerator, {1, 4, 5, 6}, {7, 8, 2});
  std::vector<int> seq = ex.input;
  seq.insert(seq.end(), ex.target.begin(), ex.target.end());
  const Tensor logits = net.outputs(seq);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 1; t < seq.size(); ++t) {
    if (!ex.mask[t]) continue;
    const double* row = &logits.data[(t - 1) * 12];
    double mx = *std::max_element(row, row + 12);
    double z = 0.0;
    for (int j = 0; j < 12; ++j) z += std::exp(row[j] - mx);
    total += -(row[seq[t]] - mx - std::log(z));
    ++count;
  }
  CHECK(example_loss(net, ex) == doctest::Approx(total / count).epsilon(1e-12));
}

TEST_CASE("SFT gradient passes the finite-difference check") {
  RngStream rng(2);
  Network net(tiny_backbone(12, 1), HeadKind::kActor, rng);
  const std::vector<SftExample> exs = {make_example(Role::kGenerator, {1, 4, 5}, {7, 2}),
                                       make_example(Role::kSelector, {1, 9}, {10, 11, 2})};
  const std::vector<const SftExample*> batch = {&exs[0], &exs[1]};
  net.store().zero_grad();
  accumulate_sft_gradient(net, batch);
  auto loss = [&](const ParamStore&) {
    double s = 0.0;
    for (const auto& e : exs) s += example_loss(net, e) * static_cast<double>(e.target.size());
    return s / 5.0;
  };
  CHECK(finite_difference_check(loss, net.store()).pass);
}

TEST_CASE("example_loss is ln 2 when the model gives the target probability 0.5") {
  Network net(tiny_backbone(4, 1), HeadKind::kActor);
  net.store().at("head.b").value.data = {0.0, 0.0, -1000.0, -1000.0};
  const auto ex = make_example(Role::kGenerator, {3}, {1});
  CHECK(std::abs(example_loss(net, ex) - std::log(2.0)) < 1e-12);
}

TEST_CASE("sft_train memorizes ten examples") {
  const World w = build_world(small_world_config());
  auto ex = build_qr_dataset(w, std::span(w.train).subspan(0, 10), PipelineOptions{});
  BackboneConfig bc;
  bc.vocab_size = w.vocab.size();
  RngStream init(3);
  Network net(bc, HeadKind::kActor, init);
  SftConfig cfg;
  cfg.epochs = 300;
  RngStream rng(4);
  const auto result = sft_train(net, ex, cfg, rng);
  CHECK_FALSE(result.diverged);
  REQUIRE(result.epochs.size() == 300);
  CHECK(result.epochs.back().mean_token_loss < 0.1);
  for (const auto& e : result.epochs) CHECK(e.mean_token_loss >= 0.0);
}

TEST_CASE("sft_train: small lr on one example never increases the loss") {
  RngStream init(5);
  Network net(tiny_backbone(12, 1), HeadKind::kActor, init);
  const std::vector<SftExample> ex = {make_example(Role::kGenerator, {1, 4, 5}, {7, 8, 2})};
  SftConfig cfg;
  cfg.epochs = 30;
  cfg.lr = 1e-4;
  RngStream rng(6);
  const auto result = sft_train(net, ex, cfg, rng);
  for (std::size_t i = 1; i < result.epochs.size(); ++i) {
    CHECK(result.epochs[i].mean_token_loss <= result.epochs[i - 1].mean_token_loss);
  }
}

TEST_CASE("sft_train: same seed gives identical parameters") {
  const World w = build_world(small_world_config());
  const auto ex = build_qr_dataset(w, std::span(w.train).subspan(0, 20), PipelineOptions{});
  auto run = [&] {
    RngStream init(7);
    Network net(tiny_backbone(w.vocab.size(), 1, 16, 2), HeadKind::kActor, init);
    SftConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    RngStream rng(8);
    sft_train(net, ex, cfg, rng);
    return net;
  };
  CHECK(run().store().values_equal(run().store()));
}

TEST_CASE("sft_train: divergence restores finite parameters") {
  RngStream init(9);
  Network net(tiny_backbone(12, 1), HeadKind::kActor, init);
  const std::vector<SftExample> ex = {make_example(Role::kGenerator, {1, 4}, {7, 2})};
  SftConfig cfg;
  cfg.epochs = 3;
  cfg.lr = 1e300;
  cfg.max_grad_norm = 0.0;
  RngStream rng(10);
  const auto result = sft_train(net, ex, cfg, rng);
  CHECK(result.diverged);
  for (const auto& p : net.store().params()) CHECK(p.value.all_finite());
}

TEST_CASE("sft_train: bad inputs are rejected") {
  Network net(tiny_backbone(12, 1), HeadKind::kActor);
  RngStream rng(0);
  CHECK_THROWS_AS(sft_train(net, {}, SftConfig{}, rng), Error);
  SftConfig cfg;
  cfg.epochs = 0;
  const std::vector<SftExample> ex = {make_example(Role::kGenerator, {1}, {2})};
  CHECK_THROWS_AS(sft_train(net, ex, cfg, rng), ConfigError);
}
