#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "ragmarl/render.hpp"
#include "ragmarl/retriever.hpp"
#include "ragmarl/rewards.hpp"
#include "ragmarl/world.hpp"
#include "test_support.hpp"

using namespace ragmarl;
using ragmarl::testing::small_world_config;

namespace {

struct ToyCorpus {
  Vocab vocab;
  std::vector<Document> docs;
  std::vector<std::vector<std::string>> words;
};

ToyCorpus toy_corpus(const std::vector<std::string>& bodies) {
  ToyCorpus c;
  for (std::size_t i = 0; i < bodies.size(); ++i) {
    Document d;
    d.id = static_cast<int>(i);
    c.words.push_back(split_words(bodies[i]));
    for (const auto& w : c.words.back()) d.body.push_back(c.vocab.add(w));
    c.docs.push_back(d);
  }
  return c;
}

// Textbook BM25 written directly from the formula, over plain lowercase words.
std::vector<double> bm25_oracle(const ToyCorpus& c, const std::vector<std::string>& query) {
  const double n = static_cast<double>(c.words.size());
  double avgdl = 0.0;
  for (const auto& w : c.words) avgdl += static_cast<double>(w.size());
  avgdl /= n;
  const std::set<std::string> terms(query.begin(), query.end());
  std::vector<double> out;
  for (const auto& doc : c.words) {
    double s = 0.0;
    for (const auto& t : terms) {
      double df = 0.0;
      for (const auto& d : c.words) df += std::count(d.begin(), d.end(), t) > 0 ? 1.0 : 0.0;
      const double tf = static_cast<double>(std::count(doc.begin(), doc.end(), t));
      const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
      const double len = static_cast<double>(doc.size());
      s += idf * tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * len / avgdl));
    }
    out.push_back(s);
  }
  return out;
}

bool contains_run(const std::vector<int>& hay, const std::vector<int>& needle) {
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

}  // namespace

TEST_CASE("vocab: reserved tokens come first and ids round-trip") {
  Vocab v;
  CHECK(v.size() == static_cast<std::size_t>(tok::kReservedCount));
  CHECK(v.token(tok::kDocument) == "Document");
  CHECK(v.token(tok::kComma) == ",");
  for (int d = 0; d < 10; ++d) CHECK(v.token(tok::kDigit0 + d) == std::to_string(d));
  const int id = v.add("river");
  CHECK(id == tok::kReservedCount);
  CHECK(v.add("river") == id);
  for (int i = 0; i < static_cast<int>(v.size()); ++i) CHECK(v.id(v.token(i)) == i);
  CHECK_THROWS_AS(v.id("unknown-word"), Error);
}

TEST_CASE("build_world: same config gives byte-identical worlds") {
  const auto cfg = small_world_config();
  CHECK(serialize_world(build_world(cfg)) == serialize_world(build_world(cfg)));
  auto other = cfg;
  other.seed = cfg.seed + 1;
  CHECK(serialize_world(build_world(cfg)) != serialize_world(build_world(other)));
}

TEST_CASE("build_world: hop_mix 1.0 gives only 2-hop instances and 0.0 only 1-hop") {
  auto cfg = small_world_config();
  cfg.hop_mix = 1.0;
  const World two = build_world(cfg);
  for (Split s : {Split::kTrain, Split::kDev, Split::kTest}) {
    for (const auto& qa : two.split(s)) {
      CHECK(qa.hops == 2);
      CHECK(qa.sub_questions.size() == 2);
    }
  }
  cfg.hop_mix = 0.0;
  const World one = build_world(cfg);
  for (const auto& qa : one.train) CHECK(qa.sub_questions.size() == 1);
}

TEST_CASE("build_world: instance invariants on the default world") {
  const World w = build_world(WorldConfig{});
  CHECK(w.train.size() == 400);
  CHECK(w.dev.size() == 100);
  CHECK(w.test.size() == 100);
  std::set<std::vector<int>> seen;
  for (Split s : {Split::kTrain, Split::kDev, Split::kTest}) {
    for (const auto& qa : w.split(s)) {
      CHECK(static_cast<std::size_t>(qa.hops) == qa.sub_questions.size());
      CHECK((qa.hops == 1 || qa.hops == 2));
      CHECK(seen.insert(qa.question).second);  // splits are disjoint
      for (int id : qa.support) {
        CHECK(id >= 0);
        CHECK(static_cast<std::size_t>(id) < w.corpus.size());
      }
    }
  }
  for (std::size_t i = 0; i < w.corpus.size(); ++i) {
    CHECK(w.corpus[i].id == static_cast<int>(i));
    CHECK(w.corpus[i].body.size() <= w.config.max_doc_tokens);
  }
}

TEST_CASE("build_world: 2-hop answers are covered by the two supporting documents") {
  auto cfg = WorldConfig{};
  const World w = build_world(cfg);
  std::size_t checked = 0;
  for (Split s : {Split::kTrain, Split::kDev, Split::kTest}) {
    for (const auto& qa : w.split(s)) {
      if (qa.hops != 2) continue;
      REQUIRE(qa.support.size() == 2);
      CHECK(qa.support[0] != qa.support[1]);
      std::vector<int> both = w.doc(qa.support[0]).body;
      const auto& b = w.doc(qa.support[1]).body;
      both.insert(both.end(), b.begin(), b.end());
      const auto doc_words = normalize_tokens(w.vocab, both);
      const std::set<std::string> have(doc_words.begin(), doc_words.end());
      for (const auto& a : normalize_tokens(w.vocab, qa.answer)) CHECK(have.count(a) == 1);
      ++checked;
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("build_world: vocab cap overflow lists the overflow tokens") {
  auto cfg = small_world_config();
  cfg.vocab_cap = 40;
  CHECK_THROWS_WITH_AS(build_world(cfg), doctest::Contains("overflow tokens:"), ConfigError);
}

TEST_CASE("build_world: invalid configs are rejected") {
  auto cfg = small_world_config();
  cfg.hop_mix = 1.5;
  CHECK_THROWS_AS(build_world(cfg), ConfigError);
  cfg = small_world_config();
  cfg.entity_count = 0;
  CHECK_THROWS_AS(build_world(cfg), ConfigError);
  cfg = small_world_config();
  CHECK_THROWS_AS(cfg.set("no_such_key", "1"), ConfigError);
  CHECK_THROWS_AS(cfg.set("hop_mix", "abc"), ConfigError);
}

TEST_CASE("world file: serialize, parse, serialize is a fixed point") {
  const World w = build_world(small_world_config());
  const std::string text = serialize_world(w);
  const World back = parse_world(text);
  CHECK(serialize_world(back) == text);
  CHECK(back.train.size() == w.train.size());
  CHECK(back.vocab.size() == w.vocab.size());

  std::string broken = text;
  broken.replace(broken.find("\ndoc\t"), 5, "\ndoq\t");
  CHECK_THROWS_AS(parse_world(broken), FormatError);
  CHECK_THROWS_AS(parse_world(""), FormatError);
}

TEST_CASE("retrieve: scores match a brute-force BM25 oracle") {
  const auto c = toy_corpus({"red fox runs fast", "blue fox sleeps", "red red apple tree",
                             "green tree grows tall and tall", "fast car red"});
  const Bm25Index index(c.docs, c.vocab);
  for (const std::string q : {"red fox", "tall tree", "fast red car apple", "sleeps"}) {
    const auto words = split_words(q);
    const auto expect = bm25_oracle(c, words);
    const auto got = index.scores(c.vocab.encode(words));
    REQUIRE(got.size() == expect.size());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  }
}

TEST_CASE("retrieve: a unique body as query ranks that document first") {
  const auto c = toy_corpus({"alpha beta", "gamma delta epsilon", "zeta eta", "alpha zeta"});
  const Bm25Index index(c.docs, c.vocab);
  const auto ranked = index.retrieve(c.docs[1].body, 4);
  CHECK(ranked.front() == 1);
}

TEST_CASE("retrieve: unmatched query falls back to ids 0..k-1 and k > N returns N") {
  auto c = toy_corpus({"one two", "three four", "five six", "seven eight"});
  const int stray = c.vocab.add("nowhere");
  const Bm25Index index(c.docs, c.vocab);
  const std::vector<int> q = {stray};
  CHECK(index.retrieve(q, 3) == std::vector<int>{0, 1, 2});
  const std::vector<int> empty;
  CHECK(index.retrieve(empty, 2) == std::vector<int>{0, 1});
  CHECK(index.retrieve(c.docs[0].body, 10).size() == 4);
}

TEST_CASE("retrieve: ties break by ascending id and results are pure") {
  const auto c = toy_corpus({"cat dog", "dog cat", "cat dog", "bird"});
  const Bm25Index index(c.docs, c.vocab);
  const auto q = c.vocab.encode(std::string("cat"));
  const auto r = index.retrieve(q, 4);
  CHECK(r == std::vector<int>{0, 1, 2, 3});
  CHECK(index.retrieve(q, 4) == r);
}

TEST_CASE("allocate_budget: worked examples and boundary") {
  CHECK(allocate_budget(2, 10) == std::vector<std::size_t>{5, 5});
  CHECK(allocate_budget(1, 10) == std::vector<std::size_t>{10});
  CHECK(allocate_budget(3, 10) == std::vector<std::size_t>{4, 3, 3});
  CHECK(allocate_budget(12, 10) ==
        std::vector<std::size_t>{1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0});
  CHECK_THROWS_AS(allocate_budget(0, 10), Error);
}

TEST_CASE("allocate_budget: sums to K, spread at most 1, non-increasing") {
  for (std::size_t k = 1; k <= 12; ++k) {
    for (std::size_t n = 1; n <= 15; ++n) {
      const auto b = allocate_budget(n, k);
      REQUIRE(b.size() == n);
      std::size_t sum = 0;
      for (auto x : b) sum += x;
      CHECK(sum == k);
      CHECK(*std::max_element(b.begin(), b.end()) - *std::min_element(b.begin(), b.end()) <= 1);
      CHECK(std::is_sorted(b.rbegin(), b.rend()));
    }
  }
}

TEST_CASE("assemble_candidates: dedup and top-up from the first query") {
  const auto c = toy_corpus({"a1 b1", "a1 a2", "a1 a2 a3", "b1 b2", "b1", "zz"});
  const Bm25Index index(c.docs, c.vocab);
  const auto qa = c.vocab.encode(std::string("a1 a2 a3"));
  const auto qb = c.vocab.encode(std::string("b1 a1"));
  const auto d = assemble_candidates(index, {qa, qb}, 5);
  CHECK(d.size() == 5);
  CHECK(std::set<int>(d.begin(), d.end()).size() == 5);
  const auto first = index.retrieve(qa, 3);
  CHECK(std::equal(first.begin(), first.end(), d.begin()));
}

TEST_CASE("gold sub-question retrieval covers the support on at least 95% of dev") {
  const World w = build_world(WorldConfig{});
  const Bm25Index index(w.corpus, w.vocab);
  std::size_t covered = 0;
  for (const auto& qa : w.dev) {
    const auto d = assemble_candidates(index, qa.sub_questions, 10);
    bool all = true;
    for (int s : qa.support) all = all && std::find(d.begin(), d.end(), s) != d.end();
    covered += all ? 1 : 0;
  }
  CHECK(static_cast<double>(covered) / static_cast<double>(w.dev.size()) >= 0.95);
}

TEST_CASE("render: QR embeds the question verbatim") {
  const World w = build_world(small_world_config());
  for (const auto& qa : w.train) {
    const auto obs = render_observation(Role::kQueryRewriter, w.vocab, qa.question, {}, 10, 256);
    CHECK(contains_run(obs, qa.question));
    CHECK(obs.front() == tok::kBos);
  }
}

TEST_CASE("render: selector shows Document 0..9 in order") {
  const World w = build_world(small_world_config());
  std::vector<ShownDocument> shown;
  for (std::size_t i = 0; i < 10; ++i) shown.push_back({i, &w.corpus[i]});
  const auto obs = render_observation(Role::kSelector, w.vocab, w.train[0].question, shown, 10, 512);
  std::vector<int> digits;
  for (std::size_t i = 0; i + 1 < obs.size(); ++i) {
    if (obs[i] == tok::kDocument) digits.push_back(obs[i + 1] - tok::kDigit0);
  }
  CHECK(digits == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  shown.pop_back();
  CHECK_THROWS_AS(
      render_observation(Role::kSelector, w.vocab, w.train[0].question, shown, 10, 512), Error);
}

TEST_CASE("render: generator keeps original indices") {
  const World w = build_world(small_world_config());
  const std::vector<ShownDocument> shown = {{0, &w.corpus[4]}, {3, &w.corpus[7]}};
  const auto obs = render_observation(Role::kGenerator, w.vocab, w.train[0].question, shown, 10, 256);
  const std::vector<int> h0 = {tok::kDocument, tok::kDigit0 + 0};
  const std::vector<int> h3 = {tok::kDocument, tok::kDigit0 + 3};
  CHECK(contains_run(obs, h0));
  CHECK(contains_run(obs, h3));
  CHECK(std::count(obs.begin(), obs.end(), tok::kDocument) == 2);
  CHECK(contains_run(obs, w.corpus[7].body));
}

TEST_CASE("render: context overflow reports the measured length") {
  const World w = build_world(small_world_config());
  std::vector<ShownDocument> shown;
  for (std::size_t i = 0; i < 10; ++i) shown.push_back({i, &w.corpus[i]});
  CHECK_THROWS_WITH_AS(
      render_observation(Role::kSelector, w.vocab, w.train[0].question, shown, 10, 20),
      doctest::Contains("length"), Error);
}

TEST_CASE("render: distinct inputs give distinct observations") {
  const World w = build_world(small_world_config());
  std::set<std::vector<int>> seen;
  for (const auto& qa : w.train) {
    for (Role r : {Role::kQueryRewriter, Role::kGenerator}) {
      std::vector<ShownDocument> shown;
      if (r == Role::kGenerator) shown.push_back({0, &w.doc(qa.support[0])});
      CHECK(seen.insert(render_observation(r, w.vocab, qa.question, shown, 10, 256)).second);
    }
  }
  CHECK(document_header(12) == std::vector<int>{tok::kDocument, tok::kDigit0 + 1, tok::kDigit0 + 2});
}
