#include <doctest.h>

#include <cmath>
#include <map>

#include "ragmarl/rewards.hpp"
#include "ragmarl/rng.hpp"
#include "oracles.hpp"

using namespace ragmarl;
using ragmarl::testing::f1_oracle;
using ragmarl::testing::random_words;

namespace {

using Words = std::vector<std::string>;

std::vector<int> sel(std::initializer_list<int> digits, bool stop = true) {
  std::vector<int> out;
  for (int d : digits) {
    if (!out.empty()) out.push_back(tok::kComma);
    out.push_back(tok::kDocument);
    out.push_back(tok::kDigit0 + d);
  }
  if (stop) out.push_back(tok::kEos);
  return out;
}

}  // namespace

TEST_CASE("normalize_answer: worked examples") {
  CHECK(normalize_answer("The North Atlantic Conference!") == Words{"north", "atlantic", "conference"});
  CHECK(normalize_answer("").empty());
  CHECK(normalize_answer("A a THE the").empty());
  CHECK(normalize_answer("  Paris ,  France. ") == Words{"paris", "france"});
}

TEST_CASE("normalize_tokens: special tokens act as whitespace") {
  Vocab v;
  const int paris = v.add("Paris");
  const int the = v.add("the");
  const std::vector<int> ids = {tok::kBos, the, paris, tok::kNewline, paris, tok::kEos};
  CHECK(normalize_tokens(v, ids) == Words{"paris", "paris"});
}

TEST_CASE("answer_metrics: worked examples") {
  auto m = answer_metrics("north atlantic conference", "the north atlantic conference");
  CHECK(m.acc == 1.0);
  CHECK(m.em == 1.0);
  CHECK(m.f1 == 1.0);

  m = answer_metrics("yankee conference", "north atlantic conference");
  CHECK(std::abs(m.f1 - 0.4) < 1e-12);
  CHECK(m.em == 0.0);
  CHECK(m.acc == 0.0);

  m = answer_metrics("the answer is paris", "paris");
  CHECK(m.acc == 1.0);
  CHECK(m.em == 0.0);
  CHECK(std::abs(m.f1 - 0.5) < 1e-12);
}

TEST_CASE("answer_metrics: empty sides") {
  auto m = answer_metrics("", "");
  CHECK(m.f1 == 1.0);
  CHECK(m.em == 1.0);
  m = answer_metrics("paris", "");
  CHECK(m.f1 == 0.0);
  m = answer_metrics("", "paris");
  CHECK(m.f1 == 0.0);
  CHECK(m.acc == 0.0);
}

TEST_CASE("answer_metrics: cover match needs a contiguous run") {
  CHECK(answer_metrics("new big york", "new york").acc == 0.0);
  CHECK(answer_metrics("in new york now", "new york").acc == 1.0);
}

TEST_CASE("answer_metrics: properties over random token lists") {
  RngStream rng(2024);
  for (int i = 0; i < 2000; ++i) {
    const Words a = random_words(rng, 6);
    const Words b = random_words(rng, 6);
    const auto ab = answer_metrics_normalized(a, b);
    const auto ba = answer_metrics_normalized(b, a);
    CHECK(ab.f1 == ba.f1);
    CHECK(ab.f1 == doctest::Approx(f1_oracle(a, b)).epsilon(1e-12));
    CHECK(ab.f1 >= 0.0);
    CHECK(ab.f1 <= 1.0);
    CHECK(ab.acc >= ab.em);
    if (ab.em == 1.0) {
      CHECK(ab.f1 == 1.0);
      CHECK(ab.acc == 1.0);
    }
    if (!a.empty()) CHECK(answer_metrics_normalized(a, a).f1 == 1.0);
  }
}

TEST_CASE("penalty_qr: threshold at four") {
  CHECK(penalty_qr(5) == -0.5);
  CHECK(penalty_qr(4) == 0.0);
  CHECK(penalty_qr(0) == 0.0);
  CHECK(penalty_qr(40) == -0.5);
}

TEST_CASE("penalty_g: threshold is inclusive") {
  CHECK(penalty_g(33, 32) == -0.5);
  CHECK(penalty_g(32, 32) == 0.0);
  CHECK(penalty_g(0, 32) == 0.0);
  CHECK(penalty_g(0, 1) == 0.0);
}

TEST_CASE("parse_selector: well-formed list") {
  const auto p = parse_selector(sel({0, 3, 9}), 10);
  CHECK(p.well_formed);
  CHECK_FALSE(p.has_duplicates);
  CHECK(p.ids == std::vector<std::size_t>{0, 3, 9});
  CHECK(p.penalty == 0.0);
}

TEST_CASE("parse_selector: duplicates are penalized and deduplicated downstream") {
  const auto p = parse_selector(sel({0, 0}), 10);
  CHECK(p.has_duplicates);
  CHECK(p.penalty == -1.0);
  CHECK(selected_indices(p, 10) == std::vector<std::size_t>{0});
}

TEST_CASE("parse_selector: free text is malformed and falls back to all K") {
  Vocab v;
  const std::vector<int> ids = {v.add("Doc"), tok::kDigit0 + 3, v.add("and"), tok::kDigit0 + 5,
                                tok::kEos};
  const auto p = parse_selector(ids, 10);
  CHECK_FALSE(p.well_formed);
  CHECK(p.penalty == -1.0);
  CHECK(selected_indices(p, 4) == std::vector<std::size_t>{0, 1, 2, 3});
}

TEST_CASE("parse_selector: other violations") {
  CHECK(parse_selector(sel({1, 2}, false), 10).penalty == -1.0);  // no stop token
  CHECK(parse_selector(sel({7}), 5).penalty == -1.0);             // id >= K
  CHECK_FALSE(parse_selector(sel({7}), 5).well_formed);
  const std::vector<int> only_stop = {tok::kEos};
  CHECK(parse_selector(only_stop, 10).penalty == -1.0);
  const std::vector<int> trailing = {tok::kDocument, tok::kDigit0 + 1, tok::kComma, tok::kEos};
  CHECK(parse_selector(trailing, 10).penalty == -1.0);
}

TEST_CASE("format_selector then parse_selector roundtrips") {
  RngStream rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<std::size_t> ids;
    std::vector<bool> used(10, false);
    const std::size_t n = 1 + rng.below(10);
    while (ids.size() < n) {
      const auto id = rng.below(10);
      if (!used[id]) {
        used[id] = true;
        ids.push_back(id);
      }
    }
    const auto p = parse_selector(format_selector(ids), 10);
    CHECK(p.ids == ids);
    CHECK(p.penalty == 0.0);
    CHECK(p.well_formed);
  }
}

TEST_CASE("parse_selector: penalty is always 0 or -1 on random token soup") {
  RngStream rng(6);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<int> raw(rng.below(12));
    for (auto& t : raw) t = static_cast<int>(rng.below(tok::kReservedCount + 3));
    const auto p = parse_selector(raw, 1 + rng.below(10));
    CHECK((p.penalty == 0.0 || p.penalty == -1.0));
    if (p.penalty == 0.0) CHECK(p.well_formed);
  }
}

TEST_CASE("parse_subquestions and extract_answer") {
  Vocab v;
  const int a = v.add("who");
  const int b = v.add("where");
  const std::vector<int> raw = {a, tok::kNewline, tok::kNewline, b, a, tok::kEos, b};
  CHECK(parse_subquestions(raw) == std::vector<std::vector<int>>{{a}, {b, a}});
  const std::vector<int> none = {tok::kEos};
  CHECK(parse_subquestions(none).empty());
  const std::vector<int> gen = {tok::kAnswerDelim, a, b, tok::kAnswerDelim, tok::kEos, a};
  CHECK(extract_answer(gen) == std::vector<int>{a, b});
}

TEST_CASE("assemble_terminal_reward: worked examples") {
  auto r = assemble_terminal_reward(0.4, 0.0, 0.1, 0.3);
  CHECK(std::abs(r.r_total - 0.37) < 1e-12);
  CHECK(assemble_terminal_reward(1.0, 0.0, 0.7, 0.0).r_total == 1.0);
  CHECK(assemble_terminal_reward(0.0, -1.0, 0.2, 0.0).r_total == -1.0);
  r = assemble_terminal_reward(0.25, -0.5, 0.13, 0.71);
  CHECK(r.r_total == 0.25 + -0.5 - 0.13 * 0.71);
}

TEST_CASE("terminal_reward_vector: zero before the final step") {
  const auto v = terminal_reward_vector(4, 0.37);
  CHECK(v == std::vector<double>{0.0, 0.0, 0.0, 0.37});
  CHECK(terminal_reward_vector(0, 1.0).empty());
}
