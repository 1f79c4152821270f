#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ragmarl/checkpoint.hpp"
#include "ragmarl/error.hpp"
#include "ragmarl/numerics.hpp"
#include "test_support.hpp"

using namespace ragmarl;

TEST_CASE("masked_softmax: uniform logits give equal mass") {
  const std::vector<double> logits = {0, 0, 0};
  const auto p = masked_softmax(logits, {true, true, true});
  for (double v : p) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));
}

TEST_CASE("masked_softmax: single allowed entry takes all mass") {
  const std::vector<double> logits = {5, -2, 7};
  const auto p = masked_softmax(logits, {false, true, false});
  CHECK(p[0] == 0.0);
  CHECK(p[1] == 1.0);
  CHECK(p[2] == 0.0);
}

TEST_CASE("masked_softmax: two-entry value against e/(e+1)") {
  const std::vector<double> logits = {1, 0};
  const auto p = masked_softmax(logits, {});
  const double e = std::exp(1.0);
  CHECK(p[0] == doctest::Approx(e / (e + 1)).epsilon(1e-12));
  CHECK(std::abs(p[0] - 0.73106) < 1e-5);
  CHECK(std::abs(p[1] - 0.26894) < 1e-5);
}

TEST_CASE("masked_softmax: all-masked input is an error") {
  const std::vector<double> logits = {1, 2};
  CHECK_THROWS_WITH_AS(masked_softmax(logits, {false, false}), doctest::Contains("empty action set"), Error);
}

TEST_CASE("masked_softmax: random masks sum to one and stay in [0,1]") {
  RngStream rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.below(40);
    std::vector<double> logits(n);
    std::vector<bool> mask(n);
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      logits[i] = 30.0 * (rng.uniform() - 0.5);
      mask[i] = rng.uniform() < 0.6;
      any = any || mask[i];
    }
    if (!any) mask[rng.below(n)] = true;
    const auto p = masked_softmax(logits, mask);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(p[i] >= 0.0);
      CHECK(p[i] <= 1.0);
      if (!mask[i]) CHECK(p[i] == 0.0);
      sum += p[i];
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("adam_step: first step with g=2 moves by about -lr") {
  ParamStore store;
  auto& p = store.add("x", {1});
  p.value[0] = 1.0;
  p.grad[0] = 2.0;
  AdamConfig cfg;
  cfg.lr = 0.1;
  adam_step(store, cfg);
  CHECK(store.step() == 1);
  const double expected = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
  CHECK(store.at("x").value[0] == doctest::Approx(expected).epsilon(1e-15));
  CHECK(std::abs(store.at("x").value[0] - 0.9) < 1e-8);
}

TEST_CASE("adam_step: zero gradients leave values and fresh moments unchanged") {
  ParamStore store;
  auto& p = store.add("w", {3});
  p.value.data = {0.5, -1.0, 2.0};
  adam_step(store, AdamConfig{});
  CHECK(store.at("w").value.data == std::vector<double>{0.5, -1.0, 2.0});
  CHECK(store.at("w").m.data == std::vector<double>{0, 0, 0});
  CHECK(store.at("w").v.data == std::vector<double>{0, 0, 0});
}

TEST_CASE("adam_step: zero gradients only decay existing moments") {
  ParamStore store;
  auto& p = store.add("w", {1});
  p.m[0] = 0.4;
  p.v[0] = 0.2;
  p.value[0] = 1.0;
  AdamConfig cfg;
  adam_step(store, cfg);
  CHECK(store.at("w").m[0] == doctest::Approx(0.36).epsilon(1e-15));
  CHECK(store.at("w").v[0] == doctest::Approx(0.2 * 0.999).epsilon(1e-15));
}

TEST_CASE("adam_step: identical stores stay bit-identical") {
  RngStream rng(5);
  ParamStore a;
  a.add("w", {4, 3});
  for (auto& x : a.params()[0].value.data) x = rng.normal();
  ParamStore b = a;
  for (int step = 0; step < 10; ++step) {
    for (std::size_t i = 0; i < 12; ++i) {
      const double g = rng.normal();
      a.params()[0].grad[i] = g;
      b.params()[0].grad[i] = g;
    }
    adam_step(a, AdamConfig{});
    adam_step(b, AdamConfig{});
  }
  CHECK(a.values_equal(b));
  CHECK(a.params()[0].m.data == b.params()[0].m.data);
}

TEST_CASE("adam_step: lr=0 leaves values unchanged for any gradients") {
  RngStream rng(9);
  ParamStore store;
  store.add("w", {10});
  for (auto& x : store.params()[0].value.data) x = rng.normal();
  const auto before = store.params()[0].value.data;
  AdamConfig cfg;
  cfg.lr = 0.0;
  for (int i = 0; i < 5; ++i) {
    for (auto& g : store.params()[0].grad.data) g = 100.0 * rng.normal();
    adam_step(store, cfg);
  }
  CHECK(store.params()[0].value.data == before);
}

TEST_CASE("adam_step: non-finite gradient names the parameter") {
  ParamStore store;
  store.add("good", {1});
  store.add("bad", {2}).grad[1] = std::nan("");
  CHECK_THROWS_WITH_AS(adam_step(store, AdamConfig{}),
                       doctest::Contains("bad"), Error);
}

TEST_CASE("zero_grad sets every gradient entry to exactly zero") {
  ParamStore store;
  auto& p = store.add("w", {2, 2});
  p.grad.data = {1, -2, 3, 4};
  store.zero_grad();
  CHECK(store.at("w").grad.data == std::vector<double>{0, 0, 0, 0});
}

TEST_CASE("cosine_lr: endpoints and midpoint") {
  CHECK(cosine_lr(1.0, 0, 10) == 1.0);
  CHECK(cosine_lr(1.0, 5, 10) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(std::abs(cosine_lr(1.0, 10, 10)) < 1e-15);
}

TEST_CASE("finite_difference_check: linear map passes at 1e-6") {
  ParamStore store;
  auto& w = store.add("w", {3});
  w.value.data = {0.3, -0.7, 1.1};
  const std::vector<double> x = {2.0, -1.0, 0.5};
  auto forward = [&](const ParamStore& s) {
    double y = 0.0;
    for (std::size_t i = 0; i < 3; ++i) y += s.at("w").value[i] * x[i];
    return y;
  };
  for (std::size_t i = 0; i < 3; ++i) store.params()[0].grad[i] = x[i];
  GradCheckOptions opt;
  opt.tolerance = 1e-6;
  const auto report = finite_difference_check(forward, store, opt);
  CHECK(report.pass);
  CHECK(report.max_rel_error < 1e-6);
  CHECK(store.at("w").value.data == std::vector<double>{0.3, -0.7, 1.1});
}

TEST_CASE("finite_difference_check: doubled gradient reports 1/3") {
  ParamStore store;
  auto& w = store.add("w", {2});
  w.value.data = {0.5, 1.5};
  auto forward = [](const ParamStore& s) {
    const auto& v = s.at("w").value;
    return v[0] * v[0] + 3.0 * v[1];
  };
  store.params()[0].grad.data = {2.0 * 2.0 * 0.5, 2.0 * 3.0};
  const auto report = finite_difference_check(forward, store);
  CHECK_FALSE(report.pass);
  CHECK(report.max_rel_error == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("sample_categorical: one-hot support is deterministic") {
  const std::vector<double> probs = {0, 1, 0};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    RngStream rng(seed);
    CHECK(sample_categorical(probs, rng) == 1);
  }
}

TEST_CASE("sample_categorical: seeded draws repeat and use one draw each") {
  const std::vector<double> probs = {0.5, 0.5};
  RngStream a(7);
  RngStream b(7);
  const auto a1 = sample_categorical(probs, a);
  const auto a2 = sample_categorical(probs, a);
  CHECK(a.position() == 2);
  CHECK(sample_categorical(probs, b) == a1);
  CHECK(sample_categorical(probs, b) == a2);
}

TEST_CASE("sample_categorical: empirical frequency of 0.75 mass") {
  const std::vector<double> probs = {0.25, 0.75};
  RngStream rng(123);
  std::size_t ones = 0;
  for (int i = 0; i < 100000; ++i) ones += sample_categorical(probs, rng);
  const double freq = static_cast<double>(ones) / 100000.0;
  CHECK(freq >= 0.74);
  CHECK(freq <= 0.76);
}

TEST_CASE("sample_categorical: degenerate sums are rejected") {
  RngStream rng(1);
  const std::vector<double> low = {0.2, 0.2};
  const std::vector<double> neg = {1.5, -0.5};
  CHECK_THROWS_AS(sample_categorical(low, rng), Error);
  CHECK_THROWS_AS(sample_categorical(neg, rng), Error);
}

TEST_CASE("RngStream: identical seeds give identical sequences; derive separates streams") {
  RngStream a(42);
  RngStream b(42);
  for (int i = 0; i < 100; ++i) {
    CHECK(a.next_u64() == b.next_u64());
  }
  auto s1 = RngStream::derive(1, 0, 0);
  auto s2 = RngStream::derive(1, 0, 1);
  auto s3 = RngStream::derive(1, 0, 0);
  const auto x1 = s1.next_u64();
  CHECK(x1 != s2.next_u64());
  CHECK(x1 == s3.next_u64());
}

TEST_CASE("checkpoint: bit-exact roundtrip and corruption detection") {
  Checkpoint ckpt;
  ckpt.step = 17;
  Tensor t({2, 3});
  for (std::size_t i = 0; i < 6; ++i) t[i] = 0.1 * static_cast<double>(i) - 1.0 / 3.0;
  ckpt.entries.push_back({"layer/w", t});
  ckpt.entries.push_back({"scalar", Tensor({1}, std::nextafter(1.0, 2.0))});
  const auto bytes = encode_checkpoint(ckpt);
  const auto back = decode_checkpoint(bytes);
  CHECK(back.step == 17);
  REQUIRE(back.entries.size() == 2);
  CHECK(back.entries[0].name == "layer/w");
  CHECK(back.entries[0].tensor.shape == t.shape);
  CHECK(back.entries[0].tensor.data == t.data);
  CHECK(back.entries[1].tensor[0] == std::nextafter(1.0, 2.0));

  auto truncated = bytes;
  truncated.resize(bytes.size() - 9);
  CHECK_THROWS_AS(decode_checkpoint(truncated), FormatError);

  auto flipped = bytes;
  flipped[40] ^= 0x01;
  CHECK_THROWS_AS(decode_checkpoint(flipped), FormatError);

  auto wrong_version = bytes;
  wrong_version[8] = 99;
  CHECK_THROWS_WITH_AS(decode_checkpoint(wrong_version), doctest::Contains("version"),
                       FormatError);
}

TEST_CASE("checkpoint: a failed load leaves no partial state") {
  const auto dir = ragmarl::testing::scratch_dir("ckpt_atomic");
  ParamStore store;
  store.add("w", {2}).value.data = {1.0, 2.0};
  Checkpoint ckpt;
  append_store(ckpt, store, "", true);
  save_checkpoint(ckpt, dir / "a.ckpt");
  {
    std::ifstream in(dir / "a.ckpt", std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
    bytes.resize(bytes.size() / 2);
    std::ofstream out(dir / "b.ckpt", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  ParamStore target;
  target.add("w", {2}).value.data = {7.0, 8.0};
  CHECK_THROWS_AS(restore_store(load_checkpoint(dir / "b.ckpt"), target, ""), FormatError);
  CHECK(target.at("w").value.data == std::vector<double>{7.0, 8.0});
  restore_store(load_checkpoint(dir / "a.ckpt"), target, "");
  CHECK(target.at("w").value.data == std::vector<double>{1.0, 2.0});
}
