#include <doctest.h>

#include <fstream>

#include "ragmarl/config.hpp"
#include "test_support.hpp"

using namespace ragmarl;

TEST_CASE("RunConfig: defaults") {
  RunConfig c;
  CHECK(c.get("seed") == "1");
  CHECK(c.get("modules") == "QR+S+G");
  CHECK(c.mappo.clip_epsilon == 0.2);
  CHECK(c.mappo.alpha == 0.1);
  CHECK(c.mappo.beta_max == 0.2);
  CHECK(c.mappo.beta_min == 0.06);
  CHECK(c.mappo.gae.gamma == 1.0);
  CHECK(c.mappo.gae.lambda == 0.95);
  CHECK(c.mappo.pipeline.k == 10);
}

TEST_CASE("RunConfig: every key survives to_text and back") {
  RunConfig a;
  a.set("seed", "17");
  a.set("modules", "S+G");
  a.set("mappo.clip_epsilon", "0.3");
  a.set("model.activation", "relu");
  a.set("mappo.value_target", "gae");
  a.set("world.hop_mix", "0.25");
  RunConfig b;
  apply_config_text(b, a.to_text());
  CHECK(b.to_text() == a.to_text());
  for (const auto& k : RunConfig::keys()) CHECK(b.get(k) == a.get(k));
}

TEST_CASE("RunConfig: unknown keys and bad values name the key") {
  RunConfig c;
  try {
    c.set("mappo.clip", "0.2");
    FAIL("accepted an unknown key");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("mappo.clip") != std::string::npos);
  }
  CHECK_THROWS_AS(c.set("mappo.batches", "-3"), ConfigError);
  CHECK_THROWS_AS(c.set("mappo.batches", "4x"), ConfigError);
  CHECK_THROWS_AS(c.set("mappo.whiten_advantages", "maybe"), ConfigError);
  CHECK_THROWS_AS(c.set("modules", "QR+S"), ConfigError);
  CHECK_THROWS_AS(c.set("model.activation", "tanh"), ConfigError);
  CHECK_THROWS_AS(apply_config_text(c, "seed 3\n"), ConfigError);
}

TEST_CASE("RunConfig: comments, blank lines and whitespace around '='") {
  RunConfig c;
  apply_config_text(c, "# run\n\n  seed = 9 \nmappo.batches=3\n");
  CHECK(c.seed == 9);
  CHECK(c.mappo.batches == 3);
}

TEST_CASE("RunConfig::finalize: trainable defaults follow the module configuration") {
  RunConfig c;
  c.set("modules", "QR+G");
  c.finalize();
  CHECK(c.mappo.trainable == std::array<bool, 3>{true, false, true});
  CHECK(c.mappo.seed == c.seed);

  RunConfig d;
  d.set("modules", "QR+G");
  d.set("trainable", "S");
  CHECK_THROWS_AS(d.finalize(), ConfigError);

  RunConfig e;
  e.set("trainable", "QR,S");
  e.finalize();
  CHECK(e.mappo.trainable == std::array<bool, 3>{true, true, false});
  CHECK(trainable_string(e.mappo.trainable) == "QR,S");
}

TEST_CASE("RunConfig::finalize: cross-field checks") {
  RunConfig c;
  c.set("model.width", "10");
  c.set("model.heads", "3");
  CHECK_THROWS_AS(c.finalize(), ConfigError);
  RunConfig d;
  d.set("mappo.beta_min", "0.5");
  CHECK_THROWS_AS(d.finalize(), ConfigError);
  RunConfig e;
  e.set("sft.lr", "0");
  CHECK_THROWS_AS(e.finalize(), ConfigError);
}

TEST_CASE("load_run_config reads a file and reports a missing one") {
  const auto dir = ragmarl::testing::scratch_dir("config_file");
  std::ofstream(dir / "run.cfg") << "mappo.actor_lr=0.0003\n";
  CHECK(load_run_config(dir / "run.cfg").mappo.actor_lr == 0.0003);
  CHECK_THROWS_AS(load_run_config(dir / "absent.cfg"), ConfigError);
}
