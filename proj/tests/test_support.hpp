#pragma once

#include <filesystem>
#include <string>

#include "ragmarl/config.hpp"
#include "ragmarl/evaluation.hpp"

namespace ragmarl::testing {

/// A world small enough for unit tests.
inline WorldConfig small_world_config(std::uint64_t seed = 3) {
  WorldConfig c;
  c.entity_count = 30;
  c.train_size = 40;
  c.dev_size = 10;
  c.test_size = 10;
  c.seed = seed;
  return c;
}

inline BackboneConfig tiny_backbone(std::size_t vocab, std::size_t layers = 1,
                                    std::size_t width = 8, std::size_t heads = 2) {
  BackboneConfig c;
  c.vocab_size = vocab;
  c.width = width;
  c.layers = layers;
  c.heads = heads;
  c.context = 256;
  return c;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("ragmarl_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace ragmarl::testing
