#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ragmarl/mappo.hpp"
#include "ragmarl/sft.hpp"

namespace ragmarl {

/// Everything one command needs, settable from flat key=value text.
///
/// Keys (defaults in parentheses):
///   seed (1)                master seed for SFT initialization and MAPPO streams
///   world ("")              world file path
///   checkpoint ("")         warm-start checkpoint read by train
///   modules (QR+S+G)        QR+S+G | S+G | QR+G
///   trainable (all present) comma-separated agents optimized by MAPPO
///   world.<key>             WorldConfig keys for gen-world
///   model.width (64) model.layers (2) model.heads (2) model.context (256)
///   model.activation (gelu)
///   sft.epochs sft.batch_size sft.lr sft.max_grad_norm
///   sft.full_context_generator (true)
///   pipeline.k (10) pipeline.qr_max_tokens pipeline.s_max_tokens
///   pipeline.g_max_tokens pipeline.max_answer_tokens (32)
///   mappo.<field>           every MappoConfig field except seed, trainable,
///                           pipeline; gamma and lambda live here too
struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path world_path;
  std::filesystem::path checkpoint_path;
  WorldConfig world;
  BackboneConfig backbone;  // vocab_size comes from the world
  SftConfig sft;
  bool sft_full_context_generator = true;
  MappoConfig mappo;
  bool trainable_explicit = false;  // otherwise every present agent trains

  RunConfig();

  /// Throws ConfigError naming unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  /// Cross-field checks; also propagates seed and context into mappo.
  void finalize();

  /// Effective configuration, one key=value per line in key order.
  std::string to_text() const;
};

/// Lines are key=value; blank lines and lines starting with '#' are skipped.
void apply_config_text(RunConfig& config, const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

std::string trainable_string(const std::array<bool, kRoleCount>& trainable);

/// Warm-start actor before SFT, initialized from a stream derived from
/// config.seed; vocab_size comes from the world.
Network make_initial_actor(const RunConfig& config, std::size_t vocab_size);

/// Shuffling stream of the SFT run for config.seed.
RngStream sft_stream(const RunConfig& config);

}  // namespace ragmarl
