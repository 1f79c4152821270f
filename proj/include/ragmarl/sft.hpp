#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ragmarl/pipeline.hpp"

namespace ragmarl {

/// One supervised pair. `mask` covers input ++ target and is true exactly on
/// the target positions.
struct SftExample {
  Role role = Role::kQueryRewriter;
  std::vector<int> input;
  std::vector<int> target;
  std::vector<bool> mask;
};

SftExample make_example(Role role, std::vector<int> input, std::vector<int> target);

/// Target: gold sub-questions separated by <nl>, then <eos>.
std::vector<SftExample> build_qr_dataset(const World& world,
                                         std::span<const QaInstance> instances,
                                         const PipelineOptions& options);

/// Words of question and gold answer minus stop words and punctuation; a
/// candidate is selected when its body shares at least one of them. Indices
/// ascend. An empty selection falls back to index 0, the top-ranked
/// retrieval result.
std::vector<std::size_t> build_selector_labels(const World& world, const QaInstance& qa,
                                               std::span<const int> candidates);

/// Candidates come from retrieving with the gold sub-questions.
std::vector<int> gold_candidates(const Bm25Index& index, const QaInstance& qa,
                                 std::size_t k);

struct SelectorExamples {
  std::vector<SftExample> examples;
  std::vector<std::vector<int>> candidates;         // per instance
  std::vector<std::vector<std::size_t>> selections; // per instance
};

SelectorExamples build_selector_dataset(const World& world, const Bm25Index& index,
                                        std::span<const QaInstance> instances,
                                        const PipelineOptions& options);

/// Generator examples reading the labelled selections. Target:
/// ** answer ** <eos>.
std::vector<SftExample> build_gen_dataset(
    const World& world, std::span<const QaInstance> instances,
    const std::vector<std::vector<int>>& candidates,
    const std::vector<std::vector<std::size_t>>& selections,
    const PipelineOptions& options);

/// Everything one warm start needs: QR, S and G examples, plus generator
/// examples over all K candidates when `full_context_generator` is set (the
/// generator's view in QR+G).
std::vector<SftExample> build_sft_dataset(const World& world, const Bm25Index& index,
                                          std::span<const QaInstance> instances,
                                          const PipelineOptions& options,
                                          bool full_context_generator);

// Dataset dump: one example per line,
//   <role> TAB <input tokens> TAB <target tokens> TAB <mask as 0/1 digits>
// with tokens written as vocabulary strings separated by spaces.
std::string format_sft_dataset(const Vocab& vocab, std::span<const SftExample> examples);
std::vector<SftExample> parse_sft_dataset(const Vocab& vocab, const std::string& text);

struct SftConfig {
  std::size_t epochs = 12;
  std::size_t batch_size = 16;
  double lr = 2e-3;
  double max_grad_norm = 1.0;  // 0 disables clipping
};

struct SftEpoch {
  std::size_t epoch = 0;
  double mean_token_loss = 0.0;
  double lr = 0.0;
};

struct SftResult {
  std::vector<SftEpoch> epochs;
  bool diverged = false;  // parameters restored to the last finite epoch
};

/// Mean per-token negative log-likelihood of one example's target under the
/// full-vocabulary softmax.
double example_loss(const Network& actor, const SftExample& example);

/// Adds d(mean token loss of `batch`)/d(theta) into the actor's gradients and
/// returns that loss.
double accumulate_sft_gradient(Network& actor, std::span<const SftExample* const> batch);

/// Minibatch Adam on the per-token mean NLL with a cosine schedule, shuffling
/// with `rng` every epoch. `on_epoch` runs after each epoch.
SftResult sft_train(Network& actor, std::span<const SftExample> examples,
                    const SftConfig& config, RngStream& rng,
                    const std::function<void(const SftEpoch&)>& on_epoch = {});

struct WarmStartGate {
  double selector_exact = 0.0;  // greedy output equals the label target
  double answer_exact = 0.0;    // greedy answer equals the gold answer
  std::size_t selector_count = 0;
  std::size_t generator_count = 0;
};

/// Greedy decoding on the selector and generator examples.
WarmStartGate warm_start_gate(const Network& actor, std::span<const SftExample> examples,
                              const PipelineOptions& options);

}  // namespace ragmarl
