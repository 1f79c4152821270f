#pragma once

#include <span>
#include <vector>

#include "ragmarl/network.hpp"
#include "ragmarl/rng.hpp"

namespace ragmarl {

/// Restricts which tokens a decode may emit.
struct DecodeConstraint {
  std::vector<bool> allowed;  // vocab-sized; empty means every token
  std::size_t max_length = 1;
  int stop_token = 0;

  void validate(std::size_t vocab_size) const;
};

struct DecodeResult {
  std::vector<int> tokens;        // includes the stop token when emitted
  std::vector<double> logprobs;   // masked full-softmax log-probabilities
  bool stopped = false;
};

/// Nucleus of a probability vector: the smallest prefix of the entries sorted
/// by descending probability (ties by ascending index) whose mass reaches
/// top_p, never fewer than one entry, renormalized. Other entries are 0.
std::vector<double> nucleus(std::span<const double> probs, double top_p);

/// Samples from the nucleus of the masked softmax at each step until the stop
/// token or max_length. The returned log-probabilities are those of the
/// sampled tokens under the masked softmax before nucleus truncation.
DecodeResult decode(const Network& actor, std::span<const int> prompt,
                    const DecodeConstraint& constraint, double top_p,
                    RngStream& rng);

/// Argmax decoding (ties resolve to the lowest token id). Consumes no
/// randomness.
DecodeResult greedy_decode(const Network& actor, std::span<const int> prompt,
                           const DecodeConstraint& constraint);

/// Forward pass over prompt ++ continuation with the per-token log-probs of
/// the continuation. Kept for gradient computation.
struct SequenceScore {
  ForwardCache cache;
  std::size_t prompt_length = 0;
  std::vector<int> continuation;
  std::vector<double> logprobs;            // one per continuation token
  std::vector<std::vector<double>> probs;  // masked softmax at each step
  std::vector<bool> mask;
};

SequenceScore score_sequence(const Network& actor, std::span<const int> prompt,
                             std::span<const int> continuation,
                             const std::vector<bool>& mask = {});

/// Accumulates gradients of sum_t weights[t] * logprobs[t] into the actor.
void backward_logprobs(Network& actor, const SequenceScore& score,
                       std::span<const double> weights);

/// sum_t [log pi_actor(y_t | x, y_<t) - log pi_ref(y_t | x, y_<t)] with the
/// full-vocabulary softmax.
double sequence_log_ratio(const Network& actor, const Network& reference,
                          std::span<const int> observation,
                          std::span<const int> answer);

/// Critic values at the positions that choose each continuation token, i.e.
/// at prompt_length - 1 + t.
struct ValueScore {
  ForwardCache cache;
  std::vector<std::size_t> positions;
  std::vector<double> values;
};

ValueScore score_values(const Network& critic, std::span<const int> prompt,
                        std::span<const int> continuation);

void backward_values(Network& critic, const ValueScore& score,
                     std::span<const double> d_values);

}  // namespace ragmarl
