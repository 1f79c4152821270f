#include "ragmarl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ragmarl/error.hpp"
#include "ragmarl/numerics.hpp"

namespace ragmarl {

void DecodeConstraint::validate(std::size_t vocab_size) const {
  if (max_length < 1) throw Error("decode constraint: max_length must be >= 1");
  if (stop_token < 0 || static_cast<std::size_t>(stop_token) >= vocab_size) {
    throw Error("decode constraint: stop token out of range");
  }
  if (!allowed.empty()) {
    if (allowed.size() != vocab_size) {
      throw Error("decode constraint: allowed set has wrong size");
    }
    if (!allowed[static_cast<std::size_t>(stop_token)]) {
      throw Error("decode constraint: stop token must be allowed");
    }
  }
}

std::vector<double> nucleus(std::span<const double> probs, double top_p) {
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  std::vector<double> out(probs.size(), 0.0);
  double mass = 0.0;
  std::size_t kept = 0;
  for (std::size_t idx : order) {
    if (kept > 0 && mass >= top_p) break;
    if (probs[idx] <= 0.0 && kept > 0) break;
    out[idx] = probs[idx];
    mass += probs[idx];
    ++kept;
  }
  if (mass <= 0.0) throw Error("nucleus of a zero distribution");
  for (double& p : out) p /= mass;
  return out;
}

namespace {

DecodeResult run_decode(const Network& actor, std::span<const int> prompt,
                        const DecodeConstraint& constraint, double top_p,
                        RngStream* rng) {
  const auto& cfg = actor.config();
  constraint.validate(cfg.vocab_size);
  if (actor.head_kind() != HeadKind::kActor) throw Error("decode needs an actor");
  std::vector<int> seq(prompt.begin(), prompt.end());
  DecodeResult result;
  ForwardCache cache;
  std::vector<double> logits(cfg.vocab_size);
  for (std::size_t step = 0; step < constraint.max_length; ++step) {
    if (seq.size() > cfg.context) break;
    actor.forward(seq, cache);
    actor.head_at(cache, seq.size() - 1, logits);
    const auto probs = masked_softmax(logits, constraint.allowed);
    std::size_t choice;
    if (rng) {
      choice = sample_categorical(nucleus(probs, top_p), *rng);
    } else {
      choice = static_cast<std::size_t>(
          std::max_element(probs.begin(), probs.end()) - probs.begin());
    }
    result.tokens.push_back(static_cast<int>(choice));
    result.logprobs.push_back(log_softmax_at(logits, choice, constraint.allowed));
    if (static_cast<int>(choice) == constraint.stop_token) {
      result.stopped = true;
      break;
    }
    if (seq.size() == cfg.context) break;
    seq.push_back(static_cast<int>(choice));
  }
  return result;
}

}  // namespace

DecodeResult decode(const Network& actor, std::span<const int> prompt,
                    const DecodeConstraint& constraint, double top_p,
                    RngStream& rng) {
  if (!(top_p > 0.0) || top_p > 1.0) throw Error("top_p must be in (0, 1]");
  return run_decode(actor, prompt, constraint, top_p, &rng);
}

DecodeResult greedy_decode(const Network& actor, std::span<const int> prompt,
                           const DecodeConstraint& constraint) {
  return run_decode(actor, prompt, constraint, 1.0, nullptr);
}

SequenceScore score_sequence(const Network& actor, std::span<const int> prompt,
                             std::span<const int> continuation,
                             const std::vector<bool>& mask) {
  if (prompt.empty()) throw Error("score_sequence needs a non-empty prompt");
  SequenceScore score;
  score.prompt_length = prompt.size();
  score.continuation.assign(continuation.begin(), continuation.end());
  score.mask = mask;
  if (continuation.empty()) return score;
  // The last continuation token is never an input.
  std::vector<int> seq(prompt.begin(), prompt.end());
  seq.insert(seq.end(), continuation.begin(), continuation.end() - 1);
  actor.forward(seq, score.cache);
  std::vector<double> logits(actor.output_dim());
  for (std::size_t t = 0; t < continuation.size(); ++t) {
    actor.head_at(score.cache, prompt.size() - 1 + t, logits);
    auto probs = masked_softmax(logits, mask);
    score.logprobs.push_back(
        log_softmax_at(logits, static_cast<std::size_t>(continuation[t]), mask));
    score.probs.push_back(std::move(probs));
  }
  return score;
}

void backward_logprobs(Network& actor, const SequenceScore& score,
                       std::span<const double> weights) {
  const std::size_t n = score.continuation.size();
  if (weights.size() != n) throw Error("backward_logprobs: weight count mismatch");
  if (n == 0) return;
  const std::size_t V = actor.output_dim();
  std::vector<std::size_t> positions;
  std::vector<double> d_out;
  for (std::size_t t = 0; t < n; ++t) {
    if (weights[t] == 0.0) continue;
    positions.push_back(score.prompt_length - 1 + t);
    const auto& p = score.probs[t];
    const auto tok = static_cast<std::size_t>(score.continuation[t]);
    for (std::size_t j = 0; j < V; ++j) {
      const double indicator = j == tok ? 1.0 : 0.0;
      // Masked entries have p = 0 and no dependence on their logits.
      const bool allowed = score.mask.empty() || score.mask[j];
      d_out.push_back(allowed ? weights[t] * (indicator - p[j]) : 0.0);
    }
  }
  if (!positions.empty()) actor.backward(score.cache, positions, d_out);
}

double sequence_log_ratio(const Network& actor, const Network& reference,
                          std::span<const int> observation,
                          std::span<const int> answer) {
  const auto a = score_sequence(actor, observation, answer);
  const auto r = score_sequence(reference, observation, answer);
  double total = 0.0;
  for (std::size_t t = 0; t < answer.size(); ++t) {
    total += a.logprobs[t] - r.logprobs[t];
  }
  return total;
}

ValueScore score_values(const Network& critic, std::span<const int> prompt,
                        std::span<const int> continuation) {
  if (critic.head_kind() != HeadKind::kCritic) {
    throw Error("score_values needs a critic");
  }
  if (prompt.empty()) throw Error("score_values needs a non-empty prompt");
  ValueScore score;
  if (continuation.empty()) return score;
  std::vector<int> seq(prompt.begin(), prompt.end());
  seq.insert(seq.end(), continuation.begin(), continuation.end() - 1);
  critic.forward(seq, score.cache);
  double v = 0.0;
  for (std::size_t t = 0; t < continuation.size(); ++t) {
    const std::size_t pos = prompt.size() - 1 + t;
    critic.head_at(score.cache, pos, std::span<double>(&v, 1));
    score.positions.push_back(pos);
    score.values.push_back(v);
  }
  return score;
}

void backward_values(Network& critic, const ValueScore& score,
                     std::span<const double> d_values) {
  if (d_values.size() != score.positions.size()) {
    throw Error("backward_values: gradient count mismatch");
  }
  if (score.positions.empty()) return;
  critic.backward(score.cache, score.positions, d_values);
}

}  // namespace ragmarl
