#include "ragmarl/sft.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "ragmarl/error.hpp"

namespace ragmarl {
namespace {

// Words that take part in the labelling rule: normalized, stop words removed.
std::set<std::string> content_words(const World& world, std::span<const int> ids) {
  std::set<std::string> out;
  for (int id : ids) {
    if (Vocab::is_special(id) || world.is_stopword(id)) continue;
    for (auto& w : normalize_answer(std::vector<std::string>{world.vocab.token(id)})) {
      out.insert(std::move(w));
    }
  }
  return out;
}

std::vector<int> parse_tokens(const Vocab& vocab, const std::string& field) {
  std::vector<int> out;
  for (const auto& w : split_words(field)) out.push_back(vocab.id(w));
  return out;
}

}  // namespace

SftExample make_example(Role role, std::vector<int> input, std::vector<int> target) {
  SftExample ex;
  ex.role = role;
  ex.mask.assign(input.size(), false);
  ex.mask.resize(input.size() + target.size(), true);
  ex.input = std::move(input);
  ex.target = std::move(target);
  return ex;
}

std::vector<SftExample> build_qr_dataset(const World& world,
                                         std::span<const QaInstance> instances,
                                         const PipelineOptions& options) {
  std::vector<SftExample> out;
  for (const auto& qa : instances) {
    out.push_back(make_example(Role::kQueryRewriter,
                               render_observation(Role::kQueryRewriter, world.vocab,
                                                  qa.question, {}, options.k,
                                                  options.context),
                               gold_rewriter_output(qa)));
  }
  return out;
}

std::vector<std::size_t> build_selector_labels(const World& world, const QaInstance& qa,
                                               std::span<const int> candidates) {
  auto set_q = content_words(world, qa.question);
  for (auto& w : content_words(world, qa.answer)) set_q.insert(w);
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    for (const auto& w : content_words(world, world.doc(candidates[j]).body)) {
      if (set_q.count(w)) {
        out.push_back(j);
        break;
      }
    }
  }
  if (out.empty() && !candidates.empty()) out.push_back(0);
  return out;
}

std::vector<int> gold_candidates(const Bm25Index& index, const QaInstance& qa,
                                 std::size_t k) {
  return assemble_candidates(index, qa.sub_questions, k);
}

SelectorExamples build_selector_dataset(const World& world, const Bm25Index& index,
                                        std::span<const QaInstance> instances,
                                        const PipelineOptions& options) {
  SelectorExamples out;
  for (const auto& qa : instances) {
    auto cands = gold_candidates(index, qa, options.k);
    auto labels = build_selector_labels(world, qa, cands);
    std::vector<ShownDocument> shown;
    for (std::size_t i = 0; i < cands.size(); ++i) shown.push_back({i, &world.doc(cands[i])});
    out.examples.push_back(make_example(
        Role::kSelector,
        render_observation(Role::kSelector, world.vocab, qa.question, shown, options.k,
                           options.context),
        format_selector(labels)));
    out.candidates.push_back(std::move(cands));
    out.selections.push_back(std::move(labels));
  }
  return out;
}

std::vector<SftExample> build_gen_dataset(
    const World& world, std::span<const QaInstance> instances,
    const std::vector<std::vector<int>>& candidates,
    const std::vector<std::vector<std::size_t>>& selections,
    const PipelineOptions& options) {
  if (candidates.size() != instances.size() || selections.size() != instances.size()) {
    throw Error("build_gen_dataset: one candidate set and selection per instance");
  }
  std::vector<SftExample> out;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    std::vector<ShownDocument> shown;
    for (auto idx : selections[i]) shown.push_back({idx, &world.doc(candidates[i].at(idx))});
    out.push_back(make_example(Role::kGenerator,
                               render_observation(Role::kGenerator, world.vocab,
                                                  instances[i].question, shown, options.k,
                                                  options.context),
                               gold_generator_output(instances[i])));
  }
  return out;
}

std::vector<SftExample> build_sft_dataset(const World& world, const Bm25Index& index,
                                          std::span<const QaInstance> instances,
                                          const PipelineOptions& options,
                                          bool full_context_generator) {
  auto out = build_qr_dataset(world, instances, options);
  auto sel = build_selector_dataset(world, index, instances, options);
  out.insert(out.end(), sel.examples.begin(), sel.examples.end());
  auto gen = build_gen_dataset(world, instances, sel.candidates, sel.selections, options);
  out.insert(out.end(), gen.begin(), gen.end());
  if (full_context_generator) {
    std::vector<std::vector<std::size_t>> all;
    for (const auto& c : sel.candidates) {
      std::vector<std::size_t> idx(c.size());
      std::iota(idx.begin(), idx.end(), 0);
      all.push_back(std::move(idx));
    }
    auto full = build_gen_dataset(world, instances, sel.candidates, all, options);
    out.insert(out.end(), full.begin(), full.end());
  }
  return out;
}

std::string format_sft_dataset(const Vocab& vocab, std::span<const SftExample> examples) {
  std::string out;
  for (const auto& ex : examples) {
    out += role_name(ex.role);
    out += '\t';
    out += vocab.join(ex.input);
    out += '\t';
    out += vocab.join(ex.target);
    out += '\t';
    for (bool m : ex.mask) out += m ? '1' : '0';
    out += '\n';
  }
  return out;
}

std::vector<SftExample> parse_sft_dataset(const Vocab& vocab, const std::string& text) {
  std::vector<SftExample> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t pos; (pos = line.find('\t', start)) != std::string::npos; start = pos + 1) {
      fields.push_back(line.substr(start, pos - start));
    }
    fields.push_back(line.substr(start));
    if (fields.size() != 4) {
      throw FormatError("dataset line " + std::to_string(lineno) + ": expected 4 fields",
                        lineno);
    }
    auto ex = make_example(parse_role(fields[0]), parse_tokens(vocab, fields[1]),
                           parse_tokens(vocab, fields[2]));
    std::string mask;
    for (bool m : ex.mask) mask += m ? '1' : '0';
    if (mask != fields[3]) {
      throw FormatError("dataset line " + std::to_string(lineno) +
                            ": mask does not cover exactly the target",
                        lineno);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

double example_loss(const Network& actor, const SftExample& example) {
  const auto score = score_sequence(actor, example.input, example.target);
  double total = 0.0;
  for (double lp : score.logprobs) total -= lp;
  return example.target.empty() ? 0.0 : total / static_cast<double>(example.target.size());
}

double accumulate_sft_gradient(Network& actor, std::span<const SftExample* const> batch) {
  std::size_t tokens = 0;
  for (const auto* ex : batch) tokens += ex->target.size();
  if (tokens == 0) return 0.0;
  const double scale = 1.0 / static_cast<double>(tokens);
  double total = 0.0;
  for (const auto* ex : batch) {
    const auto score = score_sequence(actor, ex->input, ex->target);
    for (double lp : score.logprobs) total -= lp;
    const std::vector<double> weights(ex->target.size(), -scale);
    backward_logprobs(actor, score, weights);
  }
  return total * scale;
}

SftResult sft_train(Network& actor, std::span<const SftExample> examples,
                    const SftConfig& config, RngStream& rng,
                    const std::function<void(const SftEpoch&)>& on_epoch) {
  if (examples.empty()) throw Error("sft_train: no examples");
  if (config.epochs == 0 || config.batch_size == 0) {
    throw ConfigError("sft epochs and batch size must be positive");
  }
  SftResult result;
  const std::size_t n = examples.size();
  const std::size_t batches_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::uint64_t total_steps = config.epochs * batches_per_epoch;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const ParamStore last_good = actor.store();
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double loss_tokens = 0.0;
    std::size_t token_count = 0;
    double lr = 0.0;
    bool diverged = false;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      std::vector<const SftExample*> batch;
      for (std::size_t i = b * config.batch_size; i < std::min(n, (b + 1) * config.batch_size);
           ++i) {
        batch.push_back(&examples[order[i]]);
      }
      std::size_t tokens = 0;
      for (const auto* ex : batch) tokens += ex->target.size();
      actor.store().zero_grad();
      double loss = 0.0;
      try {
        loss = accumulate_sft_gradient(actor, batch);
      } catch (const Error&) {
        loss = std::numeric_limits<double>::quiet_NaN();  // non-finite logits
      }
      if (!std::isfinite(loss)) {
        diverged = true;
        break;
      }
      if (config.max_grad_norm > 0.0) {
        const double norm = actor.store().grad_norm();
        if (norm > config.max_grad_norm) actor.store().scale_grad(config.max_grad_norm / norm);
      }
      lr = cosine_lr(config.lr, step, total_steps);
      AdamConfig adam;
      adam.lr = lr;
      try {
        adam_step(actor.store(), adam);
        for (const auto& p : actor.store().params()) {
          if (!p.value.all_finite()) throw Error("non-finite parameter " + p.name);
        }
      } catch (const Error&) {
        diverged = true;
        break;
      }
      ++step;
      loss_tokens += loss * static_cast<double>(tokens);
      token_count += tokens;
    }
    if (diverged) {
      actor.store() = last_good;
      result.diverged = true;
      break;
    }
    SftEpoch e;
    e.epoch = epoch;
    e.mean_token_loss = loss_tokens / static_cast<double>(token_count);
    e.lr = lr;
    result.epochs.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  actor.store().zero_grad();
  return result;
}

WarmStartGate warm_start_gate(const Network& actor, std::span<const SftExample> examples,
                              const PipelineOptions& options) {
  WarmStartGate gate;
  std::size_t sel_hits = 0;
  std::size_t gen_hits = 0;
  const std::size_t v = actor.config().vocab_size;
  for (const auto& ex : examples) {
    if (ex.role == Role::kSelector) {
      const auto out = greedy_decode(actor, ex.input, role_constraint(ex.role, v, options));
      ++gate.selector_count;
      if (out.tokens == ex.target) ++sel_hits;
    } else if (ex.role == Role::kGenerator) {
      const auto out = greedy_decode(actor, ex.input, role_constraint(ex.role, v, options));
      ++gate.generator_count;
      if (extract_answer(out.tokens) == extract_answer(ex.target)) ++gen_hits;
    }
  }
  if (gate.selector_count) {
    gate.selector_exact = static_cast<double>(sel_hits) / static_cast<double>(gate.selector_count);
  }
  if (gate.generator_count) {
    gate.answer_exact = static_cast<double>(gen_hits) / static_cast<double>(gate.generator_count);
  }
  return gate;
}

}  // namespace ragmarl
