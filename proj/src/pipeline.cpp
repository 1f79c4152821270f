#include "ragmarl/pipeline.hpp"

#include <algorithm>

#include "ragmarl/error.hpp"

namespace ragmarl {

std::string module_config_name(ModuleConfig m) {
  switch (m) {
    case ModuleConfig::kFull: return "QR+S+G";
    case ModuleConfig::kSelectorGenerator: return "S+G";
    case ModuleConfig::kRewriterGenerator: return "QR+G";
  }
  return "?";
}

ModuleConfig parse_module_config(const std::string& name) {
  if (name == "QR+S+G") return ModuleConfig::kFull;
  if (name == "S+G") return ModuleConfig::kSelectorGenerator;
  if (name == "QR+G") return ModuleConfig::kRewriterGenerator;
  throw ConfigError("unknown module configuration: " + name +
                    " (expected QR+S+G, S+G or QR+G)");
}

bool has_role(ModuleConfig m, Role r) {
  switch (r) {
    case Role::kQueryRewriter: return m != ModuleConfig::kSelectorGenerator;
    case Role::kSelector: return m != ModuleConfig::kRewriterGenerator;
    case Role::kGenerator: return true;
  }
  return false;
}

std::vector<Role> roles_of(ModuleConfig m) {
  std::vector<Role> out;
  for (Role r : {Role::kQueryRewriter, Role::kSelector, Role::kGenerator}) {
    if (has_role(m, r)) out.push_back(r);
  }
  return out;
}

void PipelineOptions::validate() const {
  if (k == 0 || k > 10) throw ConfigError("k must be in 1..10");
  if (qr_max_tokens == 0 || s_max_tokens == 0 || g_max_tokens == 0) {
    throw ConfigError("generation limits must be positive");
  }
  if (max_answer_tokens == 0) throw ConfigError("max_answer_tokens must be positive");
}

DecodeConstraint role_constraint(Role role, std::size_t vocab_size,
                                 const PipelineOptions& options) {
  DecodeConstraint c;
  c.stop_token = tok::kEos;
  switch (role) {
    case Role::kQueryRewriter:
      c.max_length = options.qr_max_tokens;
      break;
    case Role::kSelector:
      c.max_length = options.s_max_tokens;
      c.allowed.assign(vocab_size, false);
      c.allowed[tok::kDocument] = true;
      c.allowed[tok::kComma] = true;
      c.allowed[tok::kEos] = true;
      for (std::size_t d = 0; d < options.k; ++d) {
        c.allowed[static_cast<std::size_t>(tok::kDigit0) + d] = true;
      }
      break;
    case Role::kGenerator:
      c.max_length = options.g_max_tokens;
      break;
  }
  c.validate(vocab_size);
  return c;
}

std::vector<int> gold_rewriter_output(const QaInstance& qa) {
  std::vector<int> out;
  for (std::size_t i = 0; i < qa.sub_questions.size(); ++i) {
    if (i) out.push_back(tok::kNewline);
    out.insert(out.end(), qa.sub_questions[i].begin(), qa.sub_questions[i].end());
  }
  out.push_back(tok::kEos);
  return out;
}

std::vector<int> gold_generator_output(const QaInstance& qa) {
  std::vector<int> out = {tok::kAnswerDelim};
  out.insert(out.end(), qa.answer.begin(), qa.answer.end());
  out.push_back(tok::kAnswerDelim);
  out.push_back(tok::kEos);
  return out;
}

DecodeResult OracleDriver::act(const AgentRequest& request, RngStream&) {
  DecodeResult r;
  const QaInstance& qa = *request.instance;
  switch (request.role) {
    case Role::kQueryRewriter:
      r.tokens = gold_rewriter_output(qa);
      break;
    case Role::kSelector: {
      std::vector<std::size_t> ids;
      for (std::size_t i = 0; i < request.candidates.size(); ++i) {
        if (std::find(qa.support.begin(), qa.support.end(), request.candidates[i]) !=
            qa.support.end()) {
          ids.push_back(i);
        }
      }
      if (ids.empty()) ids.push_back(0);
      r.tokens = format_selector(ids);
      break;
    }
    case Role::kGenerator:
      r.tokens = gold_generator_output(qa);
      break;
  }
  r.logprobs.assign(r.tokens.size(), 0.0);
  r.stopped = true;
  return r;
}

PolicyDriver::PolicyDriver(std::array<const Network*, kRoleCount> networks, double top_p,
                           bool greedy)
    : networks_(networks), top_p_(top_p), greedy_(greedy) {}

DecodeResult PolicyDriver::act(const AgentRequest& request, RngStream& rng) {
  const Network* net = networks_[static_cast<std::size_t>(request.role)];
  if (!net) throw Error("no network bound to agent " + role_name(request.role));
  if (greedy_) return greedy_decode(*net, request.observation, *request.constraint);
  return decode(*net, request.observation, *request.constraint, top_p_, rng);
}

const AgentStep* Episode::step(Role r) const {
  for (const auto& s : steps) {
    if (s.role == r) return &s;
  }
  return nullptr;
}

std::vector<std::vector<int>> retrieval_queries(const QaInstance& qa,
                                                const std::vector<std::vector<int>>& subqs) {
  if (subqs.empty()) return {qa.question};
  return subqs;
}

Episode run_episode(const World& world, const Bm25Index& index, const QaInstance& qa,
                    const PipelineOptions& options, AgentDriver& driver,
                    RngStream& rng) {
  Episode ep;
  ep.instance = &qa;
  const std::size_t vocab_size = world.vocab.size();
  auto run_agent = [&](Role role, std::vector<int> obs,
                       std::span<const int> candidates) -> AgentStep& {
    const DecodeConstraint constraint = role_constraint(role, vocab_size, options);
    if (obs.size() + constraint.max_length > options.context) {
      throw Error(role_name(role) + " observation of " + std::to_string(obs.size()) +
                  " tokens plus " + std::to_string(constraint.max_length) +
                  " generated tokens exceeds context " + std::to_string(options.context));
    }
    AgentRequest req;
    req.role = role;
    req.instance = &qa;
    req.observation = obs;
    req.constraint = &constraint;
    req.candidates = candidates;
    AgentStep step;
    step.role = role;
    step.output = driver.act(req, rng);
    step.observation = std::move(obs);
    ep.steps.push_back(std::move(step));
    return ep.steps.back();
  };

  try {
    if (has_role(options.modules, Role::kQueryRewriter)) {
      auto& s = run_agent(Role::kQueryRewriter,
                          render_observation(Role::kQueryRewriter, world.vocab, qa.question,
                                             {}, options.k, options.context),
                          {});
      ep.sub_questions = parse_subquestions(s.output.tokens);
      s.penalty = penalty_qr(ep.sub_questions.size());
    }
    ep.candidates =
        assemble_candidates(index, retrieval_queries(qa, ep.sub_questions), options.k);

    if (has_role(options.modules, Role::kSelector)) {
      std::vector<ShownDocument> shown;
      for (std::size_t i = 0; i < ep.candidates.size(); ++i) {
        shown.push_back({i, &world.doc(ep.candidates[i])});
      }
      auto& s = run_agent(Role::kSelector,
                          render_observation(Role::kSelector, world.vocab, qa.question,
                                             shown, options.k, options.context),
                          ep.candidates);
      ep.selection = parse_selector(s.output.tokens, ep.candidates.size());
      s.penalty = ep.selection->penalty;
      ep.selected = selected_indices(*ep.selection, ep.candidates.size());
    } else {
      for (std::size_t i = 0; i < ep.candidates.size(); ++i) ep.selected.push_back(i);
    }

    std::vector<ShownDocument> shown;
    for (auto i : ep.selected) shown.push_back({i, &world.doc(ep.candidates[i])});
    auto& g = run_agent(Role::kGenerator,
                        render_observation(Role::kGenerator, world.vocab, qa.question,
                                           shown, options.k, options.context),
                        ep.candidates);
    ep.answer = extract_answer(g.output.tokens);
    g.penalty = penalty_g(ep.answer.size(), options.max_answer_tokens);
    ep.metrics = answer_metrics(world.vocab, ep.answer, qa.answer);
  } catch (const Error& e) {
    ep.failed = true;
    ep.failure = e.what();
    ep.metrics = AnswerMetrics{};
  }
  return ep;
}

}  // namespace ragmarl
