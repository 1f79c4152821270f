#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ragmarl/policy.hpp"
#include "ragmarl/render.hpp"
#include "ragmarl/retriever.hpp"
#include "ragmarl/rewards.hpp"

namespace ragmarl {

/// Which agents run. The retriever always runs.
enum class ModuleConfig { kFull, kSelectorGenerator, kRewriterGenerator };

std::string module_config_name(ModuleConfig m);  // "QR+S+G", "S+G", "QR+G"
ModuleConfig parse_module_config(const std::string& name);
bool has_role(ModuleConfig m, Role r);
std::vector<Role> roles_of(ModuleConfig m);

struct PipelineOptions {
  ModuleConfig modules = ModuleConfig::kFull;
  std::size_t k = 10;
  std::size_t qr_max_tokens = 48;
  std::size_t s_max_tokens = 32;
  std::size_t g_max_tokens = 40;
  std::size_t max_answer_tokens = 32;
  std::size_t context = 256;

  void validate() const;
};

/// Decode constraint of each role. The selector may emit only "Document",
/// ",", digits below K and the stop token; the other roles are unconstrained.
DecodeConstraint role_constraint(Role role, std::size_t vocab_size,
                                 const PipelineOptions& options);

struct AgentRequest {
  Role role = Role::kQueryRewriter;
  const QaInstance* instance = nullptr;
  std::span<const int> observation;
  const DecodeConstraint* constraint = nullptr;
  std::span<const int> candidates;  // document ids shown to the selector
};

/// Produces one agent's output tokens.
class AgentDriver {
 public:
  virtual ~AgentDriver() = default;
  virtual DecodeResult act(const AgentRequest& request, RngStream& rng) = 0;
};

/// Gold actions: gold sub-questions, the supporting documents among the
/// candidates, the gold answer. Log-probabilities are reported as 0.
class OracleDriver : public AgentDriver {
 public:
  DecodeResult act(const AgentRequest& request, RngStream& rng) override;
};

/// Runs one network per role (several roles may share one network).
/// Samples from the nucleus unless greedy.
class PolicyDriver : public AgentDriver {
 public:
  PolicyDriver(std::array<const Network*, kRoleCount> networks, double top_p,
               bool greedy);
  DecodeResult act(const AgentRequest& request, RngStream& rng) override;

 private:
  std::array<const Network*, kRoleCount> networks_;
  double top_p_;
  bool greedy_;
};

struct AgentStep {
  Role role = Role::kQueryRewriter;
  std::vector<int> observation;
  DecodeResult output;
  double penalty = 0.0;
};

/// One pass of question -> [QR] -> retriever -> [S] -> G.
struct Episode {
  const QaInstance* instance = nullptr;
  std::vector<AgentStep> steps;                 // pipeline order, present roles only
  std::vector<std::vector<int>> sub_questions;  // parsed QR output (empty without QR)
  std::vector<int> candidates;                  // retrieved document ids, D
  std::optional<SelectorParse> selection;
  std::vector<std::size_t> selected;            // indices into candidates
  std::vector<int> answer;                      // extracted generator answer
  AnswerMetrics metrics;
  bool failed = false;
  std::string failure;

  const AgentStep* step(Role r) const;
};

/// Retrieval queries: the parsed sub-questions, or the question itself when
/// there are none or QR is absent.
std::vector<std::vector<int>> retrieval_queries(const QaInstance& qa,
                                                const std::vector<std::vector<int>>& subqs);

/// Never throws on context overflow: the episode is marked failed and scores
/// zero.
Episode run_episode(const World& world, const Bm25Index& index, const QaInstance& qa,
                    const PipelineOptions& options, AgentDriver& driver,
                    RngStream& rng);

/// Gold-action tokens for a role, as OracleDriver emits them.
std::vector<int> gold_rewriter_output(const QaInstance& qa);
std::vector<int> gold_generator_output(const QaInstance& qa);

}  // namespace ragmarl
