#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ragmarl/pipeline.hpp"

namespace ragmarl {

struct GaeConfig {
  double gamma = 1.0;
  double lambda = 0.95;
  void validate() const;
};

enum class ValueTarget { kReturn, kGae };

struct MappoConfig {
  double clip_epsilon = 0.2;
  double alpha = 0.1;  // critic coefficient in the combined loss
  double beta_max = 0.2;
  double beta_min = 0.06;
  GaeConfig gae;
  std::size_t buffer_size = 128;
  std::size_t batches = 12;  // optimization phases in the whole run
  std::size_t update_epochs = 1;
  std::size_t minibatch_size = 32;
  double actor_lr = 3e-4;  // desk scale; see README
  double critic_lr = 3e-4;
  double top_p = 0.9;
  ValueTarget value_target = ValueTarget::kReturn;
  bool per_token_kl = false;
  bool whiten_advantages = false;
  double max_grad_norm = 0.0;  // 0 disables clipping
  std::size_t probe_size = 50;  // leading dev instances scored after every batch
  std::size_t checkpoint_every = 4;
  std::uint64_t seed = 1;
  std::array<bool, kRoleCount> trainable = {true, true, true};
  PipelineOptions pipeline;

  void validate() const;
  bool is_trainable(Role r) const { return trainable[static_cast<std::size_t>(r)]; }
};

/// One agent's share of a rollout.
struct Segment {
  Role role = Role::kQueryRewriter;
  bool trainable = true;
  std::vector<int> observation;
  std::vector<int> tokens;
  std::vector<double> old_logprobs;  // masked softmax under the acting network
  std::vector<double> ref_logprobs;  // full softmax under the reference
  std::vector<double> act_logprobs;  // full softmax under the acting network
  std::vector<double> old_values;    // critic, position of the last consumed token
  RewardBreakdown reward;
  std::vector<double> rewards;  // per token, zero before the final step unless per-token KL
  std::vector<double> advantages;
  std::vector<double> targets;
};

struct RolloutTuple {
  const QaInstance* instance = nullptr;
  std::vector<Segment> segments;  // pipeline order
  AnswerMetrics metrics;
  bool failed = false;
  std::string failure;

  const Segment* segment(Role r) const;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);
  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return tuples_.size(); }
  bool empty() const noexcept { return tuples_.empty(); }
  bool full() const noexcept { return tuples_.size() == capacity_; }
  void push(RolloutTuple tuple);  // throws when full
  void clear() { tuples_.clear(); }
  std::vector<RolloutTuple>& tuples() noexcept { return tuples_; }
  const std::vector<RolloutTuple>& tuples() const noexcept { return tuples_; }

 private:
  std::size_t capacity_;
  std::vector<RolloutTuple> tuples_;
};

/// Networks behind one rollout. `agents[r]` is the network acting for role r;
/// agents excluded from optimization are bound to the frozen reference.
struct PolicySet {
  std::array<const Network*, kRoleCount> agents{};
  const Network* reference = nullptr;
  const Network* critic = nullptr;
};

/// Runs the pipeline with `driver`, then scores every segment under its
/// acting network, the reference and the critic, and assembles rewards with
/// the given beta. Advantages and targets are left empty.
RolloutTuple collect_rollout(const World& world, const Bm25Index& index,
                             const QaInstance& qa, AgentDriver& driver,
                             const PolicySet& policies, const MappoConfig& config,
                             double beta, RngStream& rng);

/// Same, sampling every agent from the nucleus of its network.
RolloutTuple collect_rollout(const World& world, const Bm25Index& index,
                             const QaInstance& qa, const PolicySet& policies,
                             const MappoConfig& config, double beta, RngStream& rng);

/// delta_t = r_t + gamma V_{t+1} - V_t with V_{T+1} = 0;
/// A_t = delta_t + gamma lambda A_{t+1}.
std::vector<double> compute_gae(std::span<const double> rewards,
                                std::span<const double> values, const GaeConfig& cfg);

/// sum over s >= t of gamma^(s-t) r_s.
std::vector<double> discounted_returns(std::span<const double> rewards, double gamma);

/// Fills advantages and targets of every segment.
void finalize_segment(Segment& seg, const GaeConfig& gae, ValueTarget target);

/// Clipped surrogate, summed over steps. The objective is maximized.
double actor_objective(std::span<const double> new_logprobs,
                       std::span<const double> old_logprobs,
                       std::span<const double> advantages, double epsilon);

/// d(objective)/d(new log-prob) per step: r_t A_t where the unclipped branch
/// is the minimum, else 0.
std::vector<double> actor_objective_grad(std::span<const double> new_logprobs,
                                         std::span<const double> old_logprobs,
                                         std::span<const double> advantages,
                                         double epsilon);

/// Sum over steps of max[(V - T)^2, (clip(V, V_old - eps, V_old + eps) - T)^2].
double critic_loss(std::span<const double> new_values, std::span<const double> old_values,
                   std::span<const double> targets, double epsilon);

std::vector<double> critic_loss_grad(std::span<const double> new_values,
                                     std::span<const double> old_values,
                                     std::span<const double> targets, double epsilon);

/// Minimized quantity: -actor_objective + alpha * critic_loss.
double total_loss(double actor_objective, double critic_loss, double alpha);

/// Linear from beta_max at step 0 to beta_min at step total_steps.
double beta_schedule(std::size_t step, std::size_t total_steps, double beta_max,
                     double beta_min);

struct UpdateStats {
  double actor_objective = 0.0;  // summed over segments and steps
  double critic_loss = 0.0;
  std::size_t segments = 0;
};

/// Accumulates gradients of scale * total_loss for the trainable segments of
/// `tuples` into actor and critic. Critic gradients are skipped when alpha
/// is 0.
UpdateStats accumulate_mappo_gradient(Network& actor, Network& critic,
                                      std::span<const RolloutTuple* const> tuples,
                                      const MappoConfig& config, double scale);

/// Standardizes advantages of trainable segments across the buffer.
void whiten_advantages(std::vector<RolloutTuple>& tuples);

/// Actor, critic and frozen reference with the per-role binding.
struct MappoState {
  Network actor;
  Network critic;
  Network reference;
  std::array<bool, kRoleCount> bound_to_reference{};
  std::size_t next_batch = 0;

  PolicySet policies() const;
  std::array<const Network*, kRoleCount> agents() const;
};

/// Actor and reference copied from the warm start; critic backbone copied
/// from it with a freshly initialized value head.
MappoState initial_state(const Network& sft_actor, const MappoConfig& config);

// Bundle checkpoint: prefixes "actor/", "critic/" (with Adam moments) and
// "reference/", a 3-entry tensor "binding" (1 = role acts with the reference)
// and a 1-entry tensor "next_batch".
void save_state(const MappoState& state, const std::filesystem::path& path);
MappoState load_state(const std::filesystem::path& path);
bool is_state_checkpoint(const Checkpoint& ckpt);

/// Networks acting for each role from either a bundle or a plain actor
/// checkpoint (all roles share it).
struct LoadedAgents {
  std::vector<Network> networks;
  std::array<std::size_t, kRoleCount> binding{};
  std::array<const Network*, kRoleCount> agents() const;
};
LoadedAgents load_agents(const std::filesystem::path& path);

struct BatchLog {
  std::size_t batch = 0;
  std::size_t samples = 0;
  double r_shared = 0.0;
  AnswerMetrics probe;
  std::map<Role, double> penalty;  // present roles only
  std::map<Role, double> kl;
  double actor_objective = 0.0;  // mean per tuple
  double critic_loss = 0.0;
  double beta = 0.0;
  double lr = 0.0;
};

// Training log: tab-separated, one header line then one row per batch.
// Columns: batch samples r_shared probe_f1 probe_em probe_acc, then
// penalty_<role> and kl_<role> for each role present, then actor_objective
// critic_loss beta lr.
std::string train_log_header(ModuleConfig modules);
std::string format_train_log_row(const BatchLog& row, ModuleConfig modules);

struct TrainOptions {
  std::filesystem::path out_dir;
  bool resume = false;
  std::size_t stop_after = 0;  // stop after this many batches in this invocation
  std::size_t workers = 1;
  std::ostream* progress = nullptr;
};

struct TrainResult {
  std::vector<BatchLog> rows;  // batches run in this invocation
  std::size_t next_batch = 0;
  bool finished = false;
};

/// Instances of the training split used by `batch`: consecutive slices of a
/// stream of seeded permutations of the split.
std::vector<std::size_t> batch_instances(std::size_t split_size, std::size_t buffer_size,
                                         std::uint64_t seed, std::size_t batch);

/// Greedy pipeline metrics averaged over `instances`.
AnswerMetrics probe_metrics(const World& world, const Bm25Index& index,
                            std::span<const QaInstance> instances,
                            const std::array<const Network*, kRoleCount>& agents,
                            const PipelineOptions& options, std::size_t workers);

/// Writes train_log.tsv, timing.tsv, checkpoint_latest.ckpt and
/// mappo.ckpt under out_dir. A non-finite loss restores the batch's starting
/// parameters, writes diagnostics.txt and throws.
TrainResult train_mappo(const World& world, const Network& sft_actor,
                        const MappoConfig& config, const TrainOptions& options);

/// Runs fn(i) for i in [0, n) on `workers` threads; results must be written
/// to per-index slots.
void parallel_for(std::size_t n, std::size_t workers,
                  const std::function<void(std::size_t)>& fn);

}  // namespace ragmarl
