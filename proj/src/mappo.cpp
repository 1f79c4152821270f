#include "ragmarl/mappo.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "ragmarl/error.hpp"

namespace ragmarl {
namespace {

// Stream domains, mixed into the master seed.
constexpr std::uint64_t kRolloutDomain = 0x726f6c6cULL;
constexpr std::uint64_t kShuffleDomain = 0x73687566ULL;
constexpr std::uint64_t kOrderDomain = 0x6f726472ULL;
constexpr std::uint64_t kCriticDomain = 0x63726974ULL;

void check_aligned(std::size_t a, std::size_t b, std::size_t c, const char* what) {
  if (a != b || a != c) throw Error(std::string(what) + ": length mismatch");
}

void reset_optimizer(ParamStore& store) {
  for (auto& p : store.params()) {
    std::fill(p.m.data.begin(), p.m.data.end(), 0.0);
    std::fill(p.v.data.begin(), p.v.data.end(), 0.0);
    std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
  }
  store.set_step(0);
}

void clip_grad(ParamStore& store, double max_norm) {
  if (max_norm <= 0.0) return;
  const double norm = store.grad_norm();
  if (norm > max_norm) store.scale_grad(max_norm / norm);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::vector<std::string> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

// Keeps the header and rows whose leading batch index is below `next_batch`.
void truncate_table(const std::filesystem::path& path, std::size_t next_batch,
                    const std::string& header) {
  auto lines = read_lines(path);
  std::ofstream out(path, std::ios::trunc);
  out << header << '\n';
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto tab = lines[i].find('\t');
    if (tab == std::string::npos) continue;
    if (std::stoull(lines[i].substr(0, tab)) < next_batch) out << lines[i] << '\n';
  }
}

}  // namespace

void GaeConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must be in [0,1]");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must be in [0,1]");
}

void MappoConfig::validate() const {
  if (!(clip_epsilon > 0.0)) throw ConfigError("clip_epsilon must be positive");
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
  if (!(beta_min >= 0.0 && beta_min <= beta_max)) {
    throw ConfigError("beta_min must be in [0, beta_max]");
  }
  gae.validate();
  if (buffer_size == 0) throw ConfigError("buffer_size must be positive");
  if (batches == 0) throw ConfigError("batches must be positive");
  if (update_epochs == 0) throw ConfigError("update_epochs must be positive");
  if (minibatch_size == 0) throw ConfigError("minibatch_size must be positive");
  if (!(actor_lr >= 0.0) || !(critic_lr >= 0.0)) {
    throw ConfigError("learning rates must be non-negative");
  }
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("top_p must be in (0,1]");
  if (!(max_grad_norm >= 0.0)) throw ConfigError("max_grad_norm must be non-negative");
  pipeline.validate();
}

const Segment* RolloutTuple::segment(Role r) const {
  for (const auto& s : segments) {
    if (s.role == r) return &s;
  }
  return nullptr;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("buffer capacity must be positive");
}

void ReplayBuffer::push(RolloutTuple tuple) {
  if (full()) throw Error("replay buffer is full");
  tuples_.push_back(std::move(tuple));
}

RolloutTuple collect_rollout(const World& world, const Bm25Index& index,
                             const QaInstance& qa, AgentDriver& driver,
                             const PolicySet& policies, const MappoConfig& config,
                             double beta, RngStream& rng) {
  const Episode ep = run_episode(world, index, qa, config.pipeline, driver, rng);
  RolloutTuple out;
  out.instance = &qa;
  out.metrics = ep.metrics;
  out.failed = ep.failed;
  out.failure = ep.failure;
  const double r_shared = ep.failed ? 0.0 : ep.metrics.f1;
  const std::size_t vocab_size = world.vocab.size();
  for (const auto& step : ep.steps) {
    if (step.output.tokens.empty()) continue;
    Segment seg;
    seg.role = step.role;
    seg.trainable = config.is_trainable(step.role);
    seg.observation = step.observation;
    seg.tokens = step.output.tokens;
    const Network& net = *policies.agents[static_cast<std::size_t>(step.role)];
    const auto constraint = role_constraint(step.role, vocab_size, config.pipeline);
    seg.old_logprobs =
        score_sequence(net, seg.observation, seg.tokens, constraint.allowed).logprobs;
    seg.act_logprobs = constraint.allowed.empty()
                           ? seg.old_logprobs
                           : score_sequence(net, seg.observation, seg.tokens).logprobs;
    seg.ref_logprobs =
        &net == policies.reference
            ? seg.act_logprobs
            : score_sequence(*policies.reference, seg.observation, seg.tokens).logprobs;
    seg.old_values = score_values(*policies.critic, seg.observation, seg.tokens).values;
    double kl = 0.0;
    for (std::size_t t = 0; t < seg.tokens.size(); ++t) {
      kl += seg.act_logprobs[t] - seg.ref_logprobs[t];
    }
    seg.reward = assemble_terminal_reward(r_shared, step.penalty, beta, kl);
    if (config.per_token_kl) {
      seg.rewards.resize(seg.tokens.size());
      for (std::size_t t = 0; t < seg.tokens.size(); ++t) {
        seg.rewards[t] = -beta * (seg.act_logprobs[t] - seg.ref_logprobs[t]);
      }
      seg.rewards.back() += r_shared + step.penalty;
    } else {
      seg.rewards = terminal_reward_vector(seg.tokens.size(), seg.reward.r_total);
    }
    out.segments.push_back(std::move(seg));
  }
  return out;
}

RolloutTuple collect_rollout(const World& world, const Bm25Index& index,
                             const QaInstance& qa, const PolicySet& policies,
                             const MappoConfig& config, double beta, RngStream& rng) {
  PolicyDriver driver(policies.agents, config.top_p, false);
  return collect_rollout(world, index, qa, driver, policies, config, beta, rng);
}

std::vector<double> compute_gae(std::span<const double> rewards,
                                std::span<const double> values, const GaeConfig& cfg) {
  if (rewards.size() != values.size()) throw Error("compute_gae: length mismatch");
  const std::size_t n = rewards.size();
  std::vector<double> adv(n, 0.0);
  double next_adv = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double next_value = i + 1 < n ? values[i + 1] : 0.0;
    const double delta = rewards[i] + cfg.gamma * next_value - values[i];
    adv[i] = delta + cfg.gamma * cfg.lambda * next_adv;
    next_adv = adv[i];
  }
  return adv;
}

std::vector<double> discounted_returns(std::span<const double> rewards, double gamma) {
  std::vector<double> out(rewards.size(), 0.0);
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + gamma * acc;
    out[i] = acc;
  }
  return out;
}

void finalize_segment(Segment& seg, const GaeConfig& gae, ValueTarget target) {
  seg.advantages = compute_gae(seg.rewards, seg.old_values, gae);
  if (target == ValueTarget::kReturn) {
    seg.targets = discounted_returns(seg.rewards, gae.gamma);
  } else {
    seg.targets.resize(seg.advantages.size());
    for (std::size_t t = 0; t < seg.targets.size(); ++t) {
      seg.targets[t] = seg.advantages[t] + seg.old_values[t];
    }
  }
}

double actor_objective(std::span<const double> new_logprobs,
                       std::span<const double> old_logprobs,
                       std::span<const double> advantages, double epsilon) {
  check_aligned(new_logprobs.size(), old_logprobs.size(), advantages.size(),
                "actor_objective");
  double total = 0.0;
  for (std::size_t t = 0; t < new_logprobs.size(); ++t) {
    const double r = std::exp(new_logprobs[t] - old_logprobs[t]);
    const double clipped = std::clamp(r, 1.0 - epsilon, 1.0 + epsilon);
    total += std::min(r * advantages[t], clipped * advantages[t]);
  }
  return total;
}

std::vector<double> actor_objective_grad(std::span<const double> new_logprobs,
                                         std::span<const double> old_logprobs,
                                         std::span<const double> advantages,
                                         double epsilon) {
  check_aligned(new_logprobs.size(), old_logprobs.size(), advantages.size(),
                "actor_objective_grad");
  std::vector<double> out(new_logprobs.size(), 0.0);
  for (std::size_t t = 0; t < new_logprobs.size(); ++t) {
    const double r = std::exp(new_logprobs[t] - old_logprobs[t]);
    const double clipped = std::clamp(r, 1.0 - epsilon, 1.0 + epsilon);
    // Inside the band both branches coincide and the unclipped one carries
    // the gradient.
    if (r * advantages[t] <= clipped * advantages[t]) out[t] = r * advantages[t];
  }
  return out;
}

double critic_loss(std::span<const double> new_values, std::span<const double> old_values,
                   std::span<const double> targets, double epsilon) {
  check_aligned(new_values.size(), old_values.size(), targets.size(), "critic_loss");
  double total = 0.0;
  for (std::size_t t = 0; t < new_values.size(); ++t) {
    const double a = new_values[t] - targets[t];
    const double clipped =
        std::clamp(new_values[t], old_values[t] - epsilon, old_values[t] + epsilon);
    const double b = clipped - targets[t];
    total += std::max(a * a, b * b);
  }
  return total;
}

std::vector<double> critic_loss_grad(std::span<const double> new_values,
                                     std::span<const double> old_values,
                                     std::span<const double> targets, double epsilon) {
  check_aligned(new_values.size(), old_values.size(), targets.size(), "critic_loss_grad");
  std::vector<double> out(new_values.size(), 0.0);
  for (std::size_t t = 0; t < new_values.size(); ++t) {
    const double lo = old_values[t] - epsilon;
    const double hi = old_values[t] + epsilon;
    const double a = new_values[t] - targets[t];
    const double clipped = std::clamp(new_values[t], lo, hi);
    const double b = clipped - targets[t];
    if (a * a >= b * b) {
      out[t] = 2.0 * a;
    } else if (new_values[t] > lo && new_values[t] < hi) {
      out[t] = 2.0 * b;
    }
  }
  return out;
}

double total_loss(double actor_objective, double critic_loss, double alpha) {
  return -actor_objective + alpha * critic_loss;
}

double beta_schedule(std::size_t step, std::size_t total_steps, double beta_max,
                     double beta_min) {
  if (total_steps == 0) throw Error("beta_schedule: total_steps must be positive");
  const double frac =
      static_cast<double>(std::min(step, total_steps)) / static_cast<double>(total_steps);
  return beta_max + (beta_min - beta_max) * frac;
}

UpdateStats accumulate_mappo_gradient(Network& actor, Network& critic,
                                      std::span<const RolloutTuple* const> tuples,
                                      const MappoConfig& config, double scale) {
  UpdateStats stats;
  const std::size_t vocab_size = actor.config().vocab_size;
  for (const auto* tuple : tuples) {
    for (const auto& seg : tuple->segments) {
      if (!seg.trainable) continue;
      ++stats.segments;
      const auto constraint = role_constraint(seg.role, vocab_size, config.pipeline);
      const auto score =
          score_sequence(actor, seg.observation, seg.tokens, constraint.allowed);
      stats.actor_objective += actor_objective(score.logprobs, seg.old_logprobs,
                                               seg.advantages, config.clip_epsilon);
      auto grad = actor_objective_grad(score.logprobs, seg.old_logprobs, seg.advantages,
                                       config.clip_epsilon);
      for (auto& g : grad) g *= -scale;
      backward_logprobs(actor, score, grad);
      if (config.alpha > 0.0) {
        const auto vs = score_values(critic, seg.observation, seg.tokens);
        stats.critic_loss +=
            critic_loss(vs.values, seg.old_values, seg.targets, config.clip_epsilon);
        auto cg = critic_loss_grad(vs.values, seg.old_values, seg.targets,
                                   config.clip_epsilon);
        for (auto& g : cg) g *= config.alpha * scale;
        backward_values(critic, vs, cg);
      }
    }
  }
  return stats;
}

void whiten_advantages(std::vector<RolloutTuple>& tuples) {
  double sum = 0.0;
  double sq = 0.0;
  std::size_t n = 0;
  for (const auto& t : tuples) {
    for (const auto& s : t.segments) {
      if (!s.trainable) continue;
      for (double a : s.advantages) {
        sum += a;
        sq += a * a;
        ++n;
      }
    }
  }
  if (n < 2) return;
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sq / static_cast<double>(n) - mean * mean);
  const double inv = 1.0 / (std::sqrt(var) + 1e-8);
  for (auto& t : tuples) {
    for (auto& s : t.segments) {
      if (!s.trainable) continue;
      for (double& a : s.advantages) a = (a - mean) * inv;
    }
  }
}

std::array<const Network*, kRoleCount> MappoState::agents() const {
  std::array<const Network*, kRoleCount> out{};
  for (std::size_t r = 0; r < kRoleCount; ++r) {
    out[r] = bound_to_reference[r] ? &reference : &actor;
  }
  return out;
}

PolicySet MappoState::policies() const {
  PolicySet p;
  p.agents = agents();
  p.reference = &reference;
  p.critic = &critic;
  return p;
}

MappoState initial_state(const Network& sft_actor, const MappoConfig& config) {
  RngStream rng = RngStream::derive(config.seed, kCriticDomain);
  Network critic(sft_actor.config(), HeadKind::kCritic, rng);
  critic.copy_backbone_from(sft_actor);
  MappoState state{sft_actor, std::move(critic), sft_actor, {}, 0};
  reset_optimizer(state.actor.store());
  reset_optimizer(state.reference.store());
  for (std::size_t r = 0; r < kRoleCount; ++r) {
    state.bound_to_reference[r] = !config.trainable[r];
  }
  return state;
}

void save_state(const MappoState& state, const std::filesystem::path& path) {
  Checkpoint ckpt;
  ckpt.step = state.actor.store().step();
  state.actor.append_to(ckpt, "actor/", true);
  state.critic.append_to(ckpt, "critic/", true);
  state.reference.append_to(ckpt, "reference/", false);
  Tensor binding({kRoleCount});
  for (std::size_t r = 0; r < kRoleCount; ++r) {
    binding[r] = state.bound_to_reference[r] ? 1.0 : 0.0;
  }
  ckpt.entries.push_back({"binding", binding});
  Tensor next({1});
  next[0] = static_cast<double>(state.next_batch);
  ckpt.entries.push_back({"next_batch", next});
  save_checkpoint(ckpt, path);
}

bool is_state_checkpoint(const Checkpoint& ckpt) { return ckpt.find("binding") != nullptr; }

MappoState load_state(const std::filesystem::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  if (!is_state_checkpoint(ckpt)) {
    throw Error(path.string() + " is not a training state checkpoint");
  }
  MappoState state{Network::from_checkpoint(ckpt, "actor/"),
                   Network::from_checkpoint(ckpt, "critic/"),
                   Network::from_checkpoint(ckpt, "reference/"),
                   {},
                   0};
  const Tensor& binding = *ckpt.find("binding");
  if (binding.size() != kRoleCount) throw Error("binding tensor must have 3 entries");
  for (std::size_t r = 0; r < kRoleCount; ++r) state.bound_to_reference[r] = binding[r] != 0.0;
  const Tensor* next = ckpt.find("next_batch");
  if (!next || next->size() != 1) throw Error("state checkpoint lacks next_batch");
  state.next_batch = static_cast<std::size_t>((*next)[0]);
  return state;
}

std::array<const Network*, kRoleCount> LoadedAgents::agents() const {
  std::array<const Network*, kRoleCount> out{};
  for (std::size_t r = 0; r < kRoleCount; ++r) out[r] = &networks[binding[r]];
  return out;
}

LoadedAgents load_agents(const std::filesystem::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  LoadedAgents out;
  if (is_state_checkpoint(ckpt)) {
    out.networks.push_back(Network::from_checkpoint(ckpt, "actor/"));
    out.networks.push_back(Network::from_checkpoint(ckpt, "reference/"));
    const Tensor& binding = *ckpt.find("binding");
    for (std::size_t r = 0; r < kRoleCount; ++r) out.binding[r] = binding[r] != 0.0 ? 1 : 0;
  } else {
    out.networks.push_back(Network::from_checkpoint(ckpt, ""));
  }
  if (out.networks.front().head_kind() != HeadKind::kActor) {
    throw Error(path.string() + " does not hold an actor");
  }
  return out;
}

std::string train_log_header(ModuleConfig modules) {
  std::string h = "batch\tsamples\tr_shared\tprobe_f1\tprobe_em\tprobe_acc";
  for (Role r : roles_of(modules)) h += "\tpenalty_" + role_name(r);
  for (Role r : roles_of(modules)) h += "\tkl_" + role_name(r);
  h += "\tactor_objective\tcritic_loss\tbeta\tlr";
  return h;
}

std::string format_train_log_row(const BatchLog& row, ModuleConfig modules) {
  std::string s = std::to_string(row.batch) + '\t' + std::to_string(row.samples) + '\t' +
                  fmt(row.r_shared) + '\t' + fmt(row.probe.f1) + '\t' + fmt(row.probe.em) +
                  '\t' + fmt(row.probe.acc);
  for (Role r : roles_of(modules)) {
    auto it = row.penalty.find(r);
    s += '\t' + fmt(it == row.penalty.end() ? 0.0 : it->second);
  }
  for (Role r : roles_of(modules)) {
    auto it = row.kl.find(r);
    s += '\t' + fmt(it == row.kl.end() ? 0.0 : it->second);
  }
  s += '\t' + fmt(row.actor_objective) + '\t' + fmt(row.critic_loss) + '\t' + fmt(row.beta);
  char lr[64];
  std::snprintf(lr, sizeof(lr), "%.6e", row.lr);
  s += '\t';
  s += lr;
  return s;
}

std::vector<std::size_t> batch_instances(std::size_t split_size, std::size_t buffer_size,
                                         std::uint64_t seed, std::size_t batch) {
  if (split_size == 0) throw Error("training split is empty");
  std::vector<std::size_t> out;
  std::size_t cached_pass = static_cast<std::size_t>(-1);
  std::vector<std::size_t> perm(split_size);
  for (std::size_t k = 0; k < buffer_size; ++k) {
    const std::size_t g = batch * buffer_size + k;
    const std::size_t pass = g / split_size;
    if (pass != cached_pass) {
      std::iota(perm.begin(), perm.end(), 0);
      RngStream rng = RngStream::derive(seed ^ kOrderDomain, pass);
      for (std::size_t i = split_size; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
      cached_pass = pass;
    }
    out.push_back(perm[g % split_size]);
  }
  return out;
}

void parallel_for(std::size_t n, std::size_t workers,
                  const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < std::min(workers, n); ++w) {
    threads.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

AnswerMetrics probe_metrics(const World& world, const Bm25Index& index,
                            std::span<const QaInstance> instances,
                            const std::array<const Network*, kRoleCount>& agents,
                            const PipelineOptions& options, std::size_t workers) {
  std::vector<AnswerMetrics> per(instances.size());
  parallel_for(instances.size(), workers, [&](std::size_t i) {
    PolicyDriver driver(agents, 1.0, true);
    RngStream rng(0);
    per[i] = run_episode(world, index, instances[i], options, driver, rng).metrics;
  });
  AnswerMetrics mean;
  for (const auto& m : per) {
    mean.acc += m.acc;
    mean.em += m.em;
    mean.f1 += m.f1;
  }
  if (!per.empty()) {
    const double n = static_cast<double>(per.size());
    mean.acc /= n;
    mean.em /= n;
    mean.f1 /= n;
  }
  return mean;
}

TrainResult train_mappo(const World& world, const Network& sft_actor,
                        const MappoConfig& config, const TrainOptions& options) {
  config.validate();
  namespace fs = std::filesystem;
  fs::create_directories(options.out_dir);
  const fs::path log_path = options.out_dir / "train_log.tsv";
  const fs::path timing_path = options.out_dir / "timing.tsv";
  const fs::path latest_path = options.out_dir / "checkpoint_latest.ckpt";
  const fs::path final_path = options.out_dir / "mappo.ckpt";
  const ModuleConfig modules = config.pipeline.modules;
  const std::string header = train_log_header(modules);
  const std::string timing_header = "batch\trollout_seconds\tupdate_seconds\tprobe_seconds";

  MappoState state = options.resume ? load_state(latest_path) : initial_state(sft_actor, config);
  if (state.actor.config().vocab_size != world.vocab.size()) {
    throw Error("checkpoint vocabulary size " +
                std::to_string(state.actor.config().vocab_size) +
                " does not match the world's " + std::to_string(world.vocab.size()));
  }
  if (options.resume) {
    truncate_table(log_path, state.next_batch, header);
    truncate_table(timing_path, state.next_batch, timing_header);
  } else {
    std::ofstream(log_path, std::ios::trunc) << header << '\n';
    std::ofstream(timing_path, std::ios::trunc) << timing_header << '\n';
  }

  const Bm25Index index(world.corpus, world.vocab);
  const std::size_t probe_n = std::min(config.probe_size, world.dev.size());
  const std::span<const QaInstance> probe(world.dev.data(), probe_n);
  const std::size_t minibatches =
      (config.buffer_size + config.minibatch_size - 1) / config.minibatch_size;
  const std::uint64_t total_steps = config.batches * config.update_epochs * minibatches;
  const auto roles = roles_of(modules);
  const bool any_trainable = std::any_of(roles.begin(), roles.end(),
                                         [&](Role r) { return config.is_trainable(r); });
  ReplayBuffer buffer(config.buffer_size);

  TrainResult result;
  std::size_t ran = 0;
  for (std::size_t b = state.next_batch; b < config.batches; ++b) {
    if (options.stop_after && ran == options.stop_after) break;
    using Clock = std::chrono::steady_clock;
    const auto t0 = Clock::now();
    if (!buffer.empty()) throw Error("replay buffer not empty at batch start");
    const double beta = beta_schedule(b, std::max<std::size_t>(1, config.batches - 1),
                                      config.beta_max, config.beta_min);
    const auto ids = batch_instances(world.train.size(), config.buffer_size, config.seed, b);
    std::vector<RolloutTuple> collected(ids.size());
    const PolicySet policies = state.policies();
    parallel_for(ids.size(), options.workers, [&](std::size_t i) {
      RngStream rng = RngStream::derive(config.seed ^ kRolloutDomain, b, i);
      collected[i] = collect_rollout(world, index, world.train[ids[i]], policies, config,
                                     beta, rng);
      for (auto& seg : collected[i].segments) {
        finalize_segment(seg, config.gae, config.value_target);
      }
    });
    for (auto& t : collected) buffer.push(std::move(t));
    if (config.whiten_advantages) whiten_advantages(buffer.tuples());
    const auto t1 = Clock::now();

    BatchLog row;
    row.batch = b;
    row.samples = (b + 1) * config.buffer_size;
    row.beta = beta;
    std::map<Role, std::size_t> role_counts;
    for (const auto& t : buffer.tuples()) {
      row.r_shared += t.failed ? 0.0 : t.metrics.f1;
      for (const auto& s : t.segments) {
        row.penalty[s.role] += s.reward.penalty;
        row.kl[s.role] += s.reward.kl_log_ratio;
        ++role_counts[s.role];
      }
    }
    row.r_shared /= static_cast<double>(buffer.size());
    for (auto& [r, v] : row.penalty) v /= static_cast<double>(role_counts[r]);
    for (auto& [r, v] : row.kl) v /= static_cast<double>(role_counts[r]);

    const MappoState snapshot = state;
    std::uint64_t step = static_cast<std::uint64_t>(b) * config.update_epochs * minibatches;
    for (std::size_t epoch = 0; epoch < config.update_epochs; ++epoch) {
      std::vector<std::size_t> order(buffer.size());
      std::iota(order.begin(), order.end(), 0);
      RngStream rng = RngStream::derive(config.seed ^ kShuffleDomain, b, epoch);
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
      for (std::size_t m = 0; m < minibatches; ++m) {
        std::vector<const RolloutTuple*> mb;
        for (std::size_t i = m * config.minibatch_size;
             i < std::min(order.size(), (m + 1) * config.minibatch_size); ++i) {
          mb.push_back(&buffer.tuples()[order[i]]);
        }
        state.actor.store().zero_grad();
        state.critic.store().zero_grad();
        const auto stats = accumulate_mappo_gradient(
            state.actor, state.critic, mb, config, 1.0 / static_cast<double>(mb.size()));
        const double loss = total_loss(stats.actor_objective, stats.critic_loss, config.alpha);
        bool finite = std::isfinite(loss);
        row.lr = cosine_lr(config.actor_lr, step, total_steps);
        if (finite) {
          clip_grad(state.actor.store(), config.max_grad_norm);
          clip_grad(state.critic.store(), config.max_grad_norm);
          try {
            AdamConfig adam;
            adam.lr = row.lr;
            if (any_trainable) adam_step(state.actor.store(), adam);
            adam.lr = cosine_lr(config.critic_lr, step, total_steps);
            if (config.alpha > 0.0) adam_step(state.critic.store(), adam);
          } catch (const Error&) {
            finite = false;
          }
        }
        if (!finite) {
          state = snapshot;
          save_state(state, latest_path);
          std::ofstream diag(options.out_dir / "diagnostics.txt");
          diag << "batch\t" << b << "\nepoch\t" << epoch << "\nminibatch\t" << m
               << "\nactor_objective\t" << stats.actor_objective << "\ncritic_loss\t"
               << stats.critic_loss << "\nbeta\t" << beta << "\nlr\t" << row.lr << '\n';
          throw Error("non-finite loss at batch " + std::to_string(b) +
                      "; parameters restored to the start of the batch");
        }
        row.actor_objective += stats.actor_objective;
        row.critic_loss += stats.critic_loss;
        ++step;
      }
    }
    const double per_tuple =
        1.0 / static_cast<double>(buffer.size() * config.update_epochs);
    row.actor_objective *= per_tuple;
    row.critic_loss *= per_tuple;
    buffer.clear();
    const auto t2 = Clock::now();

    row.probe = probe_metrics(world, index, probe, state.agents(), config.pipeline,
                              options.workers);
    const auto t3 = Clock::now();
    state.next_batch = b + 1;
    {
      std::ofstream log(log_path, std::ios::app);
      log << format_train_log_row(row, modules) << '\n';
      std::ofstream timing(timing_path, std::ios::app);
      const auto secs = [](auto d) { return fmt(std::chrono::duration<double>(d).count()); };
      timing << b << '\t' << secs(t1 - t0) << '\t' << secs(t2 - t1) << '\t' << secs(t3 - t2)
             << '\n';
    }
    if (options.progress) {
      *options.progress << "batch " << b << " r_shared " << fmt(row.r_shared) << " probe_f1 "
                        << fmt(row.probe.f1) << '\n'
                        << std::flush;
    }
    result.rows.push_back(row);
    ++ran;
    if (config.checkpoint_every && state.next_batch % config.checkpoint_every == 0 &&
        state.next_batch < config.batches) {
      save_state(state, latest_path);
    }
  }
  save_state(state, latest_path);
  result.next_batch = state.next_batch;
  result.finished = state.next_batch >= config.batches;
  if (result.finished) save_state(state, final_path);
  return result;
}

}  // namespace ragmarl
