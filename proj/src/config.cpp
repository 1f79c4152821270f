#include "ragmarl/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "ragmarl/error.hpp"

namespace ragmarl {
namespace {

constexpr std::uint64_t kInitDomain = 0x696e6974ULL;
constexpr std::uint64_t kSftDomain = 0x73667400ULL;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("invalid value for " + key + ": '" + value + "'");
  }
}

std::uint64_t to_uint(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    if (value.empty() || value[0] == '-') throw std::invalid_argument(value);
    const unsigned long long v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("invalid value for " + key + ": '" + value + "'");
  }
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("invalid value for " + key + ": '" + value + "' (expected true/false)");
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

template <typename T>
Field size_field(T RunConfig::*outer, std::size_t T::*member) {
  return {[=](const RunConfig& c) { return std::to_string(c.*outer.*member); },
          [=](RunConfig& c, const std::string& k, const std::string& v) {
            c.*outer.*member = static_cast<std::size_t>(to_uint(k, v));
          }};
}

template <typename T>
Field double_field(T RunConfig::*outer, double T::*member) {
  return {[=](const RunConfig& c) { return format_double(c.*outer.*member); },
          [=](RunConfig& c, const std::string& k, const std::string& v) {
            c.*outer.*member = to_double(k, v);
          }};
}

template <typename T>
Field bool_field(T RunConfig::*outer, bool T::*member) {
  return {[=](const RunConfig& c) { return std::string(c.*outer.*member ? "true" : "false"); },
          [=](RunConfig& c, const std::string& k, const std::string& v) {
            c.*outer.*member = to_bool(k, v);
          }};
}

Field pipeline_size(std::size_t PipelineOptions::*member) {
  return {[=](const RunConfig& c) { return std::to_string(c.mappo.pipeline.*member); },
          [=](RunConfig& c, const std::string& k, const std::string& v) {
            c.mappo.pipeline.*member = static_cast<std::size_t>(to_uint(k, v));
          }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> kFields = [] {
    std::map<std::string, Field> f;
    f["seed"] = {[](const RunConfig& c) { return std::to_string(c.seed); },
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.seed = to_uint(k, v);
                 }};
    f["world"] = {[](const RunConfig& c) { return c.world_path.string(); },
                  [](RunConfig& c, const std::string&, const std::string& v) {
                    c.world_path = v;
                  }};
    f["checkpoint"] = {[](const RunConfig& c) { return c.checkpoint_path.string(); },
                       [](RunConfig& c, const std::string&, const std::string& v) {
                         c.checkpoint_path = v;
                       }};
    f["modules"] = {[](const RunConfig& c) { return module_config_name(c.mappo.pipeline.modules); },
                    [](RunConfig& c, const std::string&, const std::string& v) {
                      c.mappo.pipeline.modules = parse_module_config(v);
                    }};
    f["trainable"] = {[](const RunConfig& c) { return trainable_string(c.mappo.trainable); },
                      [](RunConfig& c, const std::string&, const std::string& v) {
                        std::array<bool, kRoleCount> t{};
                        std::string cur;
                        for (char ch : v + ",") {
                          if (ch == ',') {
                            const auto name = trim(cur);
                            if (!name.empty()) t[static_cast<std::size_t>(parse_role(name))] = true;
                            cur.clear();
                          } else {
                            cur += ch;
                          }
                        }
                        c.mappo.trainable = t;
                        c.trainable_explicit = true;
                      }};
    for (const auto& [key, value] : WorldConfig{}.to_map()) {
      f["world." + key] = {[key = key](const RunConfig& c) { return c.world.to_map().at(key); },
                           [key = key](RunConfig& c, const std::string&, const std::string& v) {
                             c.world.set(key, v);
                           }};
    }
    f["model.width"] = size_field(&RunConfig::backbone, &BackboneConfig::width);
    f["model.layers"] = size_field(&RunConfig::backbone, &BackboneConfig::layers);
    f["model.heads"] = size_field(&RunConfig::backbone, &BackboneConfig::heads);
    f["model.context"] = size_field(&RunConfig::backbone, &BackboneConfig::context);
    f["model.activation"] = {
        [](const RunConfig& c) {
          return std::string(c.backbone.activation == Activation::kGelu ? "gelu" : "relu");
        },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "gelu") {
            c.backbone.activation = Activation::kGelu;
          } else if (v == "relu") {
            c.backbone.activation = Activation::kRelu;
          } else {
            throw ConfigError("invalid value for " + k + ": '" + v + "' (expected gelu/relu)");
          }
        }};
    f["sft.epochs"] = size_field(&RunConfig::sft, &SftConfig::epochs);
    f["sft.batch_size"] = size_field(&RunConfig::sft, &SftConfig::batch_size);
    f["sft.lr"] = double_field(&RunConfig::sft, &SftConfig::lr);
    f["sft.max_grad_norm"] = double_field(&RunConfig::sft, &SftConfig::max_grad_norm);
    f["sft.full_context_generator"] = {
        [](const RunConfig& c) { return std::string(c.sft_full_context_generator ? "true" : "false"); },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.sft_full_context_generator = to_bool(k, v);
        }};
    f["pipeline.k"] = pipeline_size(&PipelineOptions::k);
    f["pipeline.qr_max_tokens"] = pipeline_size(&PipelineOptions::qr_max_tokens);
    f["pipeline.s_max_tokens"] = pipeline_size(&PipelineOptions::s_max_tokens);
    f["pipeline.g_max_tokens"] = pipeline_size(&PipelineOptions::g_max_tokens);
    f["pipeline.max_answer_tokens"] = pipeline_size(&PipelineOptions::max_answer_tokens);
    f["mappo.clip_epsilon"] = double_field(&RunConfig::mappo, &MappoConfig::clip_epsilon);
    f["mappo.alpha"] = double_field(&RunConfig::mappo, &MappoConfig::alpha);
    f["mappo.beta_max"] = double_field(&RunConfig::mappo, &MappoConfig::beta_max);
    f["mappo.beta_min"] = double_field(&RunConfig::mappo, &MappoConfig::beta_min);
    f["mappo.gamma"] = {[](const RunConfig& c) { return format_double(c.mappo.gae.gamma); },
                        [](RunConfig& c, const std::string& k, const std::string& v) {
                          c.mappo.gae.gamma = to_double(k, v);
                        }};
    f["mappo.lambda"] = {[](const RunConfig& c) { return format_double(c.mappo.gae.lambda); },
                         [](RunConfig& c, const std::string& k, const std::string& v) {
                           c.mappo.gae.lambda = to_double(k, v);
                         }};
    f["mappo.buffer_size"] = size_field(&RunConfig::mappo, &MappoConfig::buffer_size);
    f["mappo.batches"] = size_field(&RunConfig::mappo, &MappoConfig::batches);
    f["mappo.update_epochs"] = size_field(&RunConfig::mappo, &MappoConfig::update_epochs);
    f["mappo.minibatch_size"] = size_field(&RunConfig::mappo, &MappoConfig::minibatch_size);
    f["mappo.actor_lr"] = double_field(&RunConfig::mappo, &MappoConfig::actor_lr);
    f["mappo.critic_lr"] = double_field(&RunConfig::mappo, &MappoConfig::critic_lr);
    f["mappo.top_p"] = double_field(&RunConfig::mappo, &MappoConfig::top_p);
    f["mappo.value_target"] = {
        [](const RunConfig& c) {
          return std::string(c.mappo.value_target == ValueTarget::kReturn ? "return" : "gae");
        },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "return") {
            c.mappo.value_target = ValueTarget::kReturn;
          } else if (v == "gae") {
            c.mappo.value_target = ValueTarget::kGae;
          } else {
            throw ConfigError("invalid value for " + k + ": '" + v + "' (expected return/gae)");
          }
        }};
    f["mappo.per_token_kl"] = bool_field(&RunConfig::mappo, &MappoConfig::per_token_kl);
    f["mappo.whiten_advantages"] = bool_field(&RunConfig::mappo, &MappoConfig::whiten_advantages);
    f["mappo.max_grad_norm"] = double_field(&RunConfig::mappo, &MappoConfig::max_grad_norm);
    f["mappo.probe_size"] = size_field(&RunConfig::mappo, &MappoConfig::probe_size);
    f["mappo.checkpoint_every"] = size_field(&RunConfig::mappo, &MappoConfig::checkpoint_every);
    return f;
  }();
  return kFields;
}

}  // namespace

std::string trainable_string(const std::array<bool, kRoleCount>& trainable) {
  std::string out;
  for (Role r : {Role::kQueryRewriter, Role::kSelector, Role::kGenerator}) {
    if (!trainable[static_cast<std::size_t>(r)]) continue;
    if (!out.empty()) out += ',';
    out += role_name(r);
  }
  return out;
}

RunConfig::RunConfig() = default;

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown config key: " + key);
  it->second.set(*this, key, value);
}

std::string RunConfig::get(const std::string& key) const {
  auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown config key: " + key);
  return it->second.get(*this);
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> kKeys = [] {
    std::vector<std::string> out;
    for (const auto& [k, f] : fields()) out.push_back(k);
    return out;
  }();
  return kKeys;
}

void RunConfig::finalize() {
  world.validate();
  mappo.seed = seed;
  mappo.pipeline.context = backbone.context;
  if (!trainable_explicit) {
    for (std::size_t r = 0; r < kRoleCount; ++r) {
      mappo.trainable[r] = has_role(mappo.pipeline.modules, static_cast<Role>(r));
    }
  }
  for (Role r : {Role::kQueryRewriter, Role::kSelector, Role::kGenerator}) {
    if (mappo.is_trainable(r) && !has_role(mappo.pipeline.modules, r)) {
      throw ConfigError("trainable agent " + role_name(r) + " is not part of module configuration " +
                        module_config_name(mappo.pipeline.modules));
    }
  }
  if (backbone.width == 0 || backbone.layers == 0 || backbone.heads == 0 ||
      backbone.width % backbone.heads != 0) {
    throw ConfigError("model.width must be a positive multiple of model.heads");
  }
  if (sft.epochs == 0 || sft.batch_size == 0 || !(sft.lr > 0.0)) {
    throw ConfigError("sft.epochs, sft.batch_size and sft.lr must be positive");
  }
  mappo.validate();
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + "=" + f.get(*this) + "\n";
  return out;
}

void apply_config_text(RunConfig& config, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    }
    config.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig config;
  apply_config_text(config, ss.str());
  return config;
}

Network make_initial_actor(const RunConfig& config, std::size_t vocab_size) {
  BackboneConfig bc = config.backbone;
  bc.vocab_size = vocab_size;
  RngStream init = RngStream::derive(config.seed, kInitDomain);
  return Network(bc, HeadKind::kActor, init);
}

RngStream sft_stream(const RunConfig& config) { return RngStream::derive(config.seed, kSftDomain); }

}  // namespace ragmarl
