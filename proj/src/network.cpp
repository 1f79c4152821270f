#include "ragmarl/network.hpp"

#include <cmath>
#include <numbers>

#include "ragmarl/error.hpp"

namespace ragmarl {
namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInitStd = 0.02;

std::string layer_name(std::size_t l, const char* suffix) {
  return "l" + std::to_string(l) + "." + suffix;
}

// y[t, :] = b + x[t, :] W  for W of shape din x dout.
void linear_forward(const double* x, std::size_t rows, std::size_t din,
                    const double* w, const double* b, std::size_t dout,
                    double* y) {
  for (std::size_t t = 0; t < rows; ++t) {
    double* yr = y + t * dout;
    for (std::size_t j = 0; j < dout; ++j) yr[j] = b[j];
    const double* xr = x + t * din;
    for (std::size_t k = 0; k < din; ++k) {
      const double xv = xr[k];
      const double* wr = w + k * dout;
      for (std::size_t j = 0; j < dout; ++j) yr[j] += xv * wr[j];
    }
  }
}

// Accumulates dW, db and (when dx is non-null) dx for linear_forward.
void linear_backward(const double* x, std::size_t rows, std::size_t din,
                     const double* w, std::size_t dout, const double* dy,
                     double* dx, double* dw, double* db) {
  for (std::size_t t = 0; t < rows; ++t) {
    const double* dyr = dy + t * dout;
    for (std::size_t j = 0; j < dout; ++j) db[j] += dyr[j];
    const double* xr = x + t * din;
    for (std::size_t k = 0; k < din; ++k) {
      const double xv = xr[k];
      const double* wr = w + k * dout;
      double* dwr = dw + k * dout;
      double s = 0.0;
      for (std::size_t j = 0; j < dout; ++j) {
        s += wr[j] * dyr[j];
        dwr[j] += xv * dyr[j];
      }
      if (dx) dx[t * din + k] += s;
    }
  }
}

void layernorm_forward(const double* x, std::size_t rows, std::size_t d,
                       const double* g, const double* b, double* hat,
                       double* rstd, double* out) {
  for (std::size_t t = 0; t < rows; ++t) {
    const double* xr = x + t * d;
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += xr[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + kLnEps);
    rstd[t] = rs;
    for (std::size_t i = 0; i < d; ++i) {
      const double h = (xr[i] - mean) * rs;
      hat[t * d + i] = h;
      out[t * d + i] = h * g[i] + b[i];
    }
  }
}

// dx (accumulated) from dy through the layer norm.
void layernorm_backward(const double* hat, const double* rstd, std::size_t rows,
                        std::size_t d, const double* g, const double* dy,
                        double* dx, double* dg, double* db) {
  std::vector<double> dhat(d);
  for (std::size_t t = 0; t < rows; ++t) {
    const double* dyr = dy + t * d;
    const double* hr = hat + t * d;
    double mean_dhat = 0.0;
    double mean_dhat_hat = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      dg[i] += dyr[i] * hr[i];
      db[i] += dyr[i];
      dhat[i] = dyr[i] * g[i];
      mean_dhat += dhat[i];
      mean_dhat_hat += dhat[i] * hr[i];
    }
    mean_dhat /= static_cast<double>(d);
    mean_dhat_hat /= static_cast<double>(d);
    for (std::size_t i = 0; i < d; ++i) {
      dx[t * d + i] += rstd[t] * (dhat[i] - mean_dhat - hr[i] * mean_dhat_hat);
    }
  }
}

double activate(Activation a, double x) {
  if (a == Activation::kRelu) return x > 0.0 ? x : 0.0;
  return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
}

double activate_grad(Activation a, double x) {
  if (a == Activation::kRelu) return x > 0.0 ? 1.0 : 0.0;
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

}  // namespace

void BackboneConfig::validate() const {
  if (vocab_size == 0) throw ConfigError("vocab_size must be positive");
  if (width == 0 || layers == 0 || heads == 0 || context == 0) {
    throw ConfigError("backbone dimensions must be positive");
  }
  if (width % heads != 0) {
    throw ConfigError("width " + std::to_string(width) +
                      " is not divisible by heads " + std::to_string(heads));
  }
}

Network::Network(const BackboneConfig& config, HeadKind head)
    : config_(config), head_(head) {
  config_.validate();
  build();
}

Network::Network(const BackboneConfig& config, HeadKind head, RngStream& rng)
    : Network(config, head) {
  init(rng);
}

void Network::build() {
  const std::size_t d = config_.width;
  store_.add("tok_emb", {config_.vocab_size, d});
  store_.add("pos_emb", {config_.context, d});
  for (std::size_t l = 0; l < config_.layers; ++l) {
    store_.add(layer_name(l, "ln1.g"), {d});
    store_.add(layer_name(l, "ln1.b"), {d});
    store_.add(layer_name(l, "attn.wqkv"), {d, 3 * d});
    store_.add(layer_name(l, "attn.bqkv"), {3 * d});
    store_.add(layer_name(l, "attn.wo"), {d, d});
    store_.add(layer_name(l, "attn.bo"), {d});
    store_.add(layer_name(l, "ln2.g"), {d});
    store_.add(layer_name(l, "ln2.b"), {d});
    store_.add(layer_name(l, "mlp.w1"), {d, 4 * d});
    store_.add(layer_name(l, "mlp.b1"), {4 * d});
    store_.add(layer_name(l, "mlp.w2"), {4 * d, d});
    store_.add(layer_name(l, "mlp.b2"), {d});
  }
  store_.add("lnf.g", {d});
  store_.add("lnf.b", {d});
  store_.add("head.w", {d, output_dim()});
  store_.add("head.b", {output_dim()});
}

void Network::init(RngStream& rng) {
  const double resid_std =
      kInitStd / std::sqrt(2.0 * static_cast<double>(config_.layers));
  for (auto& p : store_.params()) {
    const auto& n = p.name;
    const bool is_gain = n.ends_with(".g");
    const bool is_bias = n.ends_with(".b") || n.ends_with("bqkv") ||
                         n.ends_with("bo") || n.ends_with("b1") ||
                         n.ends_with("b2");
    if (is_gain) {
      std::fill(p.value.data.begin(), p.value.data.end(), 1.0);
    } else if (is_bias) {
      std::fill(p.value.data.begin(), p.value.data.end(), 0.0);
    } else {
      const bool resid = n.ends_with("attn.wo") || n.ends_with("mlp.w2");
      const double sd = resid ? resid_std : kInitStd;
      for (double& x : p.value.data) x = sd * rng.normal();
    }
  }
}

void Network::forward(std::span<const int> tokens, ForwardCache& cache) const {
  const std::size_t T = tokens.size();
  const std::size_t d = config_.width;
  const std::size_t H = config_.heads;
  const std::size_t dh = d / H;
  if (T == 0) throw Error("forward on empty sequence");
  if (T > config_.context) {
    throw Error("sequence length " + std::to_string(T) +
                " exceeds context length " + std::to_string(config_.context));
  }
  for (int tok : tokens) {
    if (tok < 0 || static_cast<std::size_t>(tok) >= config_.vocab_size) {
      throw Error("token id " + std::to_string(tok) + " out of range");
    }
  }

  cache.tokens.assign(tokens.begin(), tokens.end());
  cache.length = T;
  cache.layers.resize(config_.layers);

  const double* tok_emb = store_.at("tok_emb").value.data.data();
  const double* pos_emb = store_.at("pos_emb").value.data.data();
  std::vector<double> x(T * d);
  for (std::size_t t = 0; t < T; ++t) {
    const double* te = tok_emb + static_cast<std::size_t>(tokens[t]) * d;
    const double* pe = pos_emb + t * d;
    for (std::size_t i = 0; i < d; ++i) x[t * d + i] = te[i] + pe[i];
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t l = 0; l < config_.layers; ++l) {
    auto& c = cache.layers[l];
    c.x_in = x;
    c.ln1_hat.resize(T * d);
    c.ln1_rstd.resize(T);
    c.ln1_out.resize(T * d);
    layernorm_forward(x.data(), T, d, store_.at(layer_name(l, "ln1.g")).value.data.data(),
                      store_.at(layer_name(l, "ln1.b")).value.data.data(),
                      c.ln1_hat.data(), c.ln1_rstd.data(), c.ln1_out.data());

    c.qkv.resize(T * 3 * d);
    linear_forward(c.ln1_out.data(), T, d,
                   store_.at(layer_name(l, "attn.wqkv")).value.data.data(),
                   store_.at(layer_name(l, "attn.bqkv")).value.data.data(), 3 * d,
                   c.qkv.data());

    c.probs.assign(H * T * T, 0.0);
    c.att.assign(T * d, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t t = 0; t < T; ++t) {
        const double* q = c.qkv.data() + t * 3 * d + h * dh;
        double* p = c.probs.data() + (h * T + t) * T;
        double mx = -INFINITY;
        for (std::size_t s = 0; s <= t; ++s) {
          const double* k = c.qkv.data() + s * 3 * d + d + h * dh;
          double dot = 0.0;
          for (std::size_t i = 0; i < dh; ++i) dot += q[i] * k[i];
          p[s] = dot * scale;
          mx = std::max(mx, p[s]);
        }
        double sum = 0.0;
        for (std::size_t s = 0; s <= t; ++s) {
          p[s] = std::exp(p[s] - mx);
          sum += p[s];
        }
        double* out = c.att.data() + t * d + h * dh;
        for (std::size_t s = 0; s <= t; ++s) {
          p[s] /= sum;
          const double* v = c.qkv.data() + s * 3 * d + 2 * d + h * dh;
          for (std::size_t i = 0; i < dh; ++i) out[i] += p[s] * v[i];
        }
      }
    }

    c.mid.resize(T * d);
    linear_forward(c.att.data(), T, d,
                   store_.at(layer_name(l, "attn.wo")).value.data.data(),
                   store_.at(layer_name(l, "attn.bo")).value.data.data(), d,
                   c.mid.data());
    for (std::size_t i = 0; i < T * d; ++i) c.mid[i] += x[i];

    c.ln2_hat.resize(T * d);
    c.ln2_rstd.resize(T);
    c.ln2_out.resize(T * d);
    layernorm_forward(c.mid.data(), T, d, store_.at(layer_name(l, "ln2.g")).value.data.data(),
                      store_.at(layer_name(l, "ln2.b")).value.data.data(),
                      c.ln2_hat.data(), c.ln2_rstd.data(), c.ln2_out.data());

    c.ff_pre.resize(T * 4 * d);
    linear_forward(c.ln2_out.data(), T, d,
                   store_.at(layer_name(l, "mlp.w1")).value.data.data(),
                   store_.at(layer_name(l, "mlp.b1")).value.data.data(), 4 * d,
                   c.ff_pre.data());
    c.ff_act.resize(T * 4 * d);
    for (std::size_t i = 0; i < T * 4 * d; ++i) {
      c.ff_act[i] = activate(config_.activation, c.ff_pre[i]);
    }
    linear_forward(c.ff_act.data(), T, 4 * d,
                   store_.at(layer_name(l, "mlp.w2")).value.data.data(),
                   store_.at(layer_name(l, "mlp.b2")).value.data.data(), d, x.data());
    for (std::size_t i = 0; i < T * d; ++i) x[i] += c.mid[i];
  }

  cache.x_final = x;
  cache.lnf_hat.resize(T * d);
  cache.lnf_rstd.resize(T);
  cache.hidden.resize(T * d);
  layernorm_forward(x.data(), T, d, store_.at("lnf.g").value.data.data(),
                    store_.at("lnf.b").value.data.data(), cache.lnf_hat.data(),
                    cache.lnf_rstd.data(), cache.hidden.data());
}

void Network::head_at(const ForwardCache& cache, std::size_t pos,
                      std::span<double> out) const {
  if (pos >= cache.length) throw Error("head position out of range");
  const std::size_t od = output_dim();
  if (out.size() != od) throw Error("head output buffer has wrong size");
  linear_forward(cache.hidden.data() + pos * config_.width, 1, config_.width,
                 store_.at("head.w").value.data.data(),
                 store_.at("head.b").value.data.data(), od, out.data());
}

Tensor Network::outputs(std::span<const int> tokens) const {
  ForwardCache cache;
  forward(tokens, cache);
  const std::size_t od = output_dim();
  Tensor out({tokens.size(), od});
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    head_at(cache, t, std::span<double>(out.data.data() + t * od, od));
  }
  return out;
}

void Network::backward(const ForwardCache& cache,
                       std::span<const std::size_t> positions,
                       std::span<const double> d_out) {
  const std::size_t T = cache.length;
  const std::size_t d = config_.width;
  const std::size_t H = config_.heads;
  const std::size_t dh = d / H;
  const std::size_t od = output_dim();
  if (d_out.size() != positions.size() * od) {
    throw Error("backward: gradient buffer has wrong size");
  }

  std::vector<double> d_hidden(T * d, 0.0);
  {
    auto& w = store_.at("head.w");
    auto& b = store_.at("head.b");
    for (std::size_t r = 0; r < positions.size(); ++r) {
      const std::size_t pos = positions[r];
      if (pos >= T) throw Error("backward position out of range");
      linear_backward(cache.hidden.data() + pos * d, 1, d, w.value.data.data(), od,
                      d_out.data() + r * od, d_hidden.data() + pos * d,
                      w.grad.data.data(), b.grad.data.data());
    }
  }

  std::vector<double> dx(T * d, 0.0);
  layernorm_backward(cache.lnf_hat.data(), cache.lnf_rstd.data(), T, d,
                     store_.at("lnf.g").value.data.data(), d_hidden.data(), dx.data(),
                     store_.at("lnf.g").grad.data.data(),
                     store_.at("lnf.b").grad.data.data());

  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t li = config_.layers; li-- > 0;) {
    const auto& c = cache.layers[li];
    auto& w1 = store_.at(layer_name(li, "mlp.w1"));
    auto& b1 = store_.at(layer_name(li, "mlp.b1"));
    auto& w2 = store_.at(layer_name(li, "mlp.w2"));
    auto& b2 = store_.at(layer_name(li, "mlp.b2"));

    // x_out = mid + mlp(ln2(mid))
    std::vector<double> d_mid = dx;
    std::vector<double> d_act(T * 4 * d, 0.0);
    linear_backward(c.ff_act.data(), T, 4 * d, w2.value.data.data(), d, dx.data(),
                    d_act.data(), w2.grad.data.data(), b2.grad.data.data());
    for (std::size_t i = 0; i < T * 4 * d; ++i) {
      d_act[i] *= activate_grad(config_.activation, c.ff_pre[i]);
    }
    std::vector<double> d_ln2(T * d, 0.0);
    linear_backward(c.ln2_out.data(), T, d, w1.value.data.data(), 4 * d,
                    d_act.data(), d_ln2.data(), w1.grad.data.data(),
                    b1.grad.data.data());
    auto& g2 = store_.at(layer_name(li, "ln2.g"));
    layernorm_backward(c.ln2_hat.data(), c.ln2_rstd.data(), T, d,
                       g2.value.data.data(), d_ln2.data(), d_mid.data(),
                       g2.grad.data.data(),
                       store_.at(layer_name(li, "ln2.b")).grad.data.data());

    // mid = x_in + attn(ln1(x_in))
    auto& wo = store_.at(layer_name(li, "attn.wo"));
    auto& bo = store_.at(layer_name(li, "attn.bo"));
    std::vector<double> d_att(T * d, 0.0);
    linear_backward(c.att.data(), T, d, wo.value.data.data(), d, d_mid.data(),
                    d_att.data(), wo.grad.data.data(), bo.grad.data.data());

    std::vector<double> d_qkv(T * 3 * d, 0.0);
    std::vector<double> dp(T);
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t t = 0; t < T; ++t) {
        const double* p = c.probs.data() + (h * T + t) * T;
        const double* da = d_att.data() + t * d + h * dh;
        double dot_pd = 0.0;
        for (std::size_t s = 0; s <= t; ++s) {
          const double* v = c.qkv.data() + s * 3 * d + 2 * d + h * dh;
          double* dv = d_qkv.data() + s * 3 * d + 2 * d + h * dh;
          double acc = 0.0;
          for (std::size_t i = 0; i < dh; ++i) {
            acc += da[i] * v[i];
            dv[i] += p[s] * da[i];
          }
          dp[s] = acc;
          dot_pd += p[s] * acc;
        }
        const double* q = c.qkv.data() + t * 3 * d + h * dh;
        double* dq = d_qkv.data() + t * 3 * d + h * dh;
        for (std::size_t s = 0; s <= t; ++s) {
          const double ds = p[s] * (dp[s] - dot_pd) * scale;
          const double* k = c.qkv.data() + s * 3 * d + d + h * dh;
          double* dk = d_qkv.data() + s * 3 * d + d + h * dh;
          for (std::size_t i = 0; i < dh; ++i) {
            dq[i] += ds * k[i];
            dk[i] += ds * q[i];
          }
        }
      }
    }

    auto& wqkv = store_.at(layer_name(li, "attn.wqkv"));
    auto& bqkv = store_.at(layer_name(li, "attn.bqkv"));
    std::vector<double> d_ln1(T * d, 0.0);
    linear_backward(c.ln1_out.data(), T, d, wqkv.value.data.data(), 3 * d,
                    d_qkv.data(), d_ln1.data(), wqkv.grad.data.data(),
                    bqkv.grad.data.data());
    dx = d_mid;
    auto& g1 = store_.at(layer_name(li, "ln1.g"));
    layernorm_backward(c.ln1_hat.data(), c.ln1_rstd.data(), T, d,
                       g1.value.data.data(), d_ln1.data(), dx.data(),
                       g1.grad.data.data(),
                       store_.at(layer_name(li, "ln1.b")).grad.data.data());
  }

  double* d_tok = store_.at("tok_emb").grad.data.data();
  double* d_pos = store_.at("pos_emb").grad.data.data();
  for (std::size_t t = 0; t < T; ++t) {
    double* te = d_tok + static_cast<std::size_t>(cache.tokens[t]) * d;
    double* pe = d_pos + t * d;
    for (std::size_t i = 0; i < d; ++i) {
      te[i] += dx[t * d + i];
      pe[i] += dx[t * d + i];
    }
  }
}

void Network::copy_backbone_from(const Network& other) {
  if (other.config_.width != config_.width ||
      other.config_.layers != config_.layers ||
      other.config_.heads != config_.heads ||
      other.config_.context != config_.context ||
      other.config_.vocab_size != config_.vocab_size) {
    throw Error("copy_backbone_from: backbone configurations differ");
  }
  for (auto& p : store_.params()) {
    if (p.name.rfind("head.", 0) == 0) continue;
    p.value = other.store_.at(p.name).value;
  }
}

void Network::append_to(Checkpoint& ckpt, const std::string& prefix,
                        bool with_moments) const {
  Tensor meta({7});
  meta[0] = static_cast<double>(config_.vocab_size);
  meta[1] = static_cast<double>(config_.width);
  meta[2] = static_cast<double>(config_.layers);
  meta[3] = static_cast<double>(config_.heads);
  meta[4] = static_cast<double>(config_.context);
  meta[5] = config_.activation == Activation::kGelu ? 0.0 : 1.0;
  meta[6] = head_ == HeadKind::kActor ? 0.0 : 1.0;
  ckpt.entries.push_back({prefix + "@config", meta});
  append_store(ckpt, store_, prefix, with_moments);
}

Network Network::from_checkpoint(const Checkpoint& ckpt, const std::string& prefix) {
  const Tensor* meta = ckpt.find(prefix + "@config");
  if (!meta || meta->size() != 7) {
    throw Error("checkpoint has no network configuration under '" + prefix + "'");
  }
  BackboneConfig cfg;
  cfg.vocab_size = static_cast<std::size_t>((*meta)[0]);
  cfg.width = static_cast<std::size_t>((*meta)[1]);
  cfg.layers = static_cast<std::size_t>((*meta)[2]);
  cfg.heads = static_cast<std::size_t>((*meta)[3]);
  cfg.context = static_cast<std::size_t>((*meta)[4]);
  cfg.activation = (*meta)[5] == 0.0 ? Activation::kGelu : Activation::kRelu;
  Network net(cfg, (*meta)[6] == 0.0 ? HeadKind::kActor : HeadKind::kCritic);
  restore_store(ckpt, net.store_, prefix);
  return net;
}

void save_network(const Network& net, const std::filesystem::path& path) {
  Checkpoint ckpt;
  ckpt.step = net.store().step();
  net.append_to(ckpt, "", false);
  save_checkpoint(ckpt, path);
}

Network load_network(const std::filesystem::path& path) {
  return Network::from_checkpoint(load_checkpoint(path), "");
}

}  // namespace ragmarl
