#include "ragmarl/param_store.hpp"

#include <cmath>
#include <numbers>

namespace ragmarl {

Param& ParamStore::add(const std::string& name, std::vector<std::size_t> shape) {
  if (contains(name)) throw Error("duplicate parameter: " + name);
  Param p;
  p.name = name;
  p.value = Tensor(shape);
  p.grad = Tensor(shape);
  p.m = Tensor(shape);
  p.v = Tensor(std::move(shape));
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return params_.back();
}

Param& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter: " + name);
  return params_[it->second];
}

const Param& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter: " + name);
  return params_[it->second];
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
}

double ParamStore::grad_norm() const {
  double s = 0.0;
  for (const auto& p : params_) {
    for (double g : p.grad.data) s += g * g;
  }
  return std::sqrt(s);
}

void ParamStore::scale_grad(double factor) {
  for (auto& p : params_) {
    for (double& g : p.grad.data) g *= factor;
  }
}

ParamStore ParamStore::clone_values() const {
  ParamStore out;
  for (const auto& p : params_) {
    out.add(p.name, p.value.shape).value = p.value;
  }
  return out;
}

bool ParamStore::values_equal(const ParamStore& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name != other.params_[i].name) return false;
    if (params_[i].value.shape != other.params_[i].value.shape) return false;
    if (params_[i].value.data != other.params_[i].value.data) return false;
  }
  return true;
}

void adam_step(ParamStore& store, const AdamConfig& cfg) {
  for (const auto& p : store.params()) {
    if (!p.grad.all_finite()) {
      throw Error("non-finite gradient in parameter " + p.name);
    }
  }
  const std::uint64_t t = store.step() + 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (auto& p : store.params()) {
    double* w = p.value.data.data();
    const double* g = p.grad.data.data();
    double* m = p.m.data.data();
    double* v = p.v.data.data();
    const std::size_t n = p.value.size();
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      w[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
  store.set_step(t);
}

double cosine_lr(double lr_max, std::uint64_t step, std::uint64_t total) {
  if (total == 0) return lr_max;
  const double frac =
      std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
  return lr_max * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace ragmarl
