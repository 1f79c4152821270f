#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ragmarl/tensor.hpp"

namespace ragmarl {

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor m;  // Adam first moment
  Tensor v;  // Adam second moment
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Named parameters with gradients and optimizer moments, kept in insertion
/// order so every traversal is deterministic.
class ParamStore {
 public:
  Param& add(const std::string& name, std::vector<std::size_t> shape);

  bool contains(const std::string& name) const {
    return index_.count(name) != 0;
  }
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;

  std::vector<Param>& params() noexcept { return params_; }
  const std::vector<Param>& params() const noexcept { return params_; }

  std::uint64_t step() const noexcept { return step_; }
  void set_step(std::uint64_t s) noexcept { step_ = s; }

  std::size_t parameter_count() const;
  void zero_grad();
  double grad_norm() const;
  void scale_grad(double factor);

  /// Values only; gradients and moments are zero.
  ParamStore clone_values() const;
  bool values_equal(const ParamStore& other) const;

 private:
  std::vector<Param> params_;
  std::map<std::string, std::size_t> index_;
  std::uint64_t step_ = 0;
};

/// Bias-corrected Adam update; increments the step counter. Throws if any
/// gradient is non-finite, naming the parameter.
void adam_step(ParamStore& store, const AdamConfig& cfg);

/// lr_max * 0.5 * (1 + cos(pi * step / total)), no warmup.
double cosine_lr(double lr_max, std::uint64_t step, std::uint64_t total);

}  // namespace ragmarl
