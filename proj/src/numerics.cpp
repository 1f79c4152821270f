#include "ragmarl/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ragmarl/error.hpp"

namespace ragmarl {

std::vector<double> masked_softmax(std::span<const double> logits,
                                   const std::vector<bool>& mask) {
  if (!mask.empty() && mask.size() != logits.size()) {
    throw Error("mask size does not match logits");
  }
  auto allowed = [&](std::size_t i) { return mask.empty() || mask[i]; };
  double max_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!allowed(i)) continue;
    if (std::isnan(logits[i]) || logits[i] == std::numeric_limits<double>::infinity()) {
      throw Error("non-finite logit at index " + std::to_string(i));
    }
    max_logit = std::max(max_logit, logits[i]);
  }
  if (max_logit == -std::numeric_limits<double>::infinity()) {
    throw Error("empty action set");
  }
  std::vector<double> probs(logits.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (allowed(i)) {
      probs[i] = std::exp(logits[i] - max_logit);
      total += probs[i];
    }
  }
  for (double& p : probs) p /= total;
  return probs;
}

std::vector<double> softmax(std::span<const double> logits) {
  return masked_softmax(logits, {});
}

double log_softmax_at(std::span<const double> logits, std::size_t index,
                      const std::vector<bool>& mask) {
  if (!mask.empty() && !mask[index]) {
    return -std::numeric_limits<double>::infinity();
  }
  double max_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (mask.empty() || mask[i]) max_logit = std::max(max_logit, logits[i]);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (mask.empty() || mask[i]) total += std::exp(logits[i] - max_logit);
  }
  return logits[index] - max_logit - std::log(total);
}

std::size_t sample_categorical(std::span<const double> probs, RngStream& rng) {
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw Error("negative or NaN probability");
    total += p;
  }
  if (probs.empty() || std::abs(total - 1.0) > 1e-9) {
    throw Error("probabilities do not sum to 1");
  }
  const double u = rng.uniform() * total;
  double cum = 0.0;
  std::size_t last_nonzero = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    cum += probs[i];
    last_nonzero = i;
    if (u < cum) return i;
  }
  return last_nonzero;
}

GradCheckReport finite_difference_check(
    const std::function<double(const ParamStore&)>& forward, ParamStore& store,
    const GradCheckOptions& options) {
  GradCheckReport report;
  for (auto& p : store.params()) {
    GradCheckEntry entry;
    entry.name = p.name;
    const std::size_t n = p.value.size();
    std::size_t stride = 1;
    if (options.max_elements_per_param > 0 && n > options.max_elements_per_param) {
      stride = (n + options.max_elements_per_param - 1) /
               options.max_elements_per_param;
    }
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = p.value[i];
      p.value[i] = saved + options.step;
      const double up = forward(store);
      p.value[i] = saved - options.step;
      const double down = forward(store);
      p.value[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double analytic = p.grad[i];
      const double denom =
          std::max(std::abs(analytic) + std::abs(numeric), options.floor);
      entry.max_rel_error =
          std::max(entry.max_rel_error, std::abs(analytic - numeric) / denom);
    }
    entry.pass = entry.max_rel_error <= options.tolerance;
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.pass = report.pass && entry.pass;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace ragmarl
