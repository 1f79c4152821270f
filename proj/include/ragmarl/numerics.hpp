#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ragmarl/param_store.hpp"
#include "ragmarl/rng.hpp"

namespace ragmarl {

/// Softmax restricted to entries whose mask is true; masked entries get
/// exactly 0. Throws "empty action set" when nothing is allowed and names
/// the index of any NaN or +inf logit among the allowed entries.
std::vector<double> masked_softmax(std::span<const double> logits,
                                   const std::vector<bool>& mask);

/// Unmasked softmax.
std::vector<double> softmax(std::span<const double> logits);

/// log of the (masked) softmax probability of `index`. An empty mask means
/// every entry is allowed.
double log_softmax_at(std::span<const double> logits, std::size_t index,
                      const std::vector<bool>& mask = {});

/// Draws an index with probability probs[i]. Consumes exactly one uniform
/// draw from `rng` (inverse-CDF lookup). Throws if the probabilities do not
/// sum to 1 within 1e-9 or contain negative entries.
std::size_t sample_categorical(std::span<const double> probs, RngStream& rng);

/// Per-parameter result of a gradient check. Relative error is the symmetric
/// form |analytic - numeric| / max(|analytic| + |numeric|, floor), so a
/// gradient off by a factor of two reports 1/3.
struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool pass = true;
};

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  // Parameters whose true gradient is exactly zero (the attention key bias)
  // leave only roundoff near 1e-10 in the numeric estimate; the floor keeps
  // that from reading as a relative error.
  double floor = 1e-5;
  // Check at most this many elements per parameter (0 = all). Elements are
  // picked with a stride so the choice is deterministic.
  std::size_t max_elements_per_param = 0;
};

/// Central-difference check of the gradients already stored in `store`
/// against `forward`, which must evaluate the scalar loss at the store's
/// current values. Values are restored afterwards.
GradCheckReport finite_difference_check(
    const std::function<double(const ParamStore&)>& forward, ParamStore& store,
    const GradCheckOptions& options = {});

}  // namespace ragmarl
