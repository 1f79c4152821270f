#include "ragmarl/tensor.hpp"

#include <cmath>

namespace ragmarl {

bool Tensor::all_finite() const noexcept {
  for (double x : data) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

}  // namespace ragmarl
