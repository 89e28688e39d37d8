#include "omlab/array.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "omlab/error.hpp"

namespace omlab {

std::size_t numel(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Array::Array(Shape s, double fill) : shape(std::move(s)), data(numel(shape), fill) {}

Array::Array(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (numel(shape) != data.size()) {
    throw ContractError("Array: shape " + shape_string(shape) + " does not match " +
                        std::to_string(data.size()) + " values");
  }
}

std::size_t Array::dim(std::size_t axis) const {
  if (axis >= shape.size()) throw ContractError("Array::dim: axis out of range");
  return shape[axis];
}

bool Array::all_finite() const noexcept {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

double max_abs_diff(const Array& a, const Array& b) {
  if (a.shape != b.shape) {
    throw ContractError("max_abs_diff: shape " + shape_string(a.shape) + " vs " + shape_string(b.shape));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace omlab
