#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace omlab {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

/// Dense row-major float64 array. A scalar has an empty shape.
struct Array {
  Shape shape;
  std::vector<double> data;

  Array() : data(1, 0.0) {}
  explicit Array(Shape s, double fill = 0.0);
  Array(Shape s, std::vector<double> values);

  static Array scalar(double v) { return Array(Shape{}, std::vector<double>{v}); }

  std::size_t size() const noexcept { return data.size(); }
  std::size_t rank() const noexcept { return shape.size(); }
  std::size_t dim(std::size_t axis) const;

  double& operator[](std::size_t i) noexcept { return data[i]; }
  double operator[](std::size_t i) const noexcept { return data[i]; }

  std::span<double> span() noexcept { return data; }
  std::span<const double> span() const noexcept { return data; }

  bool all_finite() const noexcept;

  friend bool operator==(const Array&, const Array&) = default;
};

/// Maximum absolute elementwise difference; shapes must match.
double max_abs_diff(const Array& a, const Array& b);

}  // namespace omlab
