#pragma once

#include <functional>

#include "omlab/node.hpp"

namespace omlab {

inline constexpr double kRelativeFloor = 1e-3;

using ScalarFn = std::function<Node(const Node&)>;

/// Compares reverse-mode gradients of `f` at `x` against central differences.
/// Returns max_i |analytic_i - numeric_i| / max(|analytic_i|, floor), where
/// floor = max(kRelativeFloor * max_j |analytic_j|, 1e-8).
double finite_diff_check(const ScalarFn& f, const Array& x, double step = 1e-5);

/// Analytic gradient of f at x.
Array analytic_gradient(const ScalarFn& f, const Array& x);
/// Central-difference gradient of f at x.
Array numeric_gradient(const ScalarFn& f, const Array& x, double step);

}  // namespace omlab
