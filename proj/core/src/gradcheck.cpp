#include "omlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "omlab/error.hpp"

namespace omlab {

Array analytic_gradient(const ScalarFn& f, const Array& x) {
  Node leaf = Node::parameter(x);
  Node out = f(leaf);
  backward(out);
  return leaf.grad();
}

Array numeric_gradient(const ScalarFn& f, const Array& x, double step) {
  if (!(step > 0.0)) throw ContractError("numeric_gradient: step must be positive");
  NoGradGuard guard;
  Array grad(x.shape);
  Array probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    const double up = f(Node::constant(probe)).item();
    probe[i] = x[i] - step;
    const double down = f(Node::constant(probe)).item();
    probe[i] = x[i];
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

double finite_diff_check(const ScalarFn& f, const Array& x, double step) {
  const Array analytic = analytic_gradient(f, x);
  const Array numeric = numeric_gradient(f, x, step);
  double largest = 0.0;
  for (double g : analytic.data) largest = std::max(largest, std::abs(g));
  // Entries far below the gradient's scale are compared against that scale;
  // for them the difference quotient is dominated by rounding in f.
  const double floor = std::max(kRelativeFloor * largest, 1e-8);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double err = std::abs(analytic[i] - numeric[i]) / std::max(std::abs(analytic[i]), floor);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace omlab
