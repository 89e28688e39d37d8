#pragma once

// Finite-difference cases shared by the unit tests and the acceptance run.
// Each case maps an input array to a scalar graph; weighting by a fixed random
// array keeps every output coordinate's upstream gradient distinct.

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "generators.hpp"
#include "omlab/gradcheck.hpp"
#include "omlab/losses.hpp"
#include "omlab/ops.hpp"
#include "omlab/ortho_head.hpp"

namespace omlab::gradcases {

struct Case {
  std::string name;
  double tolerance;
  /// Builds (f, x) for one seeded draw.
  std::function<std::pair<ScalarFn, Array>(Rng&)> make;
};

inline void PrintTo(const Case& c, std::ostream* os) { *os << c.name; }

/// Weights bounded away from zero.
inline Array weights(Rng& rng, Shape shape) {
  Array w(std::move(shape));
  for (double& v : w.data) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.5, 1.5);
  return w;
}

inline Node weighted_sum(const Node& y, const Array& w) { return sum(mul(y, Node::constant(w))); }

inline ScalarFn unary(std::function<Node(const Node&)> op, Array w) {
  return [op = std::move(op), w = std::move(w)](const Node& x) { return weighted_sum(op(x), w); };
}

inline std::vector<Case> all_cases() {
  std::vector<Case> cases;
  auto add_case = [&](std::string name, std::function<std::pair<ScalarFn, Array>(Rng&)> make, double tol = 1e-6) {
    cases.push_back({std::move(name), tol, std::move(make)});
  };

  add_case("add", [](Rng& r) {
    const Array c = gen::uniform_array(r, {3, 4});
    return std::pair{unary([c](const Node& x) { return add(x, Node::constant(c)); }, weights(r, {3, 4})),
                     gen::uniform_array(r, {3, 4})};
  });
  add_case("sub", [](Rng& r) {
    const Array c = gen::uniform_array(r, {3, 4});
    return std::pair{unary([c](const Node& x) { return sub(Node::constant(c), x); }, weights(r, {3, 4})),
                     gen::uniform_array(r, {3, 4})};
  });
  add_case("mul", [](Rng& r) {
    const Array c = gen::away_from_zero(r, {3, 4}, 0.3);
    return std::pair{unary([c](const Node& x) { return mul(x, Node::constant(c)); }, weights(r, {3, 4})),
                     gen::uniform_array(r, {3, 4})};
  });
  add_case("mul_self", [](Rng& r) {
    return std::pair{unary([](const Node& x) { return mul(x, x); }, weights(r, {5})), gen::away_from_zero(r, {5}, 0.3)};
  });
  add_case("scale", [](Rng& r) {
    const double s = r.uniform(0.5, 3.0);
    return std::pair{unary([s](const Node& x) { return scale(x, s); }, weights(r, {6})), gen::uniform_array(r, {6})};
  });
  add_case("add_scalar", [](Rng& r) {
    const double s = r.uniform(-2.0, 2.0);
    return std::pair{unary([s](const Node& x) { return add_scalar(x, s); }, weights(r, {6})), gen::uniform_array(r, {6})};
  });
  add_case("relu", [](Rng& r) {
    return std::pair{unary([](const Node& x) { return relu(x); }, weights(r, {8})), gen::away_from_zero(r, {8})};
  });
  add_case("sigmoid", [](Rng& r) {
    return std::pair{unary([](const Node& x) { return sigmoid(x); }, weights(r, {8})), gen::uniform_array(r, {8}, -3, 3)};
  });
  add_case("exp", [](Rng& r) {
    return std::pair{unary([](const Node& x) { return exp(x); }, weights(r, {8})), gen::uniform_array(r, {8}, -2, 2)};
  });
  add_case("log", [](Rng& r) {
    return std::pair{unary([](const Node& x) { return log(x); }, weights(r, {8})), gen::uniform_array(r, {8}, 0.2, 3)};
  });
  add_case("abs", [](Rng& r) {
    return std::pair{unary([](const Node& x) { return abs(x); }, weights(r, {8})), gen::away_from_zero(r, {8})};
  });
  add_case("sum", [](Rng& r) {
    return std::pair{ScalarFn([](const Node& x) { return sum(mul(x, x)); }), gen::uniform_array(r, {2, 3, 2})};
  });
  add_case("mean", [](Rng& r) {
    return std::pair{ScalarFn([](const Node& x) { return mean(mul(x, x)); }), gen::away_from_zero(r, {2, 5}, 0.2)};
  });
  add_case("reshape", [](Rng& r) {
    return std::pair{unary([](const Node& x) { return reshape(x, Shape{4, 3}); }, weights(r, {4, 3})),
                     gen::uniform_array(r, {2, 6})};
  });
  add_case("flatten", [](Rng& r) {
    return std::pair{unary([](const Node& x) { return flatten(x); }, weights(r, {12})), gen::uniform_array(r, {2, 2, 3})};
  });
  add_case("matmul_left", [](Rng& r) {
    const Array b = gen::uniform_array(r, {4, 3});
    return std::pair{unary([b](const Node& x) { return matmul(x, Node::constant(b)); }, weights(r, {2, 3})),
                     gen::uniform_array(r, {2, 4})};
  });
  add_case("matmul_right", [](Rng& r) {
    const Array a = gen::uniform_array(r, {2, 4});
    return std::pair{unary([a](const Node& x) { return matmul(Node::constant(a), x); }, weights(r, {2, 3})),
                     gen::uniform_array(r, {4, 3})};
  });
  add_case("transpose", [](Rng& r) {
    return std::pair{unary([](const Node& x) { return transpose(x); }, weights(r, {3, 2})), gen::uniform_array(r, {2, 3})};
  });
  add_case("conv2d_input", [](Rng& r) {
    const Array k = gen::uniform_array(r, {3, 3, 3, 2});
    return std::pair{unary([k](const Node& x) { return conv2d(x, Node::constant(k), 1, 1); }, weights(r, {3, 5, 5})),
                     gen::uniform_array(r, {2, 5, 5})};
  });
  add_case("conv2d_kernel", [](Rng& r) {
    const Array in = gen::uniform_array(r, {2, 2, 6, 6});
    return std::pair{unary([in](const Node& k) { return conv2d(Node::constant(in), k, 2, 1); }, weights(r, {2, 3, 3, 3})),
                     gen::uniform_array(r, {3, 3, 3, 2})};
  });
  add_case("conv2d_batched_input", [](Rng& r) {
    const Array k = gen::uniform_array(r, {2, 3, 3, 2});
    return std::pair{unary([k](const Node& x) { return conv2d(x, Node::constant(k), 2, 0); }, weights(r, {2, 2, 2, 2})),
                     gen::uniform_array(r, {2, 2, 5, 5})};
  });
  add_case("add_channel_bias", [](Rng& r) {
    const Array in = gen::uniform_array(r, {2, 3, 2, 2});
    return std::pair{unary([in](const Node& b) { return add_channel_bias(Node::constant(in), b); }, weights(r, {2, 3, 2, 2})),
                     gen::uniform_array(r, {3})};
  });
  add_case("add_row_bias", [](Rng& r) {
    const Array in = gen::uniform_array(r, {4, 3});
    return std::pair{unary([in](const Node& b) { return add_row_bias(Node::constant(in), b); }, weights(r, {4, 3})),
                     gen::uniform_array(r, {3})};
  });
  add_case("max_pool2x2", [](Rng& r) {
    // Distinct values per window: a shuffled ramp keeps the argmax stable under the step.
    Array x(Shape{2, 4, 4});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.1 * static_cast<double>(i);
    r.shuffle(std::span<double>(x.data));
    return std::pair{unary([](const Node& v) { return max_pool2x2(v); }, weights(r, {2, 2, 2})), x};
  });
  add_case("global_avg_pool", [](Rng& r) {
    return std::pair{unary([](const Node& x) { return global_avg_pool(x); }, weights(r, {2, 3})),
                     gen::uniform_array(r, {2, 3, 2, 2})};
  });
  add_case("channels_last", [](Rng& r) {
    return std::pair{unary([](const Node& x) { return channels_last(x); }, weights(r, {2, 3, 4})),
                     gen::uniform_array(r, {4, 2, 3})};
  });
  add_case("l2_normalize", [](Rng& r) {
    return std::pair{unary([](const Node& x) { return l2_normalize(x); }, weights(r, {6})), gen::uniform_array(r, {6})};
  });
  add_case("l2_normalize_rows", [](Rng& r) {
    return std::pair{unary([](const Node& x) { return l2_normalize_rows(x); }, weights(r, {3, 5})),
                     gen::uniform_array(r, {3, 5})};
  });
  add_case("gather_rows", [](Rng& r) {
    const std::vector<std::size_t> idx{2, 0, 2, 3};
    return std::pair{unary([idx](const Node& x) { return gather_rows(x, idx); }, weights(r, {4, 3})),
                     gen::uniform_array(r, {4, 3})};
  });
  add_case("om_score", [](Rng& r) {
    const std::uint64_t seed = r.next_u64();
    const OrthoBasis basis = build_orthogonal_basis(seed, 3, 6, 3);
    return std::pair{unary([basis](const Node& x) { return om_score(x, basis).scores; }, weights(r, {2, 3, 3})),
                     gen::uniform_array(r, {6, 2, 3})};
  });
  add_case("linear_score_weights", [](Rng& r) {
    const Array f = gen::uniform_array(r, {4, 2, 2});
    const Array b = gen::uniform_array(r, {3});
    return std::pair{unary([f, b](const Node& w) { return linear_score(Node::constant(f), w, Node::constant(b)); },
                           weights(r, {2, 2, 3})),
                     gen::uniform_array(r, {3, 4})};
  });
  add_case("linear_score_bias", [](Rng& r) {
    const Array f = gen::uniform_array(r, {4, 2, 2});
    const Array w = gen::uniform_array(r, {3, 4});
    return std::pair{unary([f, w](const Node& b) { return linear_score(Node::constant(f), Node::constant(w), b); },
                           weights(r, {2, 2, 3})),
                     gen::uniform_array(r, {3})};
  });
  add_case("composite_conv_normalize_cosine_focal", [](Rng& r) {
    const Array img = gen::uniform_array(r, {2, 4, 4});
    const OrthoBasis basis = build_orthogonal_basis(r.next_u64(), 3, 5, 3);
    Array targets(Shape{16, 3});
    for (std::size_t i = 0; i < 16; i += 3) targets[i * 3 + static_cast<std::size_t>(r.uniform_int(0, 2))] = 1.0;
    ScalarFn f = [img, basis, targets](const Node& k) {
      const Node feats = conv2d(Node::constant(img), k, 1, 1);
      const Node rows = reshape(channels_last(feats), Shape{16, 5});
      return sigmoid_focal_loss(om_score_rows(rows, basis, 4.0), targets).value;
    };
    return std::pair{f, gen::uniform_array(r, {5, 3, 3, 2})};
  });

  // Losses.
  add_case("sigmoid_focal_loss", [](Rng& r) {
    Array t(Shape{6, 4});
    for (std::size_t i = 0; i < 6; i += 2) t[i * 4 + static_cast<std::size_t>(r.uniform_int(0, 3))] = 1.0;
    return std::pair{ScalarFn([t](const Node& x) { return sigmoid_focal_loss(x, t).value; }),
                     gen::uniform_array(r, {6, 4}, -3, 3)};
  });
  add_case("softmax_cross_entropy", [](Rng& r) {
    std::vector<int> labels;
    for (int i = 0; i < 5; ++i) labels.push_back(static_cast<int>(r.uniform_int(0, 3)));
    return std::pair{ScalarFn([labels](const Node& x) { return softmax_cross_entropy(x, labels).value; }),
                     gen::uniform_array(r, {5, 4}, -3, 3)};
  });
  add_case("opl_loss", [](Rng& r) {
    const std::vector<int> labels{0, 1, 0, 2, 1, 2};
    return std::pair{ScalarFn([labels](const Node& x) { return opl_loss(x, labels).value; }),
                     gen::uniform_array(r, {6, 4})};
  });
  add_case(
      "giou_loss",
      [](Rng& r) {
        Array gt(Shape{4, 4}), pred(Shape{4, 4});
        for (std::size_t i = 0; i < 4; ++i) {
          const Box g = gen::random_box(r, 32.0, 4.0, 12.0);
          // Partially overlapping prediction, corners offset so no edge coincides.
          const Box p{g.x1 + r.uniform(-3, 3), g.y1 + r.uniform(-3, 3), g.x2 + r.uniform(-3, 3), g.y2 + r.uniform(-3, 3)};
          const auto ga = g.as_array(), pa = p.as_array();
          std::copy(ga.begin(), ga.end(), gt.data.begin() + static_cast<std::ptrdiff_t>(i * 4));
          std::copy(pa.begin(), pa.end(), pred.data.begin() + static_cast<std::ptrdiff_t>(i * 4));
        }
        return std::pair{ScalarFn([gt](const Node& x) { return giou_loss(x, gt).value; }), pred};
      },
      1e-5);
  add_case("centerness_loss", [](Rng& r) {
    std::vector<double> t;
    for (int i = 0; i < 7; ++i) t.push_back(r.uniform());
    return std::pair{ScalarFn([t](const Node& x) { return centerness_loss(x, t).value; }),
                     gen::uniform_array(r, {7}, -3, 3)};
  });
  return cases;
}

}  // namespace omlab::gradcases
