#include <cmath>

#include <gtest/gtest.h>

#include "generators.hpp"
#include "omlab/error.hpp"
#include "omlab/ops.hpp"
#include "omlab/ortho_head.hpp"
#include "oracles.hpp"

namespace omlab {
namespace {

double max_gram_error(const Array& q) {
  const std::size_t c = q.shape[0], n = q.shape[1];
  double worst = 0.0;
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      double d = 0.0;
      for (std::size_t t = 0; t < n; ++t) d += q[i * n + t] * q[j * n + t];
      worst = std::max(worst, std::abs(d - (i == j ? 1.0 : 0.0)));
    }
  }
  return worst;
}

/// Residual of the least-squares reconstruction of `row` from the first
/// `count` rows of q, solved through the normal equations.
double span_residual(const Array& q, std::size_t count, std::span<const double> row) {
  const std::size_t n = q.shape[1];
  std::vector<double> g(count * count), rhs(count);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t j = 0; j < count; ++j) {
      for (std::size_t t = 0; t < n; ++t) g[i * count + j] += q[i * n + t] * q[j * n + t];
    }
    for (std::size_t t = 0; t < n; ++t) rhs[i] += q[i * n + t] * row[t];
  }
  // Gaussian elimination (G is close to identity, no pivoting needed).
  for (std::size_t p = 0; p < count; ++p) {
    for (std::size_t r = p + 1; r < count; ++r) {
      const double f = g[r * count + p] / g[p * count + p];
      for (std::size_t c = p; c < count; ++c) g[r * count + c] -= f * g[p * count + c];
      rhs[r] -= f * rhs[p];
    }
  }
  std::vector<double> x(count);
  for (std::size_t p = count; p-- > 0;) {
    double acc = rhs[p];
    for (std::size_t c = p + 1; c < count; ++c) acc -= g[p * count + c] * x[c];
    x[p] = acc / g[p * count + p];
  }
  double res = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    double rec = 0.0;
    for (std::size_t i = 0; i < count; ++i) rec += x[i] * q[i * n + t];
    res += (row[t] - rec) * (row[t] - rec);
  }
  return std::sqrt(res);
}

TEST(GramSchmidt, TwoVectorCase) {
  const Array q = gram_schmidt(Array(Shape{2, 2}, std::vector<double>{2, 0, 1, 1}));
  EXPECT_NEAR(q[0], 1.0, 1e-15);
  EXPECT_NEAR(q[1], 0.0, 1e-15);
  EXPECT_NEAR(q[2], 0.0, 1e-15);
  EXPECT_NEAR(q[3], 1.0, 1e-15);
}

TEST(GramSchmidt, IdentityIsFixedPoint) {
  Array eye(Shape{3, 5});
  for (std::size_t i = 0; i < 3; ++i) eye[i * 5 + i] = 1.0;
  EXPECT_EQ(gram_schmidt(eye), eye);
}

TEST(GramSchmidt, SeededGaussianOrthonormalAndSpanPreserving) {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const Array rows = normal_array(rng, {3, 8});
    const Array q = gram_schmidt(rows);
    EXPECT_LT(max_gram_error(q), 1e-10);
    for (std::size_t i = 0; i < 3; ++i) {
      // Row i is reconstructible from q[0..=i].
      EXPECT_LT(span_residual(q, i + 1, std::span<const double>(rows.data).subspan(i * 8, 8)), 1e-8);
    }
  }
}

TEST(GramSchmidt, DependentRowsAreDegenerate) {
  EXPECT_THROW(gram_schmidt(Array(Shape{2, 3}, std::vector<double>{1, 2, 3, 2, 4, 6})), DegeneracyError);
  EXPECT_THROW(gram_schmidt(Array(Shape{3, 2}, 1.0)), ContractError);
}

TEST(BuildBasis, KernelOneIsPlainGramSchmidt) {
  const OrthoBasis b = build_orthogonal_basis(42, 4, 10, 1);
  Array raw = draw_kernel(42, 0, 4, 10, 1);
  raw.shape = {4, 10};
  EXPECT_EQ(b.rows(), gram_schmidt(raw));
}

TEST(BuildBasis, OrthonormalForSeedSeven) {
  const OrthoBasis b = build_orthogonal_basis(7, 4, 16, 3);
  EXPECT_LT(max_gram_error(b.rows()), 1e-9);
  EXPECT_EQ(b.pooled_from(), (Shape{4, 3, 3, 16}));
}

TEST(BuildBasis, Deterministic) {
  EXPECT_EQ(build_orthogonal_basis(5, 9, 64, 3).rows(), build_orthogonal_basis(5, 9, 64, 3).rows());
  EXPECT_NE(build_orthogonal_basis(5, 9, 64, 3).rows(), build_orthogonal_basis(6, 9, 64, 3).rows());
}

TEST(BuildBasis, RedrawsAfterDegenerateSample) {
  int calls = 0;
  const KernelSampler sampler = [&](int attempt) {
    ++calls;
    if (attempt < 2) return Array(Shape{3, 3, 3, 6}, 1.0);  // every row identical: rank 1
    return draw_kernel(9, attempt, 3, 6, 3);
  };
  const OrthoBasis b = build_orthogonal_basis(9, 3, 6, 3, sampler);
  EXPECT_EQ(calls, 3);
  EXPECT_EQ(b.draw_attempt(), 2);
  EXPECT_LT(max_gram_error(b.rows()), 1e-9);
}

TEST(BuildBasis, GivesUpAfterEightDegenerateDraws) {
  const KernelSampler sampler = [](int) { return Array(Shape{2, 1, 1, 4}, 0.5); };
  EXPECT_THROW(build_orthogonal_basis(1, 2, 4, 1, sampler), DegeneracyError);
}

TEST(BuildBasis, RejectsMoreClassesThanDims) { EXPECT_THROW(build_orthogonal_basis(1, 9, 8, 3), ContractError); }

TEST(BuildBasis, PropertyOrthonormalAcrossSizes) {
  Rng rng(77);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(1, 96));
    const std::size_t c = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(n)));
    const std::size_t k = static_cast<std::size_t>(rng.uniform_int(1, 4));
    const OrthoBasis b = build_orthogonal_basis(rng.next_u64(), c, n, k);
    EXPECT_LT(max_gram_error(b.rows()), 1e-9) << "C=" << c << " N=" << n;
  }
}

TEST(BuildBasis, JsonRoundTripIsExact) {
  const OrthoBasis b = build_orthogonal_basis(3, 5, 12, 3);
  const OrthoBasis back = OrthoBasis::from_json(nlohmann::json::parse(b.to_json().dump()));
  EXPECT_EQ(back.rows(), b.rows());
  EXPECT_EQ(back.seed(), 3u);
  EXPECT_EQ(back.kernel_size(), 3u);
}

OrthoBasis axis_basis(std::size_t c, std::size_t n) {
  Array rows(Shape{c, n});
  for (std::size_t i = 0; i < c; ++i) rows[i * n + i] = 1.0;
  return OrthoBasis(rows, 0, 1, 0, std::nullopt);
}

TEST(OmScore, CosineExtremes) {
  const OrthoBasis b = axis_basis(2, 3);
  // Locations: parallel to v0, orthogonal to v0 (along v1), antiparallel to v0.
  Array f(Shape{3, 1, 3});
  f[0 * 3 + 0] = 2.0;
  f[1 * 3 + 1] = 5.0;
  f[0 * 3 + 2] = -0.5;
  const Array s = om_score(Node::constant(f), b).scores.value();  // [1,3,2]
  EXPECT_DOUBLE_EQ(s[0 * 2 + 0], 1.0);
  EXPECT_DOUBLE_EQ(s[1 * 2 + 0], 0.0);
  EXPECT_DOUBLE_EQ(s[2 * 2 + 0], -1.0);
}

TEST(OmScore, DirectFormula) {
  const OrthoBasis b = axis_basis(1, 4);
  const Array f(Shape{4, 1, 1}, std::vector<double>{3, 4, 0, 0});
  EXPECT_NEAR(om_score(Node::constant(f), b).scores.value()[0], 0.6, 1e-15);
}

TEST(OmScore, MatchesPerLocationOracle) {
  Rng rng(123);
  for (int trial = 0; trial < 5; ++trial) {
    const OrthoBasis b = build_orthogonal_basis(rng.next_u64(), 3, 8, 3);
    const Array f = gen::uniform_array(rng, {8, 4, 4}, -2, 2);
    const Array s = om_score(Node::constant(f), b).scores.value();
    ASSERT_EQ(s.shape, (Shape{4, 4, 3}));
    EXPECT_LT(max_abs_diff(s, oracle::cosine_scores(f, b.rows())), 1e-12);
    for (double v : s.data) {
      EXPECT_GE(v, -1.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(OmScore, ScaleInvariant) {
  Rng rng(4);
  const OrthoBasis b = build_orthogonal_basis(4, 5, 16, 3);
  const Array f = gen::uniform_array(rng, {2, 16, 3, 3});
  const Array base = om_score(Node::constant(f), b).scores.value();
  for (double alpha : {1e-3, 0.1, 7.0, 1e4}) {
    Array g = f;
    for (double& v : g.data) v *= alpha;
    EXPECT_LT(max_abs_diff(om_score(Node::constant(g), b).scores.value(), base), 1e-10) << alpha;
  }
}

TEST(OmScore, DimensionMismatch) {
  const OrthoBasis b = axis_basis(2, 3);
  EXPECT_THROW(om_score(Node::constant(Array(Shape{4, 2, 2})), b), ContractError);
}

TEST(OmScore, GradientDoesNotReachBasis) {
  const OrthoBasis b = build_orthogonal_basis(2, 3, 6, 3);
  const Array before = b.rows();
  const Node f = Node::parameter(Array(Shape{6, 2, 2}, 0.3));
  backward(sum(om_score(f, b).scores));
  EXPECT_FALSE(b.unit_columns().has_grad());
  EXPECT_EQ(b.rows(), before);
  EXPECT_TRUE(f.has_grad());
}

TEST(LinearScore, IdentityWeights) {
  Rng rng(6);
  const Array f = gen::uniform_array(rng, {3, 2, 2});
  Array w(Shape{3, 3});
  for (std::size_t i = 0; i < 3; ++i) w[i * 3 + i] = 1.0;
  const Array s = linear_score(Node::constant(f), Node::constant(w), Node::constant(Array(Shape{3}))).value();
  EXPECT_EQ(s, channels_last(Node::constant(f)).value());
}

TEST(LinearScore, ZeroWeightsGiveBias) {
  const Array bias(Shape{2}, std::vector<double>{0.5, -1.5});
  const Array s =
      linear_score(Node::constant(Array(Shape{4, 3, 3}, 1.0)), Node::constant(Array(Shape{2, 4})), Node::constant(bias))
          .value();
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_EQ(s[i * 2], 0.5);
    EXPECT_EQ(s[i * 2 + 1], -1.5);
  }
}

TEST(LinearScore, MatchesMatrixVectorOracle) {
  Rng rng(10);
  const Array f = gen::uniform_array(rng, {5, 3, 4});
  const Array w = gen::uniform_array(rng, {3, 5});
  const Array b = gen::uniform_array(rng, {3});
  const Array s = linear_score(Node::constant(f), Node::constant(w), Node::constant(b)).value();
  for (std::size_t y = 0; y < 3; ++y) {
    for (std::size_t x = 0; x < 4; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = b[c];
        for (std::size_t n = 0; n < 5; ++n) acc += w[c * 5 + n] * f[(n * 3 + y) * 4 + x];
        EXPECT_NEAR(s[(y * 4 + x) * 3 + c], acc, 1e-12);
      }
    }
  }
}

}  // namespace
}  // namespace omlab
