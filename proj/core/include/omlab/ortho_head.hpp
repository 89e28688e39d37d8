#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "omlab/node.hpp"

namespace omlab {

inline constexpr double kGramSchmidtTol = 1e-8;
inline constexpr int kMaxBasisDraws = 8;

/// Classical Gram-Schmidt with one re-orthogonalization pass over the rows of
/// [C,N]. Row i of the result spans the same space as input rows 0..i.
/// Throws DegeneracyError when a residual norm drops below `tol`.
Array gram_schmidt(const Array& rows, double tol = kGramSchmidtTol);

/// Frozen orthonormal class prototypes, one row per class.
class OrthoBasis {
 public:
  OrthoBasis(Array rows, std::uint64_t seed, std::size_t kernel_size, int draw_attempt,
             std::optional<Shape> pooled_from);

  const Array& rows() const noexcept { return rows_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t classes() const noexcept { return rows_.shape[0]; }
  std::size_t dim() const noexcept { return rows_.shape[1]; }
  std::size_t kernel_size() const noexcept { return kernel_size_; }
  /// 0 for the first draw; >0 when earlier draws were degenerate.
  int draw_attempt() const noexcept { return draw_attempt_; }
  const std::optional<Shape>& pooled_from() const noexcept { return pooled_from_; }

  /// Unit-normalized prototypes transposed to [N,C], as a gradient-free node.
  const Node& unit_columns() const noexcept { return unit_columns_; }

  nlohmann::json to_json() const;
  static OrthoBasis from_json(const nlohmann::json& j);

 private:
  Array rows_;
  std::uint64_t seed_;
  std::size_t kernel_size_;
  int draw_attempt_;
  std::optional<Shape> pooled_from_;
  Node unit_columns_;
};

/// Supplies the raw kernel [C,k,k,N] for draw `attempt`.
using KernelSampler = std::function<Array(int attempt)>;

/// Seeded standard-normal kernel draw.
Array draw_kernel(std::uint64_t seed, int attempt, std::size_t classes, std::size_t dim, std::size_t k);

/// Mean over the k x k spatial extent of [C,k,k,N] -> [C,N].
Array pool_kernel(const Array& kernel);

OrthoBasis build_orthogonal_basis(std::uint64_t seed, std::size_t classes, std::size_t dim, std::size_t k);
OrthoBasis build_orthogonal_basis(std::uint64_t seed, std::size_t classes, std::size_t dim, std::size_t k,
                                  const KernelSampler& sampler);

/// Per-location cosine scores, [H,W,C] (or [B,H,W,C] for batched input).
struct ScoreMap {
  Node scores;
};

/// Cosine similarity of every location's feature vector against every
/// prototype, times `logit_scale`. features: [N,H,W] or [B,N,H,W].
ScoreMap om_score(const Node& features, const OrthoBasis& basis, double logit_scale = 1.0);

/// Same scoring on pre-flattened rows [M,N] -> [M,C].
Node om_score_rows(const Node& rows, const OrthoBasis& basis, double logit_scale = 1.0);

/// Per-location affine classifier. features [N,H,W] or [B,N,H,W];
/// weights [C,N]; bias [C]. Output [H,W,C] or [B,H,W,C].
Node linear_score(const Node& features, const Node& weights, const Node& bias);
Node linear_score_rows(const Node& rows, const Node& weights, const Node& bias);

void write_basis_json(const OrthoBasis& basis, const std::string& path);

}  // namespace omlab
