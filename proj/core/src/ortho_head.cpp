#include "omlab/ortho_head.hpp"

#include <cmath>
#include <fstream>

#include "omlab/error.hpp"
#include "omlab/ops.hpp"
#include "omlab/random.hpp"

namespace omlab {

Array gram_schmidt(const Array& rows, double tol) {
  if (rows.rank() != 2) throw ContractError("gram_schmidt: expected [C,N], got " + shape_string(rows.shape));
  if (!(tol > 0.0)) throw ContractError("gram_schmidt: tol must be positive");
  const std::size_t c = rows.shape[0], n = rows.shape[1];
  if (c > n) {
    throw ContractError("gram_schmidt: " + std::to_string(c) + " rows cannot be orthogonal in dimension " +
                        std::to_string(n));
  }
  Array q(rows.shape);
  std::vector<double> v(n), coeff(c);
  for (std::size_t i = 0; i < c; ++i) {
    std::copy_n(rows.data.data() + i * n, n, v.data());
    for (int pass = 0; pass < 2; ++pass) {
      // Classical: all projections use the same residual.
      for (std::size_t j = 0; j < i; ++j) {
        double dot = 0.0;
        for (std::size_t t = 0; t < n; ++t) dot += q[j * n + t] * v[t];
        coeff[j] = dot;
      }
      for (std::size_t j = 0; j < i; ++j)
        for (std::size_t t = 0; t < n; ++t) v[t] -= coeff[j] * q[j * n + t];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < tol) {
      throw DegeneracyError("gram_schmidt: row " + std::to_string(i) + " is linearly dependent (residual " +
                            std::to_string(norm) + ")");
    }
    for (std::size_t t = 0; t < n; ++t) q[i * n + t] = v[t] / norm;
  }
  return q;
}

namespace {

Node make_unit_columns(const Array& rows) {
  const std::size_t c = rows.shape[0], n = rows.shape[1];
  Array cols(Shape{n, c});
  for (std::size_t i = 0; i < c; ++i) {
    double norm = 0.0;
    for (std::size_t t = 0; t < n; ++t) norm += rows[i * n + t] * rows[i * n + t];
    norm = std::max(std::sqrt(norm), kNormEps);
    for (std::size_t t = 0; t < n; ++t) cols[t * c + i] = rows[i * n + t] / norm;
  }
  return Node::constant(std::move(cols));
}

}  // namespace

OrthoBasis::OrthoBasis(Array rows, std::uint64_t seed, std::size_t kernel_size, int draw_attempt,
                       std::optional<Shape> pooled_from)
    : rows_(std::move(rows)),
      seed_(seed),
      kernel_size_(kernel_size),
      draw_attempt_(draw_attempt),
      pooled_from_(std::move(pooled_from)) {
  if (rows_.rank() != 2) throw ContractError("OrthoBasis: rows must be [C,N]");
  if (rows_.shape[0] > rows_.shape[1]) throw ContractError("OrthoBasis: requires C <= N");
  unit_columns_ = make_unit_columns(rows_);
}

nlohmann::json OrthoBasis::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < classes(); ++i) {
    rows.push_back(std::vector<double>(rows_.data.begin() + static_cast<std::ptrdiff_t>(i * dim()),
                                       rows_.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim())));
  }
  return {{"seed", seed_}, {"C", classes()}, {"N", dim()}, {"k", kernel_size_}, {"draw_attempt", draw_attempt_}, {"rows", std::move(rows)}};
}

OrthoBasis OrthoBasis::from_json(const nlohmann::json& j) {
  try {
    const auto c = j.at("C").get<std::size_t>();
    const auto n = j.at("N").get<std::size_t>();
    const auto k = j.at("k").get<std::size_t>();
    Array rows(Shape{c, n});
    const auto& jr = j.at("rows");
    if (jr.size() != c) throw FormatError(FormatError::Code::kParse, "basis: row count mismatch");
    for (std::size_t i = 0; i < c; ++i) {
      const auto r = jr[i].get<std::vector<double>>();
      if (r.size() != n) throw FormatError(FormatError::Code::kParse, "basis: row length mismatch");
      std::copy(r.begin(), r.end(), rows.data.begin() + static_cast<std::ptrdiff_t>(i * n));
    }
    return OrthoBasis(std::move(rows), j.at("seed").get<std::uint64_t>(), k, j.value("draw_attempt", 0),
                      Shape{c, k, k, n});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Code::kParse, std::string("basis: ") + e.what());
  }
}

Array draw_kernel(std::uint64_t seed, int attempt, std::size_t classes, std::size_t dim, std::size_t k) {
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(attempt)));
  return normal_array(rng, Shape{classes, k, k, dim});
}

Array pool_kernel(const Array& kernel) {
  if (kernel.rank() != 4 || kernel.shape[1] != kernel.shape[2]) {
    throw ContractError("pool_kernel: expected [C,k,k,N], got " + shape_string(kernel.shape));
  }
  const std::size_t c = kernel.shape[0], k = kernel.shape[1], n = kernel.shape[3];
  Array pooled(Shape{c, n});
  const double inv = 1.0 / static_cast<double>(k * k);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t s = 0; s < k * k; ++s)
      for (std::size_t t = 0; t < n; ++t) pooled[i * n + t] += kernel[(i * k * k + s) * n + t] * inv;
  return pooled;
}

OrthoBasis build_orthogonal_basis(std::uint64_t seed, std::size_t classes, std::size_t dim, std::size_t k) {
  return build_orthogonal_basis(seed, classes, dim, k,
                                [=](int attempt) { return draw_kernel(seed, attempt, classes, dim, k); });
}

OrthoBasis build_orthogonal_basis(std::uint64_t seed, std::size_t classes, std::size_t dim, std::size_t k,
                                  const KernelSampler& sampler) {
  if (classes == 0 || classes > dim) {
    throw ContractError("build_orthogonal_basis: need 1 <= C <= N, got C=" + std::to_string(classes) +
                        " N=" + std::to_string(dim));
  }
  if (k < 1) throw ContractError("build_orthogonal_basis: k must be >= 1");
  std::string last_error;
  for (int attempt = 0; attempt < kMaxBasisDraws; ++attempt) {
    Array kernel = sampler(attempt);
    if (kernel.shape != Shape{classes, k, k, dim}) {
      throw ContractError("build_orthogonal_basis: sampler returned " + shape_string(kernel.shape));
    }
    try {
      return OrthoBasis(gram_schmidt(pool_kernel(kernel)), seed, k, attempt, kernel.shape);
    } catch (const DegeneracyError& e) {
      last_error = e.what();
    }
  }
  throw DegeneracyError("build_orthogonal_basis: " + std::to_string(kMaxBasisDraws) +
                        " degenerate draws; last: " + last_error);
}

namespace {

struct Flattened {
  Node rows;
  Shape out_prefix;  // [H,W] or [B,H,W]
};

Flattened flatten_locations(const Node& features, std::size_t expected_dim, const char* op) {
  const Shape& s = features.shape();
  if (s.size() != 3 && s.size() != 4) {
    throw ContractError(std::string(op) + ": features must be [N,H,W] or [B,N,H,W], got " + shape_string(s));
  }
  const std::size_t n = s[s.size() - 3];
  if (n != expected_dim) {
    throw ContractError(std::string(op) + ": feature dim " + std::to_string(n) + " != head dim " +
                        std::to_string(expected_dim));
  }
  Node last = channels_last(features);
  Shape prefix(last.shape().begin(), last.shape().end() - 1);
  return {reshape(last, Shape{numel(prefix), n}), prefix};
}

Node unflatten(const Node& scores, Shape prefix) {
  prefix.push_back(scores.shape()[1]);
  return reshape(scores, std::move(prefix));
}

}  // namespace

Node om_score_rows(const Node& rows, const OrthoBasis& basis, double logit_scale) {
  if (rows.shape().size() != 2 || rows.shape()[1] != basis.dim()) {
    throw ContractError("om_score_rows: rows " + shape_string(rows.shape()) + " vs basis dim " +
                        std::to_string(basis.dim()));
  }
  Node cosine = matmul(l2_normalize_rows(rows), basis.unit_columns());
  return logit_scale == 1.0 ? cosine : scale(cosine, logit_scale);
}

ScoreMap om_score(const Node& features, const OrthoBasis& basis, double logit_scale) {
  Flattened f = flatten_locations(features, basis.dim(), "om_score");
  return {unflatten(om_score_rows(f.rows, basis, logit_scale), std::move(f.out_prefix))};
}

Node linear_score_rows(const Node& rows, const Node& weights, const Node& bias) {
  if (weights.shape().size() != 2 || bias.shape() != Shape{weights.shape()[0]} || rows.shape().size() != 2 ||
      rows.shape()[1] != weights.shape()[1]) {
    throw ContractError("linear_score: rows " + shape_string(rows.shape()) + ", weights " +
                        shape_string(weights.shape()) + ", bias " + shape_string(bias.shape()));
  }
  return add_row_bias(matmul(rows, transpose(weights)), bias);
}

Node linear_score(const Node& features, const Node& weights, const Node& bias) {
  if (weights.shape().size() != 2) throw ContractError("linear_score: weights must be [C,N]");
  Flattened f = flatten_locations(features, weights.shape()[1], "linear_score");
  return unflatten(linear_score_rows(f.rows, weights, bias), std::move(f.out_prefix));
}

void write_basis_json(const OrthoBasis& basis, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << basis.to_json().dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace omlab
