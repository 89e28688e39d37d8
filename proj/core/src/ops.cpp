#include "omlab/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "omlab/error.hpp"

namespace omlab {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using detail::NodeImpl;

void require(bool ok, const std::string& what) {
  if (!ok) throw ContractError(what);
}

void require_defined(const Node& a, const char* op) {
  require(a.defined(), std::string(op) + ": undefined operand");
}

void require_same_shape(const Node& a, const Node& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  require(a.shape() == b.shape(), std::string(op) + ": shape " + shape_string(a.shape()) + " vs " +
                                      shape_string(b.shape()));
}

// Unary elementwise op whose derivative is expressed through input x and output y.
template <typename Fwd, typename Deriv>
Node unary(const char* name, const Node& a, Fwd fwd, Deriv deriv) {
  require_defined(a, name);
  Array out(a.shape());
  const auto& x = a.value().data;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  return detail::make_op(name, std::move(out), {a}, [deriv](NodeImpl& self) {
    double* ga = self.parent_grad(0);
    if (!ga) return;
    const auto& x = self.parents[0]->value.data;
    const auto& y = self.value.data;
    for (std::size_t i = 0; i < y.size(); ++i) ga[i] += self.grad[i] * deriv(x[i], y[i]);
  });
}

struct ImageDims {
  std::size_t batch, channels, height, width;
  bool batched;
};

ImageDims image_dims(const Node& x, const char* op) {
  const Shape& s = x.shape();
  require(s.size() == 3 || s.size() == 4,
          std::string(op) + ": expected [C,H,W] or [B,C,H,W], got " + shape_string(s));
  if (s.size() == 3) return {1, s[0], s[1], s[2], false};
  return {s[0], s[1], s[2], s[3], true};
}

Shape image_shape(const ImageDims& d, std::size_t c, std::size_t h, std::size_t w) {
  if (d.batched) return {d.batch, c, h, w};
  return {c, h, w};
}

}  // namespace

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t padding) {
  if (in + 2 * padding < k) return 0;
  return (in + 2 * padding - k) / stride + 1;
}

Node add(const Node& a, const Node& b) {
  require_same_shape(a, b, "add");
  Array out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return detail::make_op("add", std::move(out), {a, b}, [](NodeImpl& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (double* g = self.parent_grad(p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Node sub(const Node& a, const Node& b) {
  require_same_shape(a, b, "sub");
  Array out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return detail::make_op("sub", std::move(out), {a, b}, [](NodeImpl& self) {
    if (double* g = self.parent_grad(0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = self.parent_grad(1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Node mul(const Node& a, const Node& b) {
  require_same_shape(a, b, "mul");
  Array out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return detail::make_op("mul", std::move(out), {a, b}, [](NodeImpl& self) {
    const auto& av = self.parents[0]->value.data;
    const auto& bv = self.parents[1]->value.data;
    if (double* g = self.parent_grad(0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (double* g = self.parent_grad(1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Node scale(const Node& a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Node add_scalar(const Node& a, double offset) {
  return unary(
      "add_scalar", a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Node relu(const Node& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Node sigmoid(const Node& a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Node exp(const Node& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Node log(const Node& a) {
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Node abs(const Node& a) {
  return unary(
      "abs", a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Node sum(const Node& a) {
  require_defined(a, "sum");
  double total = 0.0;
  for (double v : a.value().data) total += v;
  return detail::make_op("sum", Array::scalar(total), {a}, [](NodeImpl& self) {
    if (double* g = self.parent_grad(0)) {
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

Node mean(const Node& a) {
  require_defined(a, "mean");
  require(a.size() > 0, "mean: empty input");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Node reshape(const Node& a, Shape shape) {
  require_defined(a, "reshape");
  require(numel(shape) == a.size(),
          "reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape) + " changes element count");
  Array out(std::move(shape), a.value().data);
  return detail::make_op("reshape", std::move(out), {a}, [](NodeImpl& self) {
    if (double* g = self.parent_grad(0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Node flatten(const Node& a) { return reshape(a, Shape{a.size()}); }

Node matmul(const Node& a, const Node& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  require(a.shape().size() == 2 && b.shape().size() == 2 && a.shape()[1] == b.shape()[0],
          "matmul: incompatible shapes " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  const auto m = static_cast<Eigen::Index>(a.shape()[0]);
  const auto k = static_cast<Eigen::Index>(a.shape()[1]);
  const auto n = static_cast<Eigen::Index>(b.shape()[1]);
  Array out(Shape{a.shape()[0], b.shape()[1]});
  MatMap(out.data.data(), m, n).noalias() =
      ConstMatMap(a.value().data.data(), m, k) * ConstMatMap(b.value().data.data(), k, n);
  return detail::make_op("matmul", std::move(out), {a, b}, [m, k, n](NodeImpl& self) {
    ConstMatMap g(self.grad.data(), m, n);
    if (double* ga = self.parent_grad(0)) {
      MatMap(ga, m, k).noalias() += g * ConstMatMap(self.parents[1]->value.data.data(), k, n).transpose();
    }
    if (double* gb = self.parent_grad(1)) {
      MatMap(gb, k, n).noalias() += ConstMatMap(self.parents[0]->value.data.data(), m, k).transpose() * g;
    }
  });
}

Node transpose(const Node& a) {
  require_defined(a, "transpose");
  require(a.shape().size() == 2, "transpose: expected rank 2, got " + shape_string(a.shape()));
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Array out(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.value()[i * n + j];
  return detail::make_op("transpose", std::move(out), {a}, [m, n](NodeImpl& self) {
    if (double* g = self.parent_grad(0)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
    }
  });
}

Node conv2d(const Node& input, const Node& kernel, std::size_t stride, std::size_t padding) {
  require_defined(input, "conv2d");
  require_defined(kernel, "conv2d");
  const ImageDims d = image_dims(input, "conv2d");
  const Shape& ks = kernel.shape();
  require(ks.size() == 4, "conv2d: kernel must be [Cout,k,k,Cin], got " + shape_string(ks));
  require(ks[1] == ks[2] && ks[1] % 2 == 1, "conv2d: kernel must be square with odd extent");
  require(ks[3] == d.channels, "conv2d: kernel expects " + std::to_string(ks[3]) + " input channels, got " +
                                   std::to_string(d.channels));
  require(stride >= 1, "conv2d: stride must be positive");
  const std::size_t cout = ks[0], k = ks[1], cin = d.channels;
  const std::size_t ho = conv_out_extent(d.height, k, stride, padding);
  const std::size_t wo = conv_out_extent(d.width, k, stride, padding);
  require(ho >= 1 && wo >= 1, "conv2d: empty output");

  const std::size_t patch = k * k * cin;
  const std::size_t positions = ho * wo;
  const std::size_t in_plane = d.height * d.width;
  const std::size_t in_image = cin * in_plane;
  auto cols = std::make_shared<std::vector<double>>(d.batch * patch * positions, 0.0);

  const auto& x = input.value().data;
  for (std::size_t b = 0; b < d.batch; ++b) {
    double* col = cols->data() + b * patch * positions;
    const double* img = x.data() + b * in_image;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        for (std::size_t ci = 0; ci < cin; ++ci) {
          double* row = col + ((ky * k + kx) * cin + ci) * positions;
          const double* plane = img + ci * in_plane;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.height)) continue;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.width)) continue;
              row[oy * wo + ox] = plane[static_cast<std::size_t>(iy) * d.width + static_cast<std::size_t>(ix)];
            }
          }
        }
      }
    }
  }

  Array out(image_shape(d, cout, ho, wo));
  ConstMatMap kmat(kernel.value().data.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(patch));
  for (std::size_t b = 0; b < d.batch; ++b) {
    MatMap(out.data.data() + b * cout * positions, static_cast<Eigen::Index>(cout),
           static_cast<Eigen::Index>(positions))
        .noalias() = kmat * ConstMatMap(cols->data() + b * patch * positions, static_cast<Eigen::Index>(patch),
                                        static_cast<Eigen::Index>(positions));
  }

  return detail::make_op("conv2d", std::move(out), {input, kernel}, [=](NodeImpl& self) {
    const auto ecout = static_cast<Eigen::Index>(cout);
    const auto epatch = static_cast<Eigen::Index>(patch);
    const auto epos = static_cast<Eigen::Index>(positions);
    ConstMatMap km(self.parents[1]->value.data.data(), ecout, epatch);
    double* gin = self.parent_grad(0);
    double* gk = self.parent_grad(1);
    std::vector<double> dcols(gin ? patch * positions : 0);
    for (std::size_t b = 0; b < d.batch; ++b) {
      ConstMatMap g(self.grad.data() + b * cout * positions, ecout, epos);
      if (gk) {
        MatMap(gk, ecout, epatch).noalias() +=
            g * ConstMatMap(cols->data() + b * patch * positions, epatch, epos).transpose();
      }
      if (gin) {
        MatMap(dcols.data(), epatch, epos).noalias() = km.transpose() * g;
        double* img = gin + b * in_image;
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const double* row = dcols.data() + ((ky * k + kx) * cin + ci) * positions;
              double* plane = img + ci * in_plane;
              for (std::size_t oy = 0; oy < ho; ++oy) {
                const auto iy =
                    static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.height)) continue;
                for (std::size_t ox = 0; ox < wo; ++ox) {
                  const auto ix =
                      static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.width)) continue;
                  plane[static_cast<std::size_t>(iy) * d.width + static_cast<std::size_t>(ix)] +=
                      row[oy * wo + ox];
                }
              }
            }
          }
        }
      }
    }
  });
}

Node add_channel_bias(const Node& input, const Node& bias) {
  require_defined(bias, "add_channel_bias");
  const ImageDims d = image_dims(input, "add_channel_bias");
  require(bias.shape() == Shape{d.channels},
          "add_channel_bias: bias " + shape_string(bias.shape()) + " for " + std::to_string(d.channels) +
              " channels");
  const std::size_t plane = d.height * d.width;
  Array out = input.value();
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t c = 0; c < d.channels; ++c) {
      double* p = out.data.data() + (b * d.channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += bias.value()[c];
    }
  return detail::make_op("add_channel_bias", std::move(out), {input, bias}, [d, plane](NodeImpl& self) {
    if (double* g = self.parent_grad(0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = self.parent_grad(1)) {
      for (std::size_t b = 0; b < d.batch; ++b)
        for (std::size_t c = 0; c < d.channels; ++c) {
          const double* p = self.grad.data() + (b * d.channels + c) * plane;
          double acc = 0.0;
          for (std::size_t i = 0; i < plane; ++i) acc += p[i];
          g[c] += acc;
        }
    }
  });
}

Node add_row_bias(const Node& x, const Node& bias) {
  require_defined(x, "add_row_bias");
  require_defined(bias, "add_row_bias");
  require(x.shape().size() == 2 && bias.shape() == Shape{x.shape()[1]},
          "add_row_bias: " + shape_string(x.shape()) + " + " + shape_string(bias.shape()));
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  Array out = x.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.value()[j];
  return detail::make_op("add_row_bias", std::move(out), {x, bias}, [m, n](NodeImpl& self) {
    if (double* g = self.parent_grad(0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = self.parent_grad(1)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    }
  });
}

Node max_pool2x2(const Node& input) {
  const ImageDims d = image_dims(input, "max_pool2x2");
  require(d.height % 2 == 0 && d.width % 2 == 0, "max_pool2x2: spatial extents must be even");
  const std::size_t ho = d.height / 2, wo = d.width / 2;
  Array out(image_shape(d, d.channels, ho, wo));
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const auto& x = input.value().data;
  for (std::size_t plane = 0; plane < d.batch * d.channels; ++plane) {
    const std::size_t base = plane * d.height * d.width;
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = base + (2 * oy) * d.width + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = base + (2 * oy + dy) * d.width + 2 * ox + dx;
            if (x[idx] > x[best]) best = idx;
          }
        const std::size_t o = plane * ho * wo + oy * wo + ox;
        out[o] = x[best];
        (*argmax)[o] = best;
      }
  }
  return detail::make_op("max_pool2x2", std::move(out), {input}, [argmax](NodeImpl& self) {
    if (double* g = self.parent_grad(0)) {
      for (std::size_t o = 0; o < self.grad.size(); ++o) g[(*argmax)[o]] += self.grad[o];
    }
  });
}

Node global_avg_pool(const Node& input) {
  const ImageDims d = image_dims(input, "global_avg_pool");
  const std::size_t plane = d.height * d.width;
  Array out(d.batched ? Shape{d.batch, d.channels} : Shape{d.channels});
  for (std::size_t p = 0; p < d.batch * d.channels; ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += input.value()[p * plane + i];
    out[p] = acc / static_cast<double>(plane);
  }
  return detail::make_op("global_avg_pool", std::move(out), {input}, [plane](NodeImpl& self) {
    if (double* g = self.parent_grad(0)) {
      const double inv = 1.0 / static_cast<double>(plane);
      for (std::size_t p = 0; p < self.grad.size(); ++p)
        for (std::size_t i = 0; i < plane; ++i) g[p * plane + i] += self.grad[p] * inv;
    }
  });
}

Node channels_last(const Node& input) {
  const ImageDims d = image_dims(input, "channels_last");
  const std::size_t plane = d.height * d.width;
  Array out(d.batched ? Shape{d.batch, d.height, d.width, d.channels} : Shape{d.height, d.width, d.channels});
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t c = 0; c < d.channels; ++c)
      for (std::size_t i = 0; i < plane; ++i)
        out[(b * plane + i) * d.channels + c] = input.value()[(b * d.channels + c) * plane + i];
  return detail::make_op("channels_last", std::move(out), {input}, [d, plane](NodeImpl& self) {
    if (double* g = self.parent_grad(0)) {
      for (std::size_t b = 0; b < d.batch; ++b)
        for (std::size_t c = 0; c < d.channels; ++c)
          for (std::size_t i = 0; i < plane; ++i)
            g[(b * d.channels + c) * plane + i] += self.grad[(b * plane + i) * d.channels + c];
    }
  });
}

namespace {

Node normalize_rows_impl(const char* name, const Node& x, std::size_t m, std::size_t n, double eps) {
  require(eps > 0.0, std::string(name) + ": eps must be positive");
  Array out(x.shape());
  auto norms = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < n; ++j) sq += x.value()[i * n + j] * x.value()[i * n + j];
    const double denom = std::max(std::sqrt(sq), eps);
    (*norms)[i] = denom;
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x.value()[i * n + j] / denom;
  }
  return detail::make_op(name, std::move(out), {x}, [norms, m, n, eps](NodeImpl& self) {
    double* g = self.parent_grad(0);
    if (!g) return;
    const auto& y = self.value.data;
    for (std::size_t i = 0; i < m; ++i) {
      const double denom = (*norms)[i];
      const double* gy = self.grad.data() + i * n;
      if (denom > eps) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += y[i * n + j] * gy[j];
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += (gy[j] - y[i * n + j] * dot) / denom;
      } else {
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += gy[j] / denom;
      }
    }
  });
}

}  // namespace

Node l2_normalize(const Node& v, double eps) {
  require_defined(v, "l2_normalize");
  require(v.shape().size() == 1, "l2_normalize: expected rank 1, got " + shape_string(v.shape()));
  return normalize_rows_impl("l2_normalize", v, 1, v.shape()[0], eps);
}

Node l2_normalize_rows(const Node& x, double eps) {
  require_defined(x, "l2_normalize_rows");
  require(x.shape().size() == 2, "l2_normalize_rows: expected rank 2, got " + shape_string(x.shape()));
  return normalize_rows_impl("l2_normalize_rows", x, x.shape()[0], x.shape()[1], eps);
}

Node gather_rows(const Node& x, std::span<const std::size_t> indices) {
  require_defined(x, "gather_rows");
  require(x.shape().size() == 2, "gather_rows: expected rank 2, got " + shape_string(x.shape()));
  const std::size_t m = x.shape()[0], k = x.shape()[1];
  auto rows = std::make_shared<std::vector<std::size_t>>(indices.begin(), indices.end());
  Array out(Shape{rows->size(), k});
  for (std::size_t r = 0; r < rows->size(); ++r) {
    require((*rows)[r] < m, "gather_rows: index " + std::to_string((*rows)[r]) + " out of range");
    std::copy_n(x.value().data.data() + (*rows)[r] * k, k, out.data.data() + r * k);
  }
  return detail::make_op("gather_rows", std::move(out), {x}, [rows, k](NodeImpl& self) {
    if (double* g = self.parent_grad(0)) {
      for (std::size_t r = 0; r < rows->size(); ++r)
        for (std::size_t j = 0; j < k; ++j) g[(*rows)[r] * k + j] += self.grad[r * k + j];
    }
  });
}

}  // namespace omlab
