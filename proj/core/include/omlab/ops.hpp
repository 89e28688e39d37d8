#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "omlab/node.hpp"

namespace omlab {

inline constexpr double kNormEps = 1e-12;

// Elementwise; operands must have identical shapes.
Node add(const Node& a, const Node& b);
Node sub(const Node& a, const Node& b);
Node mul(const Node& a, const Node& b);

// Scalar broadcast.
Node scale(const Node& a, double factor);
Node add_scalar(const Node& a, double offset);

Node relu(const Node& a);
Node sigmoid(const Node& a);
Node exp(const Node& a);
Node log(const Node& a);
Node abs(const Node& a);

Node sum(const Node& a);
Node mean(const Node& a);

Node reshape(const Node& a, Shape shape);
Node flatten(const Node& a);

/// [M,K] x [K,N] -> [M,N].
Node matmul(const Node& a, const Node& b);
/// [M,N] -> [N,M].
Node transpose(const Node& a);

/// Cross-correlation. input [Cin,H,W] or [B,Cin,H,W]; kernel [Cout,k,k,Cin].
Node conv2d(const Node& input, const Node& kernel, std::size_t stride, std::size_t padding);

/// Adds bias[c] to every element of channel c; input [C,H,W] or [B,C,H,W].
Node add_channel_bias(const Node& input, const Node& bias);
/// x [M,N] plus bias [N] on every row.
Node add_row_bias(const Node& x, const Node& bias);

/// 2x2 window, stride 2; spatial extents must be even.
Node max_pool2x2(const Node& input);
/// [C,H,W] -> [C] or [B,C,H,W] -> [B,C].
Node global_avg_pool(const Node& input);

/// [C,H,W] -> [H,W,C] or [B,C,H,W] -> [B,H,W,C].
Node channels_last(const Node& input);

/// v / max(||v||_2, eps) for a rank-1 node.
Node l2_normalize(const Node& v, double eps = kNormEps);
/// Row-wise l2_normalize of [M,N].
Node l2_normalize_rows(const Node& x, double eps = kNormEps);

/// Rows `indices` of x [M,K] -> [P,K].
Node gather_rows(const Node& x, std::span<const std::size_t> indices);

/// Output extent of a convolution along one axis.
std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t padding);

}  // namespace omlab
