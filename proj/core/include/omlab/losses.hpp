#pragma once

#include <span>
#include <vector>

#include "omlab/node.hpp"

namespace omlab {

struct LossValue {
  Node value;               // scalar
  double normalizer = 1.0;  // >= 1
  bool empty = false;       // no terms contributed (e.g. OPL with < 2 samples)
};

inline constexpr double kFocalAlpha = 0.25;
inline constexpr double kFocalGamma = 2.0;

/// Sigmoid focal loss over logits [M,C] with 0/1 targets [M,C]. An all-zero
/// target row is a background location. The sum over elements is divided by
/// the number of rows holding a positive (at least 1).
LossValue sigmoid_focal_loss(const Node& logits, const Array& targets, double alpha = kFocalAlpha,
                             double gamma = kFocalGamma);

/// Mean negative log-likelihood of softmax(logits [M,K]) at labels in [0,K).
LossValue softmax_cross_entropy(const Node& logits, std::span<const int> labels);

/// Orthogonal projection loss (1 - s) + |d| over rows of features [M,N], where
/// s / d are the mean cosines of same-class / cross-class pairs.
LossValue opl_loss(const Node& features, std::span<const int> labels);

/// Mean of 1 - GIoU between predicted [M,4] and ground-truth [M,4] boxes (x1,y1,x2,y2).
LossValue giou_loss(const Node& pred_boxes, const Array& gt_boxes);

/// Mean binary cross-entropy of sigmoid(pred [M]) against targets in [0,1].
LossValue centerness_loss(const Node& pred, std::span<const double> targets);

/// Generalized IoU of two boxes (x1,y1,x2,y2).
double generalized_iou(std::span<const double, 4> a, std::span<const double, 4> b);

}  // namespace omlab
