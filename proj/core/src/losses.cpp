#include "omlab/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "omlab/error.hpp"
#include "omlab/ops.hpp"

namespace omlab {

namespace {

using detail::NodeImpl;

// log(1 + e^x) without overflow.
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

LossValue zero_loss(bool empty) { return {Node::constant(Array::scalar(0.0)), 1.0, empty}; }

void check_finite_input(const Node& x, const char* op) {
  if (!x.value().all_finite()) throw NumericError(std::string(op) + ": non-finite input");
}

}  // namespace

LossValue sigmoid_focal_loss(const Node& logits, const Array& targets, double alpha, double gamma) {
  if (logits.shape().size() != 2 || targets.shape != logits.shape()) {
    throw ContractError("sigmoid_focal_loss: logits " + shape_string(logits.shape()) + " vs targets " +
                        shape_string(targets.shape));
  }
  if (!(alpha > 0.0 && alpha < 1.0) || !(gamma >= 0.0)) {
    throw ContractError("sigmoid_focal_loss: need alpha in (0,1), gamma >= 0");
  }
  check_finite_input(logits, "sigmoid_focal_loss");
  const std::size_t m = logits.shape()[0], c = logits.shape()[1];
  std::size_t positives = 0;
  for (std::size_t i = 0; i < m; ++i) {
    bool any = false;
    for (std::size_t j = 0; j < c; ++j) {
      const double t = targets[i * c + j];
      if (t != 0.0 && t != 1.0) throw ContractError("sigmoid_focal_loss: targets must be 0 or 1");
      any = any || t == 1.0;
    }
    positives += any ? 1 : 0;
  }
  const double normalizer = static_cast<double>(std::max<std::size_t>(positives, 1));

  double total = 0.0;
  const auto& x = logits.value().data;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double p = stable_sigmoid(x[i]);
    if (targets[i] == 1.0) {
      total += alpha * std::pow(1.0 - p, gamma) * softplus(-x[i]);
    } else {
      total += (1.0 - alpha) * std::pow(p, gamma) * softplus(x[i]);
    }
  }
  auto t = std::make_shared<std::vector<double>>(targets.data);
  Node value = detail::make_op(
      "sigmoid_focal_loss", Array::scalar(total / normalizer), {logits},
      [t, alpha, gamma, normalizer](NodeImpl& self) {
        double* g = self.parent_grad(0);
        if (!g) return;
        const auto& x = self.parents[0]->value.data;
        const double scale = self.grad[0] / normalizer;
        for (std::size_t i = 0; i < x.size(); ++i) {
          const double p = stable_sigmoid(x[i]);
          double d;
          if ((*t)[i] == 1.0) {
            // log p = -softplus(-x)
            d = alpha * std::pow(1.0 - p, gamma) * (-gamma * p * softplus(-x[i]) - (1.0 - p));
          } else {
            // log(1-p) = -softplus(x)
            d = (1.0 - alpha) * std::pow(p, gamma) * (p + gamma * (1.0 - p) * softplus(x[i]));
          }
          g[i] += scale * d;
        }
      });
  return {value, normalizer, false};
}

LossValue softmax_cross_entropy(const Node& logits, std::span<const int> labels) {
  if (logits.shape().size() != 2 || logits.shape()[0] != labels.size()) {
    throw ContractError("softmax_cross_entropy: logits " + shape_string(logits.shape()) + " with " +
                        std::to_string(labels.size()) + " labels");
  }
  check_finite_input(logits, "softmax_cross_entropy");
  const std::size_t m = logits.shape()[0], k = logits.shape()[1];
  if (m == 0) return zero_loss(true);
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= k) {
      throw ContractError("softmax_cross_entropy: label " + std::to_string(l) + " outside [0," +
                          std::to_string(k) + ")");
    }
  }
  auto probs = std::make_shared<std::vector<double>>(m * k);
  auto lab = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  const auto& x = logits.value().data;
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t j = 0; j < k; ++j) (*probs)[i * k + j] = std::exp(row[j] - log_z);
    total += log_z - row[static_cast<std::size_t>((*lab)[i])];
  }
  const double inv_m = 1.0 / static_cast<double>(m);
  Node value = detail::make_op("softmax_cross_entropy", Array::scalar(total * inv_m), {logits},
                               [probs, lab, k, inv_m](NodeImpl& self) {
                                 double* g = self.parent_grad(0);
                                 if (!g) return;
                                 const double s = self.grad[0] * inv_m;
                                 for (std::size_t i = 0; i < lab->size(); ++i) {
                                   for (std::size_t j = 0; j < k; ++j) g[i * k + j] += s * (*probs)[i * k + j];
                                   g[i * k + static_cast<std::size_t>((*lab)[i])] -= s;
                                 }
                               });
  return {value, static_cast<double>(m), false};
}

LossValue opl_loss(const Node& features, std::span<const int> labels) {
  if (features.shape().size() != 2 || features.shape()[0] != labels.size()) {
    throw ContractError("opl_loss: features " + shape_string(features.shape()) + " with " +
                        std::to_string(labels.size()) + " labels");
  }
  const std::size_t m = labels.size();
  if (m < 2) return zero_loss(true);
  Array same(Shape{m, m}), diff(Shape{m, m});
  double n_same = 0.0, n_diff = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      if (i == j) continue;
      if (labels[i] == labels[j]) {
        same[i * m + j] = 1.0;
        n_same += 1.0;
      } else {
        diff[i * m + j] = 1.0;
        n_diff += 1.0;
      }
    }
  Node z = l2_normalize_rows(features);
  Node gram = matmul(z, transpose(z));
  Node total = Node::constant(Array::scalar(0.0));
  if (n_same > 0.0) {
    Node s = scale(sum(mul(gram, Node::constant(std::move(same)))), 1.0 / n_same);
    total = add(total, add_scalar(scale(s, -1.0), 1.0));
  }
  if (n_diff > 0.0) {
    Node d = scale(sum(mul(gram, Node::constant(std::move(diff)))), 1.0 / n_diff);
    total = add(total, abs(d));
  }
  return {total, 1.0, false};
}

double generalized_iou(std::span<const double, 4> a, std::span<const double, 4> b) {
  const double area_a = (a[2] - a[0]) * (a[3] - a[1]);
  const double area_b = (b[2] - b[0]) * (b[3] - b[1]);
  const double iw = std::max(0.0, std::min(a[2], b[2]) - std::max(a[0], b[0]));
  const double ih = std::max(0.0, std::min(a[3], b[3]) - std::max(a[1], b[1]));
  const double inter = iw * ih;
  const double uni = area_a + area_b - inter;
  const double enclose = (std::max(a[2], b[2]) - std::min(a[0], b[0])) * (std::max(a[3], b[3]) - std::min(a[1], b[1]));
  return inter / uni - (enclose - uni) / enclose;
}

LossValue giou_loss(const Node& pred_boxes, const Array& gt_boxes) {
  if (pred_boxes.shape().size() != 2 || pred_boxes.shape()[1] != 4 || gt_boxes.shape != pred_boxes.shape()) {
    throw ContractError("giou_loss: pred " + shape_string(pred_boxes.shape()) + " vs gt " +
                        shape_string(gt_boxes.shape));
  }
  check_finite_input(pred_boxes, "giou_loss");
  const std::size_t m = pred_boxes.shape()[0];
  if (m == 0) return zero_loss(true);
  const auto& p = pred_boxes.value().data;
  for (std::size_t i = 0; i < m; ++i) {
    const double* g = gt_boxes.data.data() + 4 * i;
    if (!(g[2] > g[0] && g[3] > g[1])) throw ContractError("giou_loss: degenerate ground-truth box");
    if (!(p[4 * i + 2] > p[4 * i] && p[4 * i + 3] > p[4 * i + 1])) {
      throw ContractError("giou_loss: degenerate predicted box");
    }
  }
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    total += 1.0 - generalized_iou(std::span<const double, 4>(p.data() + 4 * i, 4),
                                   std::span<const double, 4>(gt_boxes.data.data() + 4 * i, 4));
  }
  const double inv_m = 1.0 / static_cast<double>(m);
  auto gt = std::make_shared<std::vector<double>>(gt_boxes.data);
  Node value = detail::make_op(
      "giou_loss", Array::scalar(total * inv_m), {pred_boxes}, [gt, m, inv_m](NodeImpl& self) {
        double* grad = self.parent_grad(0);
        if (!grad) return;
        const auto& pv = self.parents[0]->value.data;
        const double s = self.grad[0] * inv_m;
        for (std::size_t i = 0; i < m; ++i) {
          const double* a = pv.data() + 4 * i;
          const double* b = gt->data() + 4 * i;
          double* ga = grad + 4 * i;
          const double wa = a[2] - a[0], ha = a[3] - a[1];
          const double area_b = (b[2] - b[0]) * (b[3] - b[1]);
          const double iw_raw = std::min(a[2], b[2]) - std::max(a[0], b[0]);
          const double ih_raw = std::min(a[3], b[3]) - std::max(a[1], b[1]);
          const double iw = std::max(0.0, iw_raw), ih = std::max(0.0, ih_raw);
          const double inter = iw * ih;
          const double uni = wa * ha + area_b - inter;
          const double ew = std::max(a[2], b[2]) - std::min(a[0], b[0]);
          const double eh = std::max(a[3], b[3]) - std::min(a[1], b[1]);
          const double enclose = ew * eh;
          // loss = 2 - I/U - U/E with U = A_p + A_g - I.
          const double dl_di = -(uni + inter) / (uni * uni) + 1.0 / enclose;
          const double dl_dap = inter / (uni * uni) - 1.0 / enclose;
          const double dl_de = uni / (enclose * enclose);
          double d[4] = {0.0, 0.0, 0.0, 0.0};
          d[0] += dl_dap * -ha;
          d[2] += dl_dap * ha;
          d[1] += dl_dap * -wa;
          d[3] += dl_dap * wa;
          if (iw_raw > 0.0 && ih_raw > 0.0) {
            const double di_diw = ih, di_dih = iw;
            if (a[2] < b[2]) d[2] += dl_di * di_diw;
            if (a[0] > b[0]) d[0] -= dl_di * di_diw;
            if (a[3] < b[3]) d[3] += dl_di * di_dih;
            if (a[1] > b[1]) d[1] -= dl_di * di_dih;
          }
          if (a[2] > b[2]) d[2] += dl_de * eh;
          if (a[0] < b[0]) d[0] -= dl_de * eh;
          if (a[3] > b[3]) d[3] += dl_de * ew;
          if (a[1] < b[1]) d[1] -= dl_de * ew;
          for (int j = 0; j < 4; ++j) ga[j] += s * d[j];
        }
      });
  return {value, static_cast<double>(m), false};
}

LossValue centerness_loss(const Node& pred, std::span<const double> targets) {
  if (pred.shape().size() != 1 || pred.shape()[0] != targets.size()) {
    throw ContractError("centerness_loss: pred " + shape_string(pred.shape()) + " with " +
                        std::to_string(targets.size()) + " targets");
  }
  for (double t : targets) {
    if (!(t >= 0.0 && t <= 1.0)) throw ContractError("centerness_loss: target outside [0,1]");
  }
  check_finite_input(pred, "centerness_loss");
  const std::size_t m = targets.size();
  if (m == 0) return zero_loss(true);
  const auto& x = pred.value().data;
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    // -(t log s + (1-t) log(1-s)) = t softplus(-x) + (1-t) softplus(x)
    total += targets[i] * softplus(-x[i]) + (1.0 - targets[i]) * softplus(x[i]);
  }
  const double inv_m = 1.0 / static_cast<double>(m);
  auto t = std::make_shared<std::vector<double>>(targets.begin(), targets.end());
  Node value =
      detail::make_op("centerness_loss", Array::scalar(total * inv_m), {pred}, [t, inv_m](NodeImpl& self) {
        double* g = self.parent_grad(0);
        if (!g) return;
        const auto& x = self.parents[0]->value.data;
        for (std::size_t i = 0; i < x.size(); ++i) g[i] += self.grad[0] * inv_m * (stable_sigmoid(x[i]) - (*t)[i]);
      });
  return {value, static_cast<double>(m), false};
}

}  // namespace omlab
