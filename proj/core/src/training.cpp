#include "omlab/training.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "omlab/error.hpp"
#include "omlab/losses.hpp"
#include "omlab/ops.hpp"
#include "omlab/random.hpp"

namespace omlab {

LossBreakdown compute_losses(const Detector& model, const ForwardOutput& out, std::span<const DenseTargets> targets) {
  const DetectorConfig& cfg = model.config();
  const std::size_t per_image = out.grid_h * out.grid_w;
  if (targets.size() != out.batch) throw ContractError("compute_losses: one DenseTargets per image required");
  const std::size_t m = out.batch * per_image;
  const std::size_t c = cfg.classes;
  const double stride = static_cast<double>(cfg.stride);
  const GridSpec grid{out.grid_h, out.grid_w, cfg.stride};

  Array cls_targets(Shape{m, c});
  std::vector<int> labels(m);
  std::vector<std::size_t> pos;
  std::vector<int> pos_labels;
  std::vector<double> ctr_targets;
  Array gt_boxes;
  std::vector<double> gt_data, sign_data, offset_data;
  for (std::size_t b = 0; b < out.batch; ++b) {
    const DenseTargets& t = targets[b];
    if (t.positive.size() != per_image || t.classes != c) throw ContractError("compute_losses: target grid mismatch");
    std::copy(t.cls.data.begin(), t.cls.data.end(), cls_targets.data.begin() + static_cast<std::ptrdiff_t>(b * per_image * c));
    for (std::size_t l = 0; l < per_image; ++l) {
      labels[b * per_image + l] = t.labels[l];
      if (!t.positive[l]) continue;
      pos.push_back(b * per_image + l);
      pos_labels.push_back(t.labels[l]);
      ctr_targets.push_back(t.centerness[l]);
      for (std::size_t k = 0; k < 4; ++k) gt_data.push_back(t.boxes[l * 4 + k]);
      const double cx = grid.center_x(l % grid.width), cy = grid.center_y(l / grid.width);
      sign_data.insert(sign_data.end(), {-stride, -stride, stride, stride});
      offset_data.insert(offset_data.end(), {cx, cy, cx, cy});
    }
  }

  LossBreakdown result;
  result.positives = pos.size();
  LossValue cls = is_softmax(cfg.head) ? softmax_cross_entropy(out.cls, labels)
                                       : sigmoid_focal_loss(out.cls, cls_targets, cfg.focal_alpha, cfg.focal_gamma);
  result.cls = cls.value.item();
  Node total = cls.value;
  if (!pos.empty()) {
    const std::size_t p = pos.size();
    Node offsets = gather_rows(out.reg, pos);
    Node boxes = add(mul(offsets, Node::constant(Array(Shape{p, 4}, sign_data))),
                     Node::constant(Array(Shape{p, 4}, offset_data)));
    LossValue reg = giou_loss(boxes, Array(Shape{p, 4}, gt_data));
    Node ctr_rows = gather_rows(reshape(out.ctr, Shape{m, 1}), pos);
    LossValue ctr = centerness_loss(reshape(ctr_rows, Shape{p}), ctr_targets);
    result.reg = reg.value.item();
    result.ctr = ctr.value.item();
    total = add(add(total, reg.value), ctr.value);
    if (cfg.aux == AuxLoss::kOpl) {
      LossValue aux = opl_loss(gather_rows(out.feature_rows, pos), pos_labels);
      if (!aux.empty) {
        Node weighted = scale(aux.value, cfg.aux_weight);
        result.aux = weighted.item();
        total = add(total, weighted);
      }
    }
  }
  result.total = total;
  return result;
}

Sgd::Sgd(std::span<NamedParameter> params, double momentum, double weight_decay)
    : momentum_(momentum), weight_decay_(weight_decay) {
  for (auto& p : params) {
    if (!p.node.requires_grad()) continue;
    params_.push_back(p.node);
    velocity_.emplace_back(p.node.size(), 0.0);
  }
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double Sgd::clip_grad_norm(double max_norm) {
  double sq = 0.0;
  for (auto& p : params_) {
    if (!p.has_grad()) continue;
    for (double g : p.grad_data()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / (norm + 1e-6);
    for (auto& p : params_) {
      if (!p.has_grad()) continue;
      for (double& g : p.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

void Sgd::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Array& w = params_[i].mutable_value();
    std::vector<double>& v = velocity_[i];
    const bool has_grad = params_[i].has_grad();
    std::span<const double> g = has_grad ? std::span<const double>(params_[i].grad_data()) : std::span<const double>{};
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double d = (has_grad ? g[j] : 0.0) + weight_decay_ * w.data[j];
      v[j] = momentum_ * v[j] + d;
      w.data[j] -= lr * v[j];
    }
  }
}

nlohmann::json EpochLog::to_json() const {
  return {{"epoch", epoch}, {"loss_cls", loss_cls}, {"loss_reg", loss_reg},
          {"loss_ctr", loss_ctr}, {"loss_aux", loss_aux}, {"lr", lr}};
}

Array stack_images(std::span<const Scene> scenes, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("stack_images: empty batch");
  const Shape& s0 = scenes[indices[0]].image.shape;
  Shape shape{indices.size()};
  shape.insert(shape.end(), s0.begin(), s0.end());
  Array out(shape);
  const std::size_t per = numel(s0);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Array& img = scenes[indices[i]].image;
    if (img.shape != s0) throw ContractError("stack_images: images differ in shape");
    std::copy(img.data.begin(), img.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

namespace {

std::string describe_failure(std::size_t epoch, std::size_t batch, const LossBreakdown* losses, const char* what) {
  std::ostringstream os;
  os << "training aborted at epoch " << epoch << ", batch " << batch;
  if (losses) {
    os << ": loss_cls=" << losses->cls << " loss_reg=" << losses->reg << " loss_ctr=" << losses->ctr
       << " loss_aux=" << losses->aux;
  }
  os << " (" << what << ")";
  return os.str();
}

}  // namespace

TrainResult train(std::span<const Scene> scenes, const DetectorConfig& config, const TrainOptions& options) {
  if (scenes.empty()) throw ContractError("train: empty dataset");
  config.validate();
  for (const Scene& s : scenes) {
    if (s.image.shape != Shape{3, config.image_size, config.image_size}) {
      throw ContractError("train: scene " + std::to_string(s.id) + " has shape " + shape_string(s.image.shape));
    }
  }
  TrainResult result{Detector(config), {}, {}};
  Detector& model = result.model;
  const OptimizerConfig& opt = config.optimizer;
  Sgd sgd(model.parameters(), opt.momentum, opt.weight_decay);
  const GridSpec grid{config.grid(), config.grid(), config.stride};

  std::vector<DenseTargets> all_targets;
  all_targets.reserve(scenes.size());
  for (const Scene& s : scenes) {
    all_targets.push_back(assign_targets(s.annotations, grid, config.center_radius, config.classes));
  }

  std::vector<std::size_t> order(scenes.size());
  std::size_t iteration = 0;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(config.seed, 0x5eed0000ULL + epoch));
    rng.shuffle(std::span<std::size_t>(order));
    EpochLog log;
    log.epoch = epoch + 1;
    log.lr = opt.lr_at(epoch, iteration);
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      if (options.max_steps != 0 && iteration >= options.max_steps) break;
      const std::size_t end = std::min(order.size(), start + opt.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<DenseTargets> targets;
      targets.reserve(idx.size());
      for (std::size_t i : idx) targets.push_back(all_targets[i]);

      LossBreakdown losses;
      const std::size_t batch_no = start / opt.batch_size;
      try {
        const ForwardOutput out = model.forward(Node::constant(stack_images(scenes, idx)));
        losses = compute_losses(model, out, targets);
      } catch (const NumericError& e) {
        throw NumericError(describe_failure(epoch + 1, batch_no, nullptr, e.what()));
      }
      const double total = losses.total.item();
      if (!std::isfinite(total)) {
        throw NumericError(describe_failure(epoch + 1, batch_no, &losses, "non-finite total loss"));
      }
      sgd.zero_grad();
      try {
        backward(losses.total);
      } catch (const NumericError& e) {
        throw NumericError(describe_failure(epoch + 1, batch_no, &losses, e.what()));
      }
      const double norm = sgd.clip_grad_norm(opt.grad_clip_norm);
      if (!std::isfinite(norm)) {
        throw NumericError(describe_failure(epoch + 1, batch_no, &losses, "non-finite gradient norm"));
      }
      sgd.step(opt.lr_at(epoch, iteration));
      ++iteration;
      ++batches;
      result.step_losses.push_back(total);
      log.loss_cls += losses.cls;
      log.loss_reg += losses.reg;
      log.loss_ctr += losses.ctr;
      log.loss_aux += losses.aux;
    }
    if (batches == 0) break;
    const double inv = 1.0 / static_cast<double>(batches);
    log.loss_cls *= inv;
    log.loss_reg *= inv;
    log.loss_ctr *= inv;
    log.loss_aux *= inv;
    result.log.push_back(log);
    if (options.on_epoch) options.on_epoch(log);
  }
  sgd.zero_grad();
  return result;
}

}  // namespace omlab
