#include "omlab/detector.hpp"

#include <algorithm>
#include <cmath>

#include "json_util.hpp"
#include "omlab/error.hpp"
#include "omlab/ops.hpp"
#include "omlab/random.hpp"

namespace omlab {

std::string to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::kOm:
      return "om";
    case HeadKind::kLinear:
      return "linear";
    case HeadKind::kOmSoftmax:
      return "om_softmax";
    case HeadKind::kLinearSoftmax:
      return "linear_softmax";
  }
  return "om";
}

std::string to_string(AuxLoss aux) { return aux == AuxLoss::kOpl ? "opl" : "none"; }

HeadKind parse_head_kind(std::string_view text) {
  if (text == "om") return HeadKind::kOm;
  if (text == "linear") return HeadKind::kLinear;
  if (text == "om_softmax") return HeadKind::kOmSoftmax;
  if (text == "linear_softmax") return HeadKind::kLinearSoftmax;
  throw ContractError("unknown head kind '" + std::string(text) + "'");
}

AuxLoss parse_aux_loss(std::string_view text) {
  if (text == "none") return AuxLoss::kNone;
  if (text == "opl") return AuxLoss::kOpl;
  throw ContractError("unknown aux loss '" + std::string(text) + "'");
}

double OptimizerConfig::lr_at(std::size_t epoch, std::size_t iteration) const noexcept {
  double lr_now = lr();
  for (std::size_t e : decay_epochs) {
    if (epoch >= e) lr_now *= decay_factor;
  }
  if (iteration < warmup_iters) {
    const double progress = static_cast<double>(iteration) / static_cast<double>(warmup_iters);
    lr_now *= warmup_ratio + (1.0 - warmup_ratio) * progress;
  }
  return lr_now;
}

void DetectorConfig::validate() const {
  if (classes < 1) throw ContractError("detector: classes must be >= 1");
  if (backbone_widths.size() != 4) throw ContractError("detector: backbone_widths needs 4 entries (3 stages + trunk)");
  if (std::any_of(backbone_widths.begin(), backbone_widths.end(), [](std::size_t w) { return w == 0; })) {
    throw ContractError("detector: backbone widths must be positive");
  }
  if (stride != 8) throw ContractError("detector: three stride-2 stages give stride 8");
  if (image_size == 0 || image_size % stride != 0) throw ContractError("detector: stride must divide image_size");
  if (feature_dim == 0) throw ContractError("detector: feature_dim must be positive");
  if (is_om(head) && cls_outputs() > feature_dim) {
    throw ContractError("detector: orthogonal head needs " + std::to_string(cls_outputs()) +
                        " prototypes but feature_dim N=" + std::to_string(feature_dim) + " (requires C <= N)");
  }
  if (!(logit_scale > 0.0)) throw ContractError("detector: logit_scale must be positive");
  if (basis_kernel < 1) throw ContractError("detector: basis_kernel must be >= 1");
  if (!(center_radius > 0.0)) throw ContractError("detector: center_radius must be positive");
  if (!(focal_alpha > 0.0 && focal_alpha < 1.0) || !(focal_gamma >= 0.0)) {
    throw ContractError("detector: focal alpha in (0,1), gamma >= 0");
  }
  if (!(prior_prob > 0.0 && prior_prob < 1.0)) throw ContractError("detector: prior_prob in (0,1)");
  if (!(aux_weight >= 0.0)) throw ContractError("detector: aux_weight must be >= 0");
  const auto& o = optimizer;
  if (!(o.base_lr > 0.0) || o.reference_batch == 0 || o.batch_size == 0 || o.epochs == 0) {
    throw ContractError("detector.optimizer: lr, batch sizes and epochs must be positive");
  }
  if (!(o.momentum >= 0.0 && o.momentum < 1.0) || !(o.weight_decay >= 0.0)) {
    throw ContractError("detector.optimizer: momentum in [0,1), weight_decay >= 0");
  }
  if (!(o.decay_factor > 0.0) || !(o.warmup_ratio > 0.0 && o.warmup_ratio <= 1.0) || !(o.grad_clip_norm >= 0.0)) {
    throw ContractError("detector.optimizer: invalid decay/warmup/clip setting");
  }
}

nlohmann::json DetectorConfig::to_json() const {
  const auto& o = optimizer;
  return {{"classes", classes},
          {"image_size", image_size},
          {"backbone_widths", backbone_widths},
          {"stride", stride},
          {"feature_dim", feature_dim},
          {"head", to_string(head)},
          {"aux", to_string(aux)},
          {"aux_weight", aux_weight},
          {"logit_scale", logit_scale},
          {"basis_kernel", basis_kernel},
          {"center_radius", center_radius},
          {"focal_alpha", focal_alpha},
          {"focal_gamma", focal_gamma},
          {"prior_prob", prior_prob},
          {"seed", seed},
          {"optimizer",
           {{"base_lr", o.base_lr},
            {"reference_batch", o.reference_batch},
            {"momentum", o.momentum},
            {"weight_decay", o.weight_decay},
            {"epochs", o.epochs},
            {"decay_epochs", o.decay_epochs},
            {"decay_factor", o.decay_factor},
            {"batch_size", o.batch_size},
            {"warmup_iters", o.warmup_iters},
            {"warmup_ratio", o.warmup_ratio},
            {"grad_clip_norm", o.grad_clip_norm}}}};
}

DetectorConfig DetectorConfig::from_json(const nlohmann::json& j) {
  constexpr std::string_view where = "detector";
  jsonutil::check_keys(j,
                       {"classes", "image_size", "backbone_widths", "stride", "feature_dim", "head", "aux",
                        "aux_weight", "logit_scale", "basis_kernel", "center_radius", "focal_alpha", "focal_gamma",
                        "prior_prob", "seed", "optimizer"},
                       where);
  DetectorConfig c;
  jsonutil::read_opt(j, "classes", c.classes, where);
  jsonutil::read_opt(j, "image_size", c.image_size, where);
  jsonutil::read_opt(j, "backbone_widths", c.backbone_widths, where);
  jsonutil::read_opt(j, "stride", c.stride, where);
  jsonutil::read_opt(j, "feature_dim", c.feature_dim, where);
  std::string head = to_string(c.head), aux = to_string(c.aux);
  jsonutil::read_opt(j, "head", head, where);
  jsonutil::read_opt(j, "aux", aux, where);
  c.head = parse_head_kind(head);
  c.aux = parse_aux_loss(aux);
  jsonutil::read_opt(j, "aux_weight", c.aux_weight, where);
  jsonutil::read_opt(j, "logit_scale", c.logit_scale, where);
  jsonutil::read_opt(j, "basis_kernel", c.basis_kernel, where);
  jsonutil::read_opt(j, "center_radius", c.center_radius, where);
  jsonutil::read_opt(j, "focal_alpha", c.focal_alpha, where);
  jsonutil::read_opt(j, "focal_gamma", c.focal_gamma, where);
  jsonutil::read_opt(j, "prior_prob", c.prior_prob, where);
  jsonutil::read_opt(j, "seed", c.seed, where);
  if (auto it = j.find("optimizer"); it != j.end()) {
    constexpr std::string_view ow = "detector.optimizer";
    jsonutil::check_keys(*it,
                         {"base_lr", "reference_batch", "momentum", "weight_decay", "epochs", "decay_epochs",
                          "decay_factor", "batch_size", "warmup_iters", "warmup_ratio", "grad_clip_norm"},
                         ow);
    auto& o = c.optimizer;
    jsonutil::read_opt(*it, "base_lr", o.base_lr, ow);
    jsonutil::read_opt(*it, "reference_batch", o.reference_batch, ow);
    jsonutil::read_opt(*it, "momentum", o.momentum, ow);
    jsonutil::read_opt(*it, "weight_decay", o.weight_decay, ow);
    jsonutil::read_opt(*it, "epochs", o.epochs, ow);
    jsonutil::read_opt(*it, "decay_epochs", o.decay_epochs, ow);
    jsonutil::read_opt(*it, "decay_factor", o.decay_factor, ow);
    jsonutil::read_opt(*it, "batch_size", o.batch_size, ow);
    jsonutil::read_opt(*it, "warmup_iters", o.warmup_iters, ow);
    jsonutil::read_opt(*it, "warmup_ratio", o.warmup_ratio, ow);
    jsonutil::read_opt(*it, "grad_clip_norm", o.grad_clip_norm, ow);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Model

namespace {

Array he_normal(std::uint64_t seed, std::string_view name, Shape shape) {
  Rng rng(mix_seed(seed, name_hash(name)));
  const double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
  return normal_array(rng, std::move(shape), std::sqrt(2.0 / fan_in));
}

Array small_normal(std::uint64_t seed, std::string_view name, Shape shape) {
  Rng rng(mix_seed(seed, name_hash(name)));
  return normal_array(rng, std::move(shape), 0.01);
}

}  // namespace

Detector::Detector(DetectorConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto& w = config_.backbone_widths;
  const std::size_t n = config_.feature_dim;
  const std::uint64_t seed = config_.seed;
  auto add_conv = [&](const std::string& prefix, std::size_t cout, std::size_t cin, std::size_t k) {
    params_.push_back({prefix + ".weight", Node::parameter(he_normal(seed, prefix + ".weight", {cout, k, k, cin}))});
    params_.push_back({prefix + ".bias", Node::parameter(Array(Shape{cout}, 0.0))});
  };
  add_conv("backbone.0", w[0], 3, 3);
  add_conv("backbone.1", w[1], w[0], 3);
  add_conv("backbone.2", w[2], w[1], 3);
  add_conv("trunk", w[3], w[2], 3);
  // Bias-free, so the classifier input is positively homogeneous in the trunk.
  params_.push_back({"cls.0.weight", Node::parameter(he_normal(seed, "cls.0.weight", {n, 3, 3, w[3]}))});
  params_.push_back({"cls.1.weight", Node::parameter(he_normal(seed, "cls.1.weight", {n, 3, 3, n}))});
  add_conv("reg.0", n, w[3], 3);
  add_conv("reg.1", n, n, 3);
  params_.push_back({"reg_out.weight", Node::parameter(small_normal(seed, "reg_out.weight", {4, 1, 1, n}))});
  params_.push_back({"reg_out.bias", Node::parameter(Array(Shape{4}, 0.0))});
  params_.push_back({"ctr_out.weight", Node::parameter(small_normal(seed, "ctr_out.weight", {1, 1, 1, n}))});
  params_.push_back({"ctr_out.bias", Node::parameter(Array(Shape{1}, 0.0))});

  const std::size_t outputs = config_.cls_outputs();
  if (is_om(config_.head)) {
    basis_ = build_orthogonal_basis(seed, outputs, n, config_.basis_kernel);
  } else {
    params_.push_back({"cls_out.weight", Node::parameter(small_normal(seed, "cls_out.weight", {outputs, n}))});
    // Focal-loss prior: sigmoid(bias) = prior_prob for every class.
    const double prior_bias = -std::log((1.0 - config_.prior_prob) / config_.prior_prob);
    Array bias(Shape{outputs}, is_softmax(config_.head) ? 0.0 : prior_bias);
    params_.push_back({"cls_out.bias", Node::parameter(std::move(bias))});
  }
}

const Node& Detector::param(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.node;
  }
  throw ContractError("Detector: no parameter '" + std::string(name) + "'");
}

bool Detector::has_param(std::string_view name) const noexcept {
  return std::any_of(params_.begin(), params_.end(), [&](const NamedParameter& p) { return p.name == name; });
}

Node Detector::conv_block(const Node& x, std::string_view prefix, std::size_t stride) const {
  const std::string p(prefix);
  return relu(add_channel_bias(conv2d(x, param(p + ".weight"), stride, 1), param(p + ".bias")));
}

Node Detector::cls_branch(const Node& trunk) const {
  const Node hidden = relu(conv2d(trunk, param("cls.0.weight"), 1, 1));
  return conv2d(hidden, param("cls.1.weight"), 1, 1);
}

Node Detector::classify_trunk(const Node& trunk) const {
  const Node f = cls_branch(trunk);
  const Shape& s = f.shape();
  return classify_rows(reshape(channels_last(f), Shape{s[0] * s[2] * s[3], s[1]}));
}

Node Detector::classify_rows(const Node& feature_rows) const {
  if (basis_) return om_score_rows(feature_rows, *basis_, config_.logit_scale);
  return linear_score_rows(feature_rows, param("cls_out.weight"), param("cls_out.bias"));
}

ForwardOutput Detector::forward(const Node& images) const {
  Node input = images;
  if (images.shape().size() == 3) input = reshape(images, Shape{1, images.shape()[0], images.shape()[1], images.shape()[2]});
  const Shape& s = input.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != config_.image_size || s[3] != config_.image_size) {
    throw ContractError("Detector::forward: expected [B,3," + std::to_string(config_.image_size) + "," +
                        std::to_string(config_.image_size) + "], got " + shape_string(s));
  }
  ForwardOutput out;
  out.batch = s[0];
  Node x = conv_block(input, "backbone.0", 2);
  x = conv_block(x, "backbone.1", 2);
  x = conv_block(x, "backbone.2", 2);
  out.trunk = conv_block(x, "trunk", 1);
  out.grid_h = out.trunk.shape()[2];
  out.grid_w = out.trunk.shape()[3];
  const std::size_t m = out.batch * out.grid_h * out.grid_w;

  out.cls_features = cls_branch(out.trunk);
  out.feature_rows = reshape(channels_last(out.cls_features), Shape{m, config_.feature_dim});
  out.cls = classify_rows(out.feature_rows);

  Node r = conv_block(out.trunk, "reg.0", 1);
  r = conv_block(r, "reg.1", 1);
  Node reg_raw = add_channel_bias(conv2d(r, param("reg_out.weight"), 1, 0), param("reg_out.bias"));
  out.reg = exp(reshape(channels_last(reg_raw), Shape{m, 4}));
  Node ctr_raw = add_channel_bias(conv2d(r, param("ctr_out.weight"), 1, 0), param("ctr_out.bias"));
  out.ctr = reshape(ctr_raw, Shape{m});
  return out;
}

void Detector::zero_final_layers() {
  for (auto& p : params_) {
    if (p.name.starts_with("cls_out.") || p.name.starts_with("reg_out.") || p.name.starts_with("ctr_out.")) {
      auto& v = p.node.mutable_value();
      std::fill(v.data.begin(), v.data.end(), 0.0);
    }
  }
}

void Detector::restore(std::span<const std::pair<std::string, Array>> values, std::optional<OrthoBasis> basis) {
  for (auto& p : params_) {
    auto it = std::find_if(values.begin(), values.end(), [&](const auto& v) { return v.first == p.name; });
    if (it == values.end()) throw FormatError(FormatError::Code::kParse, "model: missing parameter " + p.name);
    if (it->second.shape != p.node.shape()) {
      throw FormatError(FormatError::Code::kParse, "model: parameter " + p.name + " has shape " +
                                                       shape_string(it->second.shape) + ", expected " +
                                                       shape_string(p.node.shape()));
    }
    p.node.mutable_value() = it->second;
  }
  if (values.size() != params_.size()) throw FormatError(FormatError::Code::kParse, "model: unexpected parameters");
  if (is_om(config_.head) != basis.has_value()) {
    throw FormatError(FormatError::Code::kParse, "model: basis presence does not match head kind");
  }
  if (basis && (basis->classes() != config_.cls_outputs() || basis->dim() != config_.feature_dim)) {
    throw FormatError(FormatError::Code::kParse, "model: basis shape does not match config");
  }
  basis_ = std::move(basis);
}

// ---------------------------------------------------------------------------
// Targets

std::size_t DenseTargets::num_positive() const noexcept {
  return static_cast<std::size_t>(std::count(positive.begin(), positive.end(), true));
}

double centerness_target(double l, double t, double r, double b) noexcept {
  const double lr = std::min(l, r) / std::max(l, r);
  const double tb = std::min(t, b) / std::max(t, b);
  return std::sqrt(lr * tb);
}

DenseTargets assign_targets(std::span<const Annotation> annotations, const GridSpec& grid, double center_radius,
                            std::size_t classes) {
  const std::size_t l_count = grid.locations();
  DenseTargets t;
  t.classes = classes;
  t.cls = Array(Shape{l_count, classes});
  t.labels.assign(l_count, static_cast<int>(classes));
  t.reg = Array(Shape{l_count, 4});
  t.boxes = Array(Shape{l_count, 4});
  t.centerness.assign(l_count, 0.0);
  t.positive.assign(l_count, false);
  t.gt_index.assign(l_count, -1);
  const double radius = center_radius * static_cast<double>(grid.stride);
  const double stride = static_cast<double>(grid.stride);
  for (std::size_t row = 0; row < grid.height; ++row) {
    for (std::size_t col = 0; col < grid.width; ++col) {
      const double x = grid.center_x(col), y = grid.center_y(row);
      int best = -1;
      double best_area = 0.0;
      for (std::size_t g = 0; g < annotations.size(); ++g) {
        const Box& b = annotations[g].box;
        const bool inside = x > b.x1 && x < b.x2 && y > b.y1 && y < b.y2;
        const double cx = 0.5 * (b.x1 + b.x2), cy = 0.5 * (b.y1 + b.y2);
        const bool central = std::abs(x - cx) < radius && std::abs(y - cy) < radius;
        if (!inside || !central) continue;
        if (best < 0 || b.area() < best_area) {
          best = static_cast<int>(g);
          best_area = b.area();
        }
      }
      if (best < 0) continue;
      const std::size_t loc = row * grid.width + col;
      const Annotation& a = annotations[static_cast<std::size_t>(best)];
      const int cls = a.class_id;
      if (cls < 0 || static_cast<std::size_t>(cls) >= classes) {
        throw ContractError("assign_targets: class id " + std::to_string(cls) + " out of range");
      }
      const double l = x - a.box.x1, tp = y - a.box.y1, r = a.box.x2 - x, bt = a.box.y2 - y;
      t.positive[loc] = true;
      t.gt_index[loc] = best;
      t.labels[loc] = cls;
      t.cls[loc * classes + static_cast<std::size_t>(cls)] = 1.0;
      const double offs[4] = {l / stride, tp / stride, r / stride, bt / stride};
      const double box[4] = {a.box.x1, a.box.y1, a.box.x2, a.box.y2};
      for (std::size_t k = 0; k < 4; ++k) {
        t.reg[loc * 4 + k] = offs[k];
        t.boxes[loc * 4 + k] = box[k];
      }
      t.centerness[loc] = centerness_target(l, tp, r, bt);
    }
  }
  return t;
}

}  // namespace omlab
