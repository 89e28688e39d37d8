#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "omlab/node.hpp"
#include "omlab/ortho_head.hpp"
#include "omlab/synthgen.hpp"

namespace omlab {

enum class HeadKind { kOm, kLinear, kOmSoftmax, kLinearSoftmax };
enum class AuxLoss { kNone, kOpl };

std::string to_string(HeadKind kind);
std::string to_string(AuxLoss aux);
HeadKind parse_head_kind(std::string_view text);
AuxLoss parse_aux_loss(std::string_view text);
inline bool is_om(HeadKind k) noexcept { return k == HeadKind::kOm || k == HeadKind::kOmSoftmax; }
inline bool is_softmax(HeadKind k) noexcept { return k == HeadKind::kOmSoftmax || k == HeadKind::kLinearSoftmax; }

struct OptimizerConfig {
  /// Learning rate at the reference batch size; scaled linearly with batch_size.
  double base_lr = 0.005;
  std::size_t reference_batch = 8;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t epochs = 24;
  std::vector<std::size_t> decay_epochs{16, 22};
  double decay_factor = 0.1;
  std::size_t batch_size = 8;
  std::size_t warmup_iters = 100;
  double warmup_ratio = 1.0 / 3.0;
  /// Global L2 gradient-norm cap; 0 disables clipping.
  double grad_clip_norm = 35.0;

  double lr() const noexcept {
    return base_lr * static_cast<double>(batch_size) / static_cast<double>(reference_batch);
  }
  /// Learning rate for a (0-based) epoch and global iteration.
  double lr_at(std::size_t epoch, std::size_t iteration) const noexcept;
};

struct DetectorConfig {
  std::size_t classes = 9;
  std::size_t image_size = 64;
  std::vector<std::size_t> backbone_widths{16, 32, 64, 64};
  std::size_t stride = 8;
  std::size_t feature_dim = 64;
  HeadKind head = HeadKind::kOm;
  AuxLoss aux = AuxLoss::kNone;
  double aux_weight = 0.5;
  double logit_scale = 1.0;
  std::size_t basis_kernel = 3;
  double center_radius = 1.5;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double prior_prob = 0.01;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;

  /// Number of classifier outputs (C, or C+1 with a background slot).
  std::size_t cls_outputs() const noexcept { return is_softmax(head) ? classes + 1 : classes; }
  std::size_t grid() const noexcept { return image_size / stride; }
  void validate() const;

  nlohmann::json to_json() const;
  static DetectorConfig from_json(const nlohmann::json& j);
};

struct ForwardOutput {
  std::size_t batch = 0, grid_h = 0, grid_w = 0;
  Node cls;            // [M, cls_outputs], M = batch * grid_h * grid_w in (b, y, x) order
  Node ctr;            // [M] centerness logits
  Node reg;            // [M, 4] positive l,t,r,b offsets in stride units
  Node cls_features;   // [B, N, H, W], input to the final classification layer (no ReLU)
  Node feature_rows;   // [M, N], same values row-per-location
  Node trunk;          // [B, W, H, W] shared trunk output
};

struct NamedParameter {
  std::string name;
  Node node;
};

/// Single-level dense detector with a pluggable final classification layer.
class Detector {
 public:
  explicit Detector(DetectorConfig config);

  const DetectorConfig& config() const noexcept { return config_; }
  std::span<NamedParameter> parameters() noexcept { return params_; }
  std::span<const NamedParameter> parameters() const noexcept { return params_; }
  const Node& param(std::string_view name) const;
  bool has_param(std::string_view name) const noexcept;
  const std::optional<OrthoBasis>& basis() const noexcept { return basis_; }

  /// images: [B,3,S,S] (or a single [3,S,S]).
  ForwardOutput forward(const Node& images) const;
  /// Final classification layer on feature rows [M,N] -> [M, cls_outputs].
  Node classify_rows(const Node& feature_rows) const;

  /// Classification branch plus final layer on trunk output [B,W,H,W] -> [M, cls_outputs].
  Node classify_trunk(const Node& trunk) const;
  /// Zeroes the classifier (linear heads), box and centerness output layers.
  void zero_final_layers();
  /// Replaces parameter values and the basis, e.g. after deserialization.
  void restore(std::span<const std::pair<std::string, Array>> values, std::optional<OrthoBasis> basis);

 private:
  Node conv_block(const Node& x, std::string_view prefix, std::size_t stride) const;
  Node cls_branch(const Node& trunk) const;

  DetectorConfig config_;
  std::vector<NamedParameter> params_;
  std::optional<OrthoBasis> basis_;
};

/// Centre of grid cell (row, col) in pixels.
struct GridSpec {
  std::size_t height = 0, width = 0, stride = 8;

  double center_x(std::size_t col) const noexcept { return (static_cast<double>(col) + 0.5) * static_cast<double>(stride); }
  double center_y(std::size_t row) const noexcept { return (static_cast<double>(row) + 0.5) * static_cast<double>(stride); }
  std::size_t locations() const noexcept { return height * width; }
};

struct DenseTargets {
  std::size_t classes = 0;
  Array cls;                       // [L, C] one-hot or all-zero
  std::vector<int> labels;         // class id, or C for background
  Array reg;                       // [L, 4] l,t,r,b in stride units (zero for background)
  Array boxes;                     // [L, 4] assigned gt box in pixels
  std::vector<double> centerness;  // [L]
  std::vector<bool> positive;      // [L]
  std::vector<int> gt_index;       // [L], -1 for background

  std::size_t num_positive() const noexcept;
};

/// Center-sampling assignment: a location is positive when strictly inside a
/// box and within center_radius * stride (per axis) of the box centre; the
/// smaller box wins overlaps.
DenseTargets assign_targets(std::span<const Annotation> annotations, const GridSpec& grid, double center_radius,
                            std::size_t classes);

double centerness_target(double l, double t, double r, double b) noexcept;

}  // namespace omlab
