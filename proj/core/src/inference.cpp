#include "omlab/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "omlab/error.hpp"
#include "omlab/training.hpp"

namespace omlab {

bool detection_before(const Detection& a, const Detection& b) noexcept {
  if (a.score != b.score) return a.score > b.score;
  if (a.class_id != b.class_id) return a.class_id < b.class_id;
  if (a.box != b.box) return a.box < b.box;
  return a.location < b.location;
}

void InferConfig::validate() const {
  if (!(score_threshold > 0.0 && score_threshold <= 1.0)) throw ContractError("infer: score_threshold must be in (0,1]");
  if (!(nms_iou > 0.0 && nms_iou < 1.0)) throw ContractError("infer: nms_iou must be in (0,1)");
  if (pre_nms_top_k == 0 || max_per_image == 0) throw ContractError("infer: top-k limits must be positive");
}

std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) throw ContractError("nms: iou_threshold must be in (0,1)");
  std::sort(detections.begin(), detections.end(), detection_before);
  std::vector<Detection> kept;
  for (const Detection& d : detections) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.class_id == d.class_id && iou(k.box, d.box) > iou_threshold;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Array class_probabilities(const Array& cls_outputs, HeadKind head, std::size_t classes) {
  if (cls_outputs.rank() != 2) throw ContractError("class_probabilities: expected [M,K]");
  const std::size_t m = cls_outputs.shape[0], k = cls_outputs.shape[1];
  Array probs(Shape{m, classes});
  if (!is_softmax(head)) {
    if (k != classes) throw ContractError("class_probabilities: expected C columns");
    for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = sigmoid(cls_outputs[i]);
    return probs;
  }
  if (k != classes + 1) throw ContractError("class_probabilities: expected C+1 columns");
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = cls_outputs.data.data() + r * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < classes; ++j) probs[r * classes + j] = std::exp(row[j] - mx) / z;
  }
  return probs;
}

std::vector<Detection> decode_detections(const Array& class_probs, std::span<const double> ctr_logits,
                                         const Array& reg, const GridSpec& grid, double image_size,
                                         const InferConfig& config) {
  config.validate();
  const std::size_t l_count = grid.locations();
  if (class_probs.rank() != 2 || class_probs.shape[0] != l_count || ctr_logits.size() != l_count ||
      reg.shape != Shape{l_count, 4}) {
    throw ContractError("decode_detections: outputs do not match the grid");
  }
  const std::size_t c = class_probs.shape[1];
  const double stride = static_cast<double>(grid.stride);
  std::vector<Detection> candidates;
  for (std::size_t loc = 0; loc < l_count; ++loc) {
    const double ctr = sigmoid(ctr_logits[loc]);
    const double cx = grid.center_x(loc % grid.width), cy = grid.center_y(loc / grid.width);
    const double* o = reg.data.data() + loc * 4;
    const Box box{std::clamp(cx - o[0] * stride, 0.0, image_size), std::clamp(cy - o[1] * stride, 0.0, image_size),
                  std::clamp(cx + o[2] * stride, 0.0, image_size), std::clamp(cy + o[3] * stride, 0.0, image_size)};
    for (std::size_t k = 0; k < c; ++k) {
      const double score = std::clamp(class_probs[loc * c + k] * ctr, 0.0, 1.0);
      if (score > config.score_threshold) {
        candidates.push_back({box, static_cast<int>(k), score, loc});
      }
    }
  }
  std::sort(candidates.begin(), candidates.end(), detection_before);
  if (candidates.size() > config.pre_nms_top_k) candidates.resize(config.pre_nms_top_k);
  std::vector<Detection> kept = nms(std::move(candidates), config.nms_iou);
  if (kept.size() > config.max_per_image) kept.resize(config.max_per_image);
  return kept;
}

std::vector<ImageInference> infer_batch(const Detector& model, std::span<const Scene> scenes,
                                        const InferConfig& config, bool capture_features, std::size_t batch_size) {
  config.validate();
  if (batch_size == 0) throw ContractError("infer_batch: batch_size must be positive");
  const DetectorConfig& cfg = model.config();
  NoGradGuard no_grad;
  std::vector<ImageInference> results;
  results.reserve(scenes.size());
  for (std::size_t start = 0; start < scenes.size(); start += batch_size) {
    const std::size_t end = std::min(scenes.size(), start + batch_size);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const ForwardOutput out = model.forward(Node::constant(stack_images(scenes, idx)));
    const GridSpec grid{out.grid_h, out.grid_w, cfg.stride};
    const std::size_t per = grid.locations();
    const Array probs = class_probabilities(out.cls.value(), cfg.head, cfg.classes);
    const Array& reg = out.reg.value();
    const Array& ctr = out.ctr.value();
    const Array& feats = out.feature_rows.value();
    const std::size_t n = cfg.feature_dim, c = cfg.classes;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      auto slice = [&](const Array& a, std::size_t width) {
        const auto first = a.data.begin() + static_cast<std::ptrdiff_t>(b * per * width);
        return Array(Shape{per, width}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(per * width)));
      };
      ImageInference r;
      r.detections = decode_detections(slice(probs, c), std::span<const double>(ctr.data).subspan(b * per, per),
                                       slice(reg, 4), grid, static_cast<double>(cfg.image_size), config);
      if (capture_features) r.feature_rows = slice(feats, n);
      results.push_back(std::move(r));
    }
  }
  return results;
}

std::vector<Detection> infer(const Detector& model, const Scene& scene, const InferConfig& config) {
  return infer_batch(model, std::span<const Scene>(&scene, 1), config).front().detections;
}

}  // namespace omlab
