#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "omlab/box.hpp"
#include "omlab/detector.hpp"

namespace omlab {

struct Detection {
  Box box;
  int class_id = 0;
  double score = 0.0;
  std::size_t location = 0;  // grid location (row * width + col) that produced it

  friend bool operator==(const Detection&, const Detection&) = default;
};

/// Ranking order used everywhere: score descending, then lower class id,
/// then lexicographic box, then location.
bool detection_before(const Detection& a, const Detection& b) noexcept;

struct InferConfig {
  double score_threshold = 0.05;
  double nms_iou = 0.5;
  std::size_t pre_nms_top_k = 1000;
  std::size_t max_per_image = 100;

  void validate() const;
};

/// Class-wise greedy suppression; a box is dropped when its IoU with a kept
/// box of the same class exceeds iou_threshold. Output is in ranking order.
std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold);

/// Turns dense per-location outputs of one image into detections.
/// class_probs [L,C] in [0,1], ctr_logits [L], reg [L,4] in stride units.
std::vector<Detection> decode_detections(const Array& class_probs, std::span<const double> ctr_logits,
                                         const Array& reg, const GridSpec& grid, double image_size,
                                         const InferConfig& config);

/// Class probabilities [M,C] from raw classifier outputs [M,cls_outputs].
Array class_probabilities(const Array& cls_outputs, HeadKind head, std::size_t classes);

struct ImageInference {
  std::vector<Detection> detections;
  Array feature_rows;  // [L,N] classifier inputs, only filled when requested
};

std::vector<ImageInference> infer_batch(const Detector& model, std::span<const Scene> scenes,
                                        const InferConfig& config, bool capture_features = false,
                                        std::size_t batch_size = 16);
std::vector<Detection> infer(const Detector& model, const Scene& scene, const InferConfig& config = {});

}  // namespace omlab
