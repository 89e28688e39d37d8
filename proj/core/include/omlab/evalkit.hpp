#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "omlab/detector.hpp"
#include "omlab/inference.hpp"
#include "omlab/synthgen.hpp"

namespace omlab {

enum class MatchKind { kTruePositive, kConfusion, kFalsePositive };

struct DetectionMatch {
  Detection detection;
  MatchKind kind = MatchKind::kFalsePositive;
  int gt = -1;  // annotation index, -1 for false positives
};

struct ImageMatches {
  std::vector<DetectionMatch> detections;  // ranking order
  std::vector<int> gt_predicted_class;     // per annotation: class it was matched as, -1 if missed
};

/// Greedy matching in ranking order; a detection takes the best-IoU unmatched
/// gt of its own class, otherwise the best-IoU unmatched gt of another class
/// (a confusion), otherwise it is a false positive.
ImageMatches match_detections(std::span<const Detection> detections, std::span<const Annotation> annotations,
                              double iou_thresh = 0.5);

/// All-points interpolated AP of a ranked list of hit/miss flags.
double average_precision_ranked(std::span<const bool> hits, std::size_t gt_count);

struct ApResult {
  std::vector<std::optional<double>> per_class;  // empty when the class has no gt
  std::vector<std::size_t> gt_counts;
  double map = 0.0;
  std::vector<std::string> warnings;
};

/// Per-class AP@iou over a set of images (standard per-class matching).
ApResult average_precision(std::span<const std::vector<Detection>> detections,
                           std::span<const std::vector<Annotation>> annotations, std::size_t classes,
                           double iou_thresh = 0.5);

/// [C+1, C+1] counts; rows are gt classes (row C = background), columns are
/// predicted classes (column C = missed).
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::size_t> counts;

  explicit ConfusionMatrix(std::size_t c = 0) : classes(c), counts((c + 1) * (c + 1), 0) {}
  std::size_t& at(std::size_t gt, std::size_t pred) { return counts[gt * (classes + 1) + pred]; }
  std::size_t at(std::size_t gt, std::size_t pred) const { return counts[gt * (classes + 1) + pred]; }
  std::size_t row_total(std::size_t gt) const;
  /// Row-normalized percentages (all-zero rows stay zero).
  std::vector<double> percentages() const;
  /// Off-diagonal mass between subclasses of the same family over all gt->class matches.
  double family_confusion(std::size_t subclasses) const;
  std::string to_csv() const;
};

ConfusionMatrix confusion_matrix(std::span<const ImageMatches> matches, std::span<const std::vector<Annotation>> annotations,
                                 std::size_t classes);

struct OrthogonalityStats {
  std::size_t classes = 0;
  std::size_t samples = 0;
  std::vector<std::size_t> class_counts;
  Array mean_cosine;  // [C,C] cosine between class means; rows of absent classes are zero
  double inter_abs_cos = 0.0;
  bool has_inter = false;  // at least two classes present
  double intra_cos = 0.0;
  bool has_intra = false;  // at least one class with two samples

  nlohmann::json to_json() const;
};

/// features [S,N], one label per row.
OrthogonalityStats orthogonality_metrics(const Array& features, std::span<const int> labels, std::size_t classes);

struct EvalConfig {
  double iou_thresh = 0.5;
  InferConfig infer;
  /// Detections below this score are ignored by the confusion matrix.
  double confusion_score_threshold = 0.0;
  std::size_t batch_size = 16;

  nlohmann::json to_json() const;
  static EvalConfig from_json(const nlohmann::json& j);
  void validate() const;
};

struct EvalReport {
  ApResult ap;
  ConfusionMatrix confusion;
  double family_confusion = 0.0;
  std::size_t matched_detections = 0;
  OrthogonalityStats orthogonality;
  nlohmann::json metadata;

  nlohmann::json to_json() const;
};

struct EvalArtifacts {
  EvalReport report;
  std::vector<ImageMatches> matches;
  std::vector<ImageInference> inference;
};

EvalArtifacts evaluate(const Detector& model, std::span<const Scene> scenes, const EvalConfig& config,
                       std::size_t subclasses, nlohmann::json metadata = nlohmann::json::object());

/// CSV of classifier-input features at every positive (assigned) location:
/// scene_id,class_id,matched,f_0..f_{N-1}. Returns the number of rows.
std::size_t export_features(const Detector& model, std::span<const Scene> scenes, const std::string& path,
                            const EvalConfig& config = {});
std::string features_csv(const Detector& model, std::span<const Scene> scenes, const EvalConfig& config,
                         std::size_t* rows = nullptr);

}  // namespace omlab
