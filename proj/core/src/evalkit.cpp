#include "omlab/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "binary_io.hpp"
#include "json_util.hpp"
#include "omlab/error.hpp"

namespace omlab {

ImageMatches match_detections(std::span<const Detection> detections, std::span<const Annotation> annotations,
                              double iou_thresh) {
  std::vector<Detection> ranked(detections.begin(), detections.end());
  std::sort(ranked.begin(), ranked.end(), detection_before);
  ImageMatches result;
  result.gt_predicted_class.assign(annotations.size(), -1);
  for (const Detection& d : ranked) {
    int best_same = -1, best_other = -1;
    double iou_same = iou_thresh, iou_other = iou_thresh;
    for (std::size_t g = 0; g < annotations.size(); ++g) {
      if (result.gt_predicted_class[g] >= 0) continue;
      const double v = iou(d.box, annotations[g].box);
      if (annotations[g].class_id == d.class_id) {
        if (v >= iou_same && (best_same < 0 || v > iou_same)) {
          best_same = static_cast<int>(g);
          iou_same = v;
        }
      } else if (v >= iou_other && (best_other < 0 || v > iou_other)) {
        best_other = static_cast<int>(g);
        iou_other = v;
      }
    }
    DetectionMatch m{d, MatchKind::kFalsePositive, -1};
    if (best_same >= 0) {
      m.kind = MatchKind::kTruePositive;
      m.gt = best_same;
    } else if (best_other >= 0) {
      m.kind = MatchKind::kConfusion;
      m.gt = best_other;
    }
    if (m.gt >= 0) result.gt_predicted_class[static_cast<std::size_t>(m.gt)] = d.class_id;
    result.detections.push_back(m);
  }
  return result;
}

double average_precision_ranked(std::span<const bool> hits, std::size_t gt_count) {
  if (gt_count == 0) throw ContractError("average_precision: class has no ground truth");
  std::vector<double> recall, precision;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    if (hits[i]) ++tp;
    recall.push_back(static_cast<double>(tp) / static_cast<double>(gt_count));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
  }
  // Precision envelope, then area under the step curve.
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    if (recall[i] > prev_recall) {
      ap += (recall[i] - prev_recall) * precision[i];
      prev_recall = recall[i];
    }
  }
  return ap;
}

ApResult average_precision(std::span<const std::vector<Detection>> detections,
                           std::span<const std::vector<Annotation>> annotations, std::size_t classes,
                           double iou_thresh) {
  if (detections.size() != annotations.size()) throw ContractError("average_precision: image count mismatch");
  ApResult result;
  result.per_class.assign(classes, std::nullopt);
  result.gt_counts.assign(classes, 0);
  for (const auto& anns : annotations) {
    for (const auto& a : anns) {
      if (a.class_id < 0 || static_cast<std::size_t>(a.class_id) >= classes) {
        throw ContractError("average_precision: gt class out of range");
      }
      ++result.gt_counts[static_cast<std::size_t>(a.class_id)];
    }
  }
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (result.gt_counts[c] == 0) {
      result.warnings.push_back("class " + std::to_string(c) + " has no ground truth; excluded from mAP");
      continue;
    }
    struct Ranked {
      Detection det;
      std::size_t image;
    };
    std::vector<Ranked> ranked;
    for (std::size_t i = 0; i < detections.size(); ++i) {
      for (const auto& d : detections[i]) {
        if (d.class_id == static_cast<int>(c)) ranked.push_back({d, i});
      }
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
      if (a.det.score != b.det.score) return a.det.score > b.det.score;
      return a.image < b.image;
    });
    std::vector<std::vector<bool>> used(annotations.size());
    for (std::size_t i = 0; i < annotations.size(); ++i) used[i].assign(annotations[i].size(), false);
    auto hits = std::make_unique<bool[]>(ranked.size());
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      const auto& anns = annotations[ranked[r].image];
      int best = -1;
      double best_iou = iou_thresh;
      for (std::size_t g = 0; g < anns.size(); ++g) {
        if (anns[g].class_id != static_cast<int>(c) || used[ranked[r].image][g]) continue;
        const double v = iou(ranked[r].det.box, anns[g].box);
        if (v >= best_iou && (best < 0 || v > best_iou)) {
          best = static_cast<int>(g);
          best_iou = v;
        }
      }
      if (best >= 0) {
        used[ranked[r].image][static_cast<std::size_t>(best)] = true;
        hits[r] = true;
      }
    }
    const double ap = average_precision_ranked(std::span<const bool>(hits.get(), ranked.size()), result.gt_counts[c]);
    result.per_class[c] = ap;
    total += ap;
    ++counted;
  }
  result.map = counted ? total / static_cast<double>(counted) : 0.0;
  return result;
}

std::size_t ConfusionMatrix::row_total(std::size_t gt) const {
  std::size_t t = 0;
  for (std::size_t j = 0; j <= classes; ++j) t += at(gt, j);
  return t;
}

std::vector<double> ConfusionMatrix::percentages() const {
  std::vector<double> out(counts.size(), 0.0);
  for (std::size_t i = 0; i <= classes; ++i) {
    const std::size_t t = row_total(i);
    if (t == 0) continue;
    for (std::size_t j = 0; j <= classes; ++j) {
      out[i * (classes + 1) + j] = 100.0 * static_cast<double>(at(i, j)) / static_cast<double>(t);
    }
  }
  return out;
}

double ConfusionMatrix::family_confusion(std::size_t subclasses) const {
  if (subclasses == 0) throw ContractError("family_confusion: subclasses must be positive");
  std::size_t matched = 0, within = 0;
  for (std::size_t i = 0; i < classes; ++i) {
    for (std::size_t j = 0; j < classes; ++j) {
      matched += at(i, j);
      if (i != j && i / subclasses == j / subclasses) within += at(i, j);
    }
  }
  return matched ? static_cast<double>(within) / static_cast<double>(matched) : 0.0;
}

std::string ConfusionMatrix::to_csv() const {
  std::string out = "gt\\pred";
  for (std::size_t j = 0; j < classes; ++j) out += "," + std::to_string(j);
  out += ",missed\n";
  for (std::size_t i = 0; i <= classes; ++i) {
    out += i < classes ? std::to_string(i) : std::string("background");
    for (std::size_t j = 0; j <= classes; ++j) out += "," + std::to_string(at(i, j));
    out += "\n";
  }
  return out;
}

ConfusionMatrix confusion_matrix(std::span<const ImageMatches> matches,
                                 std::span<const std::vector<Annotation>> annotations, std::size_t classes) {
  if (matches.size() != annotations.size()) throw ContractError("confusion_matrix: image count mismatch");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < matches.size(); ++i) {
    const auto& anns = annotations[i];
    if (matches[i].gt_predicted_class.size() != anns.size()) throw ContractError("confusion_matrix: gt count mismatch");
    for (std::size_t g = 0; g < anns.size(); ++g) {
      const int pred = matches[i].gt_predicted_class[g];
      cm.at(static_cast<std::size_t>(anns[g].class_id), pred < 0 ? classes : static_cast<std::size_t>(pred)) += 1;
    }
    for (const auto& d : matches[i].detections) {
      if (d.kind == MatchKind::kFalsePositive) cm.at(classes, static_cast<std::size_t>(d.detection.class_id)) += 1;
    }
  }
  return cm;
}

nlohmann::json OrthogonalityStats::to_json() const {
  nlohmann::json matrix = nlohmann::json::array();
  for (std::size_t i = 0; i < classes; ++i) {
    matrix.push_back(std::vector<double>(mean_cosine.data.begin() + static_cast<std::ptrdiff_t>(i * classes),
                                         mean_cosine.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * classes)));
  }
  return {{"samples", samples},
          {"class_counts", class_counts},
          {"mean_inter_abs_cos", has_inter ? nlohmann::json(inter_abs_cos) : nlohmann::json(nullptr)},
          {"mean_intra_cos", has_intra ? nlohmann::json(intra_cos) : nlohmann::json(nullptr)},
          {"class_mean_cosine", matrix}};
}

namespace {

std::vector<double> unit(std::span<const double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double n = std::max(std::sqrt(sq), 1e-12);
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  const auto ua = unit(a), ub = unit(b);
  double d = 0.0;
  for (std::size_t i = 0; i < ua.size(); ++i) d += ua[i] * ub[i];
  return std::clamp(d, -1.0, 1.0);
}

}  // namespace

OrthogonalityStats orthogonality_metrics(const Array& features, std::span<const int> labels, std::size_t classes) {
  if (features.rank() != 2 || features.shape[0] != labels.size()) {
    throw ContractError("orthogonality_metrics: expected features [S,N] with one label per row");
  }
  const std::size_t s = features.shape[0], n = features.shape[1];
  OrthogonalityStats st;
  st.classes = classes;
  st.samples = s;
  st.class_counts.assign(classes, 0);
  std::vector<std::vector<std::vector<double>>> per_class(classes);
  for (std::size_t i = 0; i < s; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ContractError("orthogonality_metrics: label out of range");
    }
    per_class[static_cast<std::size_t>(labels[i])].push_back(
        unit(std::span<const double>(features.data).subspan(i * n, n)));
    ++st.class_counts[static_cast<std::size_t>(labels[i])];
  }
  std::vector<std::vector<double>> means(classes, std::vector<double>(n, 0.0));
  for (std::size_t c = 0; c < classes; ++c) {
    for (const auto& v : per_class[c]) {
      for (std::size_t k = 0; k < n; ++k) means[c][k] += v[k];
    }
    for (double& x : means[c]) x /= std::max<std::size_t>(per_class[c].size(), 1);
  }
  st.mean_cosine = Array(Shape{classes, classes});
  double inter = 0.0, intra = 0.0;
  std::size_t inter_n = 0, intra_n = 0;
  for (std::size_t a = 0; a < classes; ++a) {
    if (per_class[a].empty()) continue;
    for (std::size_t b = 0; b < classes; ++b) {
      if (per_class[b].empty()) continue;
      const double c = a == b ? 1.0 : cosine(means[a], means[b]);
      st.mean_cosine[a * classes + b] = c;
      if (b > a) {
        inter += std::abs(c);
        ++inter_n;
      }
    }
    const auto& v = per_class[a];
    if (v.size() < 2) continue;
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      for (std::size_t j = i + 1; j < v.size(); ++j) {
        double d = 0.0;
        for (std::size_t k = 0; k < n; ++k) d += v[i][k] * v[j][k];
        sum += d;
        ++pairs;
      }
    }
    intra += sum / static_cast<double>(pairs);
    ++intra_n;
  }
  st.has_inter = inter_n > 0;
  st.has_intra = intra_n > 0;
  st.inter_abs_cos = st.has_inter ? inter / static_cast<double>(inter_n) : 0.0;
  st.intra_cos = st.has_intra ? intra / static_cast<double>(intra_n) : 0.0;
  return st;
}

nlohmann::json EvalConfig::to_json() const {
  return {{"iou_thresh", iou_thresh},
          {"score_threshold", infer.score_threshold},
          {"nms_iou", infer.nms_iou},
          {"pre_nms_top_k", infer.pre_nms_top_k},
          {"max_per_image", infer.max_per_image},
          {"confusion_score_threshold", confusion_score_threshold},
          {"batch_size", batch_size}};
}

EvalConfig EvalConfig::from_json(const nlohmann::json& j) {
  constexpr std::string_view where = "eval";
  jsonutil::check_keys(j,
                       {"iou_thresh", "score_threshold", "nms_iou", "pre_nms_top_k", "max_per_image",
                        "confusion_score_threshold", "batch_size"},
                       where);
  EvalConfig c;
  jsonutil::read_opt(j, "iou_thresh", c.iou_thresh, where);
  jsonutil::read_opt(j, "score_threshold", c.infer.score_threshold, where);
  jsonutil::read_opt(j, "nms_iou", c.infer.nms_iou, where);
  jsonutil::read_opt(j, "pre_nms_top_k", c.infer.pre_nms_top_k, where);
  jsonutil::read_opt(j, "max_per_image", c.infer.max_per_image, where);
  jsonutil::read_opt(j, "confusion_score_threshold", c.confusion_score_threshold, where);
  jsonutil::read_opt(j, "batch_size", c.batch_size, where);
  return c;
}

void EvalConfig::validate() const {
  if (!(iou_thresh > 0.0 && iou_thresh < 1.0)) throw ContractError("eval: iou_thresh must be in (0,1)");
  if (!(confusion_score_threshold >= 0.0 && confusion_score_threshold <= 1.0)) {
    throw ContractError("eval: confusion_score_threshold must be in [0,1]");
  }
  if (batch_size == 0) throw ContractError("eval: batch_size must be positive");
  infer.validate();
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json per_class = nlohmann::json::array();
  for (std::size_t c = 0; c < ap.per_class.size(); ++c) {
    per_class.push_back({{"class_id", c},
                         {"gt_count", ap.gt_counts[c]},
                         {"ap50", ap.per_class[c] ? nlohmann::json(*ap.per_class[c]) : nlohmann::json(nullptr)}});
  }
  nlohmann::json rows = nlohmann::json::array();
  const auto pct = confusion.percentages();
  nlohmann::json pct_rows = nlohmann::json::array();
  const std::size_t w = confusion.classes + 1;
  for (std::size_t i = 0; i < w; ++i) {
    rows.push_back(std::vector<std::size_t>(confusion.counts.begin() + static_cast<std::ptrdiff_t>(i * w),
                                            confusion.counts.begin() + static_cast<std::ptrdiff_t>((i + 1) * w)));
    pct_rows.push_back(std::vector<double>(pct.begin() + static_cast<std::ptrdiff_t>(i * w),
                                           pct.begin() + static_cast<std::ptrdiff_t>((i + 1) * w)));
  }
  return {{"map50", ap.map},
          {"per_class", per_class},
          {"warnings", ap.warnings},
          {"confusion", {{"counts", rows}, {"row_percent", pct_rows}}},
          {"family_confusion", family_confusion},
          {"matched_detections", matched_detections},
          {"orthogonality", orthogonality.to_json()},
          {"metadata", metadata}};
}

EvalArtifacts evaluate(const Detector& model, std::span<const Scene> scenes, const EvalConfig& config,
                       std::size_t subclasses, nlohmann::json metadata) {
  config.validate();
  const std::size_t classes = model.config().classes;
  const std::size_t n = model.config().feature_dim;
  EvalArtifacts out;
  out.inference = infer_batch(model, scenes, config.infer, true, config.batch_size);
  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<Annotation>> anns;
  std::vector<ImageMatches> confusion_matches;
  std::vector<double> tp_features;
  std::vector<int> tp_labels;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    dets.push_back(out.inference[i].detections);
    anns.push_back(scenes[i].annotations);
    out.matches.push_back(match_detections(dets.back(), anns.back(), config.iou_thresh));
    std::vector<Detection> strong;
    for (const auto& d : dets.back()) {
      if (d.score >= config.confusion_score_threshold) strong.push_back(d);
    }
    confusion_matches.push_back(match_detections(strong, anns.back(), config.iou_thresh));
    for (const auto& m : out.matches.back().detections) {
      if (m.kind != MatchKind::kTruePositive) continue;
      const auto& rows = out.inference[i].feature_rows;
      const auto first = rows.data.begin() + static_cast<std::ptrdiff_t>(m.detection.location * n);
      tp_features.insert(tp_features.end(), first, first + static_cast<std::ptrdiff_t>(n));
      tp_labels.push_back(m.detection.class_id);
    }
  }
  EvalReport& r = out.report;
  r.ap = average_precision(dets, anns, classes, config.iou_thresh);
  r.confusion = confusion_matrix(confusion_matches, anns, classes);
  r.family_confusion = r.confusion.family_confusion(subclasses);
  for (std::size_t i = 0; i < classes; ++i) {
    for (std::size_t j = 0; j < classes; ++j) r.matched_detections += r.confusion.at(i, j);
  }
  r.orthogonality = orthogonality_metrics(Array(Shape{tp_labels.size(), n}, std::move(tp_features)), tp_labels, classes);
  r.metadata = std::move(metadata);
  return out;
}

namespace {

void append_double(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

}  // namespace

std::string features_csv(const Detector& model, std::span<const Scene> scenes, const EvalConfig& config,
                         std::size_t* rows) {
  config.validate();
  const DetectorConfig& cfg = model.config();
  const std::size_t n = cfg.feature_dim;
  std::string out = "scene_id,class_id,matched";
  for (std::size_t k = 0; k < n; ++k) out += ",f_" + std::to_string(k);
  out += "\n";
  std::size_t count = 0;
  const GridSpec grid{cfg.grid(), cfg.grid(), cfg.stride};
  const auto inference = infer_batch(model, scenes, config.infer, true, config.batch_size);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Scene& s = scenes[i];
    const DenseTargets t = assign_targets(s.annotations, grid, cfg.center_radius, cfg.classes);
    const ImageMatches m = match_detections(inference[i].detections, s.annotations, config.iou_thresh);
    std::vector<bool> matched(grid.locations(), false);
    for (const auto& d : m.detections) {
      if (d.kind == MatchKind::kTruePositive) matched[d.detection.location] = true;
    }
    for (std::size_t loc = 0; loc < grid.locations(); ++loc) {
      if (!t.positive[loc]) continue;
      out += std::to_string(s.id) + "," + std::to_string(t.labels[loc]) + "," + (matched[loc] ? "1" : "0");
      for (std::size_t k = 0; k < n; ++k) {
        out += ",";
        append_double(out, inference[i].feature_rows[loc * n + k]);
      }
      out += "\n";
      ++count;
    }
  }
  if (rows) *rows = count;
  return out;
}

std::size_t export_features(const Detector& model, std::span<const Scene> scenes, const std::string& path,
                            const EvalConfig& config) {
  std::size_t rows = 0;
  const std::string text = features_csv(model, scenes, config, &rows);
  binio::write_file(path, text);
  return rows;
}

}  // namespace omlab
