#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <vector>

#include "bgattack/detector.hpp"
#include "bgattack/errors.hpp"
#include "bgattack/scene.hpp"

namespace bgattack {

struct EvalConfig {
  double conf_threshold = 0.25;
  double iou_threshold = 0.5;
  double nms_iou = 0.5;

  void validate() const {
    for (double v : {conf_threshold, iou_threshold, nms_iou}) {
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("evaluation thresholds must lie in [0, 1]");
    }
  }

  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

inline double iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

namespace detail {

// Ranking order: score descending, then cell_id ascending.
inline bool ranks_before(const Detection& a, const Detection& b) {
  if (a.objectness != b.objectness) return a.objectness > b.objectness;
  return a.cell_id < b.cell_id;
}

}  // namespace detail

/// Confidence filter then greedy per-class suppression. Output is ranked.
inline DetectionSet nms(const DetectionSet& ds, const EvalConfig& cfg) {
  std::vector<Detection> ranked;
  for (const auto& d : ds.detections) {
    if (d.objectness >= cfg.conf_threshold) ranked.push_back(d);
  }
  std::stable_sort(ranked.begin(), ranked.end(), detail::ranks_before);

  DetectionSet out{{}, ds.image_dims};
  for (const auto& d : ranked) {
    const bool suppressed = std::any_of(out.detections.begin(), out.detections.end(),
                                        [&](const Detection& k) {
                                          return k.label() == d.label() &&
                                                 iou(k.box, d.box) > cfg.nms_iou;
                                        });
    if (!suppressed) out.detections.push_back(d);
  }
  return out;
}

struct RankedDetection {
  double score = 0.0;
  bool true_positive = false;
};

struct ApResult {
  double value = 0.0;
  bool flagged = false;  // num_gt == 0, AP undefined and reported as 0
};

/// Sum over ranks r of Precision(r) * (Recall(r) - Recall(r-1)) on a list
/// already sorted by descending score. No interpolation.
inline ApResult average_precision(const std::vector<RankedDetection>& ranked, std::size_t num_gt) {
  if (num_gt == 0) return {0.0, true};
  double ap = 0.0;
  double prev_recall = 0.0;
  std::size_t tp = 0;
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    if (ranked[r].true_positive) ++tp;
    const double precision = static_cast<double>(tp) / static_cast<double>(r + 1);
    const double recall = static_cast<double>(tp) / static_cast<double>(num_gt);
    ap += precision * (recall - prev_recall);
    prev_recall = recall;
  }
  return {ap, false};
}

/// Class-aware greedy matching in ranking order: each detection takes the
/// unmatched ground-truth box of its class with the highest IoU, if that IoU
/// reaches the threshold. Returns a TP flag per ranked detection.
inline std::vector<bool> match_detections(const std::vector<Detection>& ranked,
                                          const std::vector<GtBox>& gts, double iou_threshold) {
  std::vector<bool> taken(gts.size(), false);
  std::vector<bool> tp(ranked.size(), false);
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto label = ranked[i].label();
    std::optional<std::size_t> best;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] || gts[g].class_id != label) continue;
      const double v = iou(ranked[i].box, Box::from(gts[g]));
      if (v > best_iou) {
        best_iou = v;
        best = g;
      }
    }
    if (best && best_iou >= iou_threshold) {
      taken[*best] = true;
      tp[i] = true;
    }
  }
  return tp;
}

inline double map_over_classes(const std::vector<double>& per_class_ap) {
  if (per_class_ap.empty()) throw DataError("mAP needs at least one class");
  double s = 0.0;
  for (double v : per_class_ap) s += v;
  return s / static_cast<double>(per_class_ap.size());
}

/// Ground truth of one image with its post-NMS detections.
struct ImageEval {
  std::vector<GtBox> ground_truth;
  std::vector<Detection> detections;
};

/// TP / (TP + FN) over all images with greedy matching.
inline double detection_rate(const std::vector<ImageEval>& evals, double iou_threshold = 0.5) {
  std::size_t tp = 0, gt = 0;
  for (const auto& e : evals) {
    auto ranked = e.detections;
    std::stable_sort(ranked.begin(), ranked.end(), detail::ranks_before);
    const auto flags = match_detections(ranked, e.ground_truth, iou_threshold);
    tp += static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true));
    gt += e.ground_truth.size();
  }
  if (gt == 0) throw DataError("detection rate needs at least one ground-truth object");
  return static_cast<double>(tp) / static_cast<double>(gt);
}

/// 1 - attacked / clean performance.
inline double attack_success_rate(double dp_clean, double dp_attack) {
  if (!(dp_clean > 0.0)) throw DataError("attack success rate is undefined for clean performance 0");
  return 1.0 - dp_attack / dp_clean;
}

/// Per-class AP over a set of images. Detections are matched within their
/// image, then ranked across images by (score desc, image asc, cell_id asc).
inline std::map<std::size_t, ApResult> per_class_ap(const std::vector<ImageEval>& evals,
                                                    double iou_threshold = 0.5) {
  struct Entry {
    double score;
    std::size_t image, cell;
    bool tp;
  };
  std::map<std::size_t, std::vector<Entry>> by_class;
  std::map<std::size_t, std::size_t> gt_count;
  for (std::size_t im = 0; im < evals.size(); ++im) {
    auto ranked = evals[im].detections;
    std::stable_sort(ranked.begin(), ranked.end(), detail::ranks_before);
    const auto flags = match_detections(ranked, evals[im].ground_truth, iou_threshold);
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      by_class[ranked[i].label()].push_back({ranked[i].objectness, im, ranked[i].cell_id, flags[i]});
    }
    for (const auto& g : evals[im].ground_truth) ++gt_count[g.class_id];
  }
  std::map<std::size_t, ApResult> out;
  for (const auto& [cls, n] : gt_count) {
    auto entries = by_class[cls];
    std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.image != b.image) return a.image < b.image;
      return a.cell < b.cell;
    });
    std::vector<RankedDetection> ranked;
    for (const auto& e : entries) ranked.push_back({e.score, e.tp});
    out[cls] = average_precision(ranked, n);
  }
  return out;
}

struct EvalSummary {
  std::map<std::size_t, double> ap;  // classes with ground truth
  double map = 0.0;
  double detection_rate = 0.0;
};

/// Runs the detector on every scene (composited with `perturbation` when
/// given), applies NMS and computes AP per class, mAP and DR.
inline EvalSummary evaluate(const std::vector<Scene>& scenes, const AnyDetector& det,
                            const std::optional<Tensor>& perturbation, const EvalConfig& cfg) {
  cfg.validate();
  std::vector<ImageEval> evals;
  evals.reserve(scenes.size());
  for (const auto& s : scenes) {
    const Tensor x = perturbation ? compose_adversarial(s, *perturbation) : s.image;
    evals.push_back({s.ground_truth, nms(det.forward(x), cfg).detections});
  }
  EvalSummary out;
  std::vector<double> aps;
  for (const auto& [cls, r] : per_class_ap(evals, cfg.iou_threshold)) {
    out.ap[cls] = r.value;
    aps.push_back(r.value);
  }
  out.map = map_over_classes(aps);
  out.detection_rate = detection_rate(evals, cfg.iou_threshold);
  return out;
}

}  // namespace bgattack
