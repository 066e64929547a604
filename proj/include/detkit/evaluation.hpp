#pragma once

#include <map>
#include <span>
#include <vector>

#include "detkit/detections.hpp"

namespace detkit {

struct EvalConfig {
  double iou_threshold = 0.5;
  double group_of_ioa_threshold = 0.5;
  bool expand_hierarchy = true;  // expand detections and ground truth alike
};

enum class Verdict { kTruePositive, kFalsePositive, kIgnored };

struct CategoryReport {
  double ap = 0.0;
  int n_gt = 0;  // non-group ground-truth instances
  int tp = 0;
  int fp = 0;
  int ignored = 0;
  bool included = false;  // false when n_gt == 0 (AP undefined there)
};

struct EvalReport {
  std::map<int, CategoryReport> per_category;
  double map = 0.0;  // arithmetic mean of included per-category APs
  int included_categories = 0;
};

// Greedy verdicts for one (image, category) group. Detections must share one
// image and category and arrive already in match order (score descending).
// A detection matches the highest-IoU unmatched non-group ground truth at or
// above the IoU threshold; otherwise it is IGNORED when its IoA against any
// group-of box reaches the group threshold, else FP.
std::vector<Verdict> match_image_category(std::span<const Detection> dets_sorted,
                                          std::span<const GroundTruthBox> gts,
                                          const EvalConfig& cfg);

// All-point interpolated area under the precision-recall staircase. Ignored
// verdicts are skipped. n_gt must be positive; categories without ground
// truth have no defined AP and are excluded by evaluate().
double average_precision(std::span<const Verdict> verdicts_sorted, int n_gt);

// Detections are sorted internally by (score desc, image name asc, box
// corners asc, input order), so results do not depend on file row order.
EvalReport evaluate(const DetectionSet& dets, const GroundTruthSet& gts,
                    const CategoryHierarchy& hierarchy, const EvalConfig& cfg,
                    const Vocab& vocab, int threads = 1);

std::map<int, double> ap_by_category(const EvalReport& report);

}  // namespace detkit
