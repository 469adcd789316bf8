#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fedscope/geometry.hpp"

namespace fedscope::metrics {

// Result of greedy detection/ground-truth matching at one IoU threshold.
// Entries are parallel arrays in confidence-descending order (stable on
// ties, so equal-confidence predictions keep their input order).
struct MatchResult {
    double iou_threshold = 0.5;
    std::vector<int> pred_index;   // original index of each prediction
    std::vector<double> pred_conf;
    std::vector<char> pred_tp;     // 1 = matched a ground truth
    std::vector<char> gt_matched;  // per input ground-truth index
};

// Greedy matching: predictions in confidence-descending order each claim the
// unmatched same-class ground truth with the highest IoU >= threshold; IoU
// ties go to the lower ground-truth index. Unclaimed predictions are FP.
MatchResult match_detections(const std::vector<BoundingBox>& preds,
                             const std::vector<BoundingBox>& gts,
                             double iou_threshold);

struct PRPoint {
    double recall = 0;
    double precision = 0;
};

// Cumulative precision/recall in confidence-descending order.
// num_gt == 0 with predictions yields an all-FP curve (recall fixed at 0).
std::vector<PRPoint> pr_curve(const MatchResult& m, int num_gt);

// 101-point interpolated AP: precision envelope sampled at recall k*0.01,
// k = 0..100, averaged. Empty curve -> 0.
double ap_coco(const std::vector<PRPoint>& curve);

// All-point interpolation (area under the precision envelope). Empty -> 0.
double ap_pascal(const std::vector<PRPoint>& curve);

// Sentinel for AP over a bucket with no ground truth.
inline double undefined_ap() { return std::numeric_limits<double>::quiet_NaN(); }
inline bool ap_defined(double v) { return !std::isnan(v); }

struct EvalReport {
    double ap = 0;         // mean over classes and IoU 0.50:0.05:0.95
    double ap50 = 0;
    double ap75 = 0;
    double ap_small = 0;   // undefined_ap() when the bucket has no ground truth
    double ap_medium = 0;
    double ap_large = 0;
    double map_pascal = 0; // mean over classes of all-point AP at IoU 0.5
    int background_fp = 0; // filled by the caller from count_background_fp
};

// Dataset-level evaluation. preds[i]/gts[i] belong to image i. Classes with
// zero ground truth anywhere are excluded from every mean. Size-bucketed APs
// follow the COCO ignore protocol: out-of-bucket ground truths absorb
// detections without scoring them, and unmatched out-of-bucket detections
// are dropped rather than counted as FP.
// Throws "empty-ground-truth" if the whole set has no ground-truth boxes.
EvalReport evaluate(const std::vector<std::vector<BoundingBox>>& preds,
                    const std::vector<std::vector<BoundingBox>>& gts,
                    int num_classes);

// Mean over classes (with ground truth) of all-point AP at IoU 0.5 only.
// Cheaper than evaluate(); used for per-epoch validation tracking.
double map50(const std::vector<std::vector<BoundingBox>>& preds,
             const std::vector<std::vector<BoundingBox>>& gts,
             int num_classes);

// Counts predictions with confidence >= conf_threshold on images that are
// known to contain no objects.
int count_background_fp(const std::vector<std::vector<BoundingBox>>& preds_on_background,
                        double conf_threshold);

// Interchange format: one line per box, "class_id conf x_min y_min x_max
// y_max" with the conf column omitted for ground truth. Round-trips exactly.
void write_boxes(const std::string& path, const std::vector<BoundingBox>& boxes);
std::vector<BoundingBox> read_boxes(const std::string& path);

}  // namespace fedscope::metrics
