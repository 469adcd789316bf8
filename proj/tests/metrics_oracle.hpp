// Reference evaluation pipeline, written independently of the library
// implementation: selection scans instead of sorts, per-prediction candidate
// passes instead of a single greedy sweep, and suffix-max scans instead of a
// precomputed precision envelope. Arithmetic expression shapes follow the
// evaluation protocol exactly so results are expected to be bit-identical.
#pragma once

#include <vector>

#include "fedscope/geometry.hpp"
#include "fedscope/metrics.hpp"

namespace oracle {

// tp flags in confidence-descending order plus matched flags per gt
struct MatchRef {
    std::vector<int> pred_index;
    std::vector<char> pred_tp;
    std::vector<char> gt_matched;
};

MatchRef match_ref(const std::vector<fedscope::BoundingBox>& preds,
                   const std::vector<fedscope::BoundingBox>& gts, double threshold);

double ap_coco_ref(const std::vector<char>& tp_desc, int num_gt);
double ap_pascal_ref(const std::vector<char>& tp_desc, int num_gt);

fedscope::metrics::EvalReport evaluate_ref(
    const std::vector<std::vector<fedscope::BoundingBox>>& preds,
    const std::vector<std::vector<fedscope::BoundingBox>>& gts, int num_classes);

bool same_bits(double a, double b);
bool same_report(const fedscope::metrics::EvalReport& a, const fedscope::metrics::EvalReport& b);

}  // namespace oracle
