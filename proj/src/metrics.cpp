#include "fedscope/metrics.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace fedscope::metrics {

namespace {

// Indices of preds sorted by confidence descending, stable on ties.
std::vector<int> conf_order(const std::vector<BoundingBox>& preds) {
    std::vector<int> order(preds.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return *preds[a].confidence > *preds[b].confidence;
    });
    return order;
}

// Core greedy matcher. gt_ignore may be empty (no ignores). Returns the
// matched gt index per sorted prediction, or -1. A prediction prefers the
// best active (non-ignored) ground truth and falls back to ignored ones
// only when no active match exists.
std::vector<int> greedy_assign(const std::vector<BoundingBox>& preds,
                               const std::vector<int>& order,
                               const std::vector<BoundingBox>& gts,
                               double threshold,
                               const std::vector<char>& gt_ignore) {
    std::vector<int> match(order.size(), -1);
    std::vector<char> taken(gts.size(), 0);
    for (size_t oi = 0; oi < order.size(); ++oi) {
        const BoundingBox& p = preds[order[oi]];
        int best = -1;
        double best_iou = 0.0;
        bool best_active = false;
        for (size_t g = 0; g < gts.size(); ++g) {
            if (taken[g] || gts[g].class_id != p.class_id) continue;
            bool active = gt_ignore.empty() || !gt_ignore[g];
            // never trade an active match for an ignored one
            if (best_active && !active) continue;
            double v = iou(p, gts[g]);
            if (v < threshold) continue;
            if ((active && !best_active) || v > best_iou) {
                best = static_cast<int>(g);
                best_iou = v;
                best_active = active;
            }
        }
        if (best >= 0) {
            taken[best] = 1;
            match[oi] = best;
        }
    }
    return match;
}

std::vector<PRPoint> curve_from_flags(const std::vector<char>& tp_desc, int num_gt) {
    std::vector<PRPoint> curve;
    curve.reserve(tp_desc.size());
    int tp_cum = 0;
    for (size_t i = 0; i < tp_desc.size(); ++i) {
        if (tp_desc[i]) ++tp_cum;
        PRPoint pt;
        pt.recall = num_gt > 0 ? static_cast<double>(tp_cum) / num_gt : 0.0;
        pt.precision = static_cast<double>(tp_cum) / static_cast<double>(i + 1);
        curve.push_back(pt);
    }
    return curve;
}

std::vector<double> precision_envelope(const std::vector<PRPoint>& curve) {
    std::vector<double> env(curve.size());
    double running = 0.0;
    for (int i = static_cast<int>(curve.size()) - 1; i >= 0; --i) {
        running = std::max(running, curve[i].precision);
        env[i] = running;
    }
    return env;
}

}  // namespace

MatchResult match_detections(const std::vector<BoundingBox>& preds,
                             const std::vector<BoundingBox>& gts,
                             double iou_threshold) {
    if (!(iou_threshold > 0.0 && iou_threshold <= 1.0))
        throw std::invalid_argument("match: iou threshold outside (0,1]");
    for (const auto& p : preds)
        if (!p.confidence) throw std::invalid_argument("match: prediction without confidence");

    MatchResult r;
    r.iou_threshold = iou_threshold;
    std::vector<int> order = conf_order(preds);
    std::vector<int> match = greedy_assign(preds, order, gts, iou_threshold, {});
    r.pred_index = order;
    r.gt_matched.assign(gts.size(), 0);
    r.pred_conf.reserve(order.size());
    r.pred_tp.reserve(order.size());
    for (size_t oi = 0; oi < order.size(); ++oi) {
        r.pred_conf.push_back(*preds[order[oi]].confidence);
        r.pred_tp.push_back(match[oi] >= 0 ? 1 : 0);
        if (match[oi] >= 0) r.gt_matched[match[oi]] = 1;
    }
    return r;
}

std::vector<PRPoint> pr_curve(const MatchResult& m, int num_gt) {
    if (num_gt < 0) throw std::invalid_argument("pr-curve: negative ground-truth count");
    return curve_from_flags(m.pred_tp, num_gt);
}

double ap_coco(const std::vector<PRPoint>& curve) {
    if (curve.empty()) return 0.0;
    std::vector<double> env = precision_envelope(curve);
    double sum = 0.0;
    size_t j = 0;
    for (int k = 0; k <= 100; ++k) {
        double r = k * 0.01;
        while (j < curve.size() && curve[j].recall < r) ++j;
        sum += j < curve.size() ? env[j] : 0.0;
    }
    return sum / 101.0;
}

double ap_pascal(const std::vector<PRPoint>& curve) {
    if (curve.empty()) return 0.0;
    std::vector<double> env = precision_envelope(curve);
    double ap = 0.0;
    double prev_recall = 0.0;
    for (size_t i = 0; i < curve.size(); ++i) {
        ap += (curve[i].recall - prev_recall) * env[i];
        prev_recall = curve[i].recall;
    }
    return ap;
}

namespace {

// Per-class view of a dataset: box pointers grouped by image.
struct ClassView {
    std::vector<std::vector<BoundingBox>> preds;  // per image, original order
    std::vector<std::vector<BoundingBox>> gts;
    int num_gt = 0;
    std::array<int, 3> num_gt_bucket = {0, 0, 0};
};

// Pools per-image matches at one threshold into dataset-level TP flags
// sorted by confidence (stable across the image-order concatenation).
// bucket < 0 evaluates without area restriction; otherwise applies the COCO
// ignore protocol for that bucket. Returns flags plus the effective gt count.
std::pair<std::vector<char>, int> pooled_flags(const ClassView& cv, double threshold, int bucket) {
    struct Entry {
        double conf;
        char tp;
    };
    std::vector<Entry> entries;
    int effective_gt = 0;
    for (size_t img = 0; img < cv.preds.size(); ++img) {
        const auto& preds = cv.preds[img];
        const auto& gts = cv.gts[img];
        std::vector<char> gt_ignore;
        if (bucket >= 0) {
            gt_ignore.resize(gts.size());
            for (size_t g = 0; g < gts.size(); ++g)
                gt_ignore[g] = static_cast<int>(size_bucket(gts[g])) != bucket;
            for (char ig : gt_ignore)
                if (!ig) ++effective_gt;
        } else {
            effective_gt += static_cast<int>(gts.size());
        }
        std::vector<int> order = conf_order(preds);
        std::vector<int> match = greedy_assign(preds, order, gts, threshold, gt_ignore);
        for (size_t oi = 0; oi < order.size(); ++oi) {
            const BoundingBox& p = preds[order[oi]];
            if (match[oi] >= 0) {
                if (bucket >= 0 && gt_ignore[match[oi]]) continue;  // absorbed, not scored
                entries.push_back({*p.confidence, 1});
            } else {
                if (bucket >= 0 && static_cast<int>(size_bucket(p)) != bucket)
                    continue;  // out-of-bucket detection, not penalized
                entries.push_back({*p.confidence, 0});
            }
        }
    }
    std::stable_sort(entries.begin(), entries.end(),
                     [](const Entry& a, const Entry& b) { return a.conf > b.conf; });
    std::vector<char> flags(entries.size());
    for (size_t i = 0; i < entries.size(); ++i) flags[i] = entries[i].tp;
    return {std::move(flags), effective_gt};
}

}  // namespace

EvalReport evaluate(const std::vector<std::vector<BoundingBox>>& preds,
                    const std::vector<std::vector<BoundingBox>>& gts,
                    int num_classes) {
    if (preds.size() != gts.size())
        throw std::invalid_argument("evaluate: prediction/ground-truth image counts differ");
    if (num_classes <= 0) throw std::invalid_argument("evaluate: num_classes must be positive");

    std::vector<ClassView> views(num_classes);
    for (auto& v : views) {
        v.preds.resize(preds.size());
        v.gts.resize(gts.size());
    }
    for (size_t img = 0; img < preds.size(); ++img) {
        for (const auto& p : preds[img]) {
            if (p.class_id >= num_classes)
                throw std::invalid_argument("evaluate: prediction class id out of range");
            if (!p.confidence)
                throw std::invalid_argument("evaluate: prediction without confidence");
            views[p.class_id].preds[img].push_back(p);
        }
        for (const auto& g : gts[img]) {
            if (g.class_id >= num_classes)
                throw std::invalid_argument("evaluate: ground-truth class id out of range");
            views[g.class_id].gts[img].push_back(g);
            views[g.class_id].num_gt += 1;
            views[g.class_id].num_gt_bucket[static_cast<int>(size_bucket(g))] += 1;
        }
    }

    int total_gt = 0;
    for (const auto& v : views) total_gt += v.num_gt;
    if (total_gt == 0) throw std::runtime_error("empty-ground-truth");

    constexpr int kNumThresholds = 10;  // 0.50 + 0.05*k
    double sum_all = 0, sum_50 = 0, sum_75 = 0, sum_pascal = 0;
    std::array<double, 3> sum_bucket = {0, 0, 0};
    std::array<int, 3> classes_bucket = {0, 0, 0};
    int classes_valid = 0;

    for (int c = 0; c < num_classes; ++c) {
        const ClassView& cv = views[c];
        if (cv.num_gt == 0) continue;  // class absent from this test set
        ++classes_valid;
        for (int k = 0; k < kNumThresholds; ++k) {
            double t = 0.50 + 0.05 * k;
            auto [flags, n] = pooled_flags(cv, t, -1);
            double ap = ap_coco(curve_from_flags(flags, n));
            sum_all += ap;
            if (k == 0) {
                sum_50 += ap;
                sum_pascal += ap_pascal(curve_from_flags(flags, n));
            }
            if (k == 5) sum_75 += ap;
        }
        for (int b = 0; b < 3; ++b) {
            if (cv.num_gt_bucket[b] == 0) continue;
            classes_bucket[b] += 1;
            for (int k = 0; k < kNumThresholds; ++k) {
                double t = 0.50 + 0.05 * k;
                auto [flags, n] = pooled_flags(cv, t, b);
                sum_bucket[b] += ap_coco(curve_from_flags(flags, n));
            }
        }
    }

    EvalReport r;
    r.ap = sum_all / (kNumThresholds * classes_valid);
    r.ap50 = sum_50 / classes_valid;
    r.ap75 = sum_75 / classes_valid;
    r.map_pascal = sum_pascal / classes_valid;
    r.ap_small = classes_bucket[0] ? sum_bucket[0] / (kNumThresholds * classes_bucket[0]) : undefined_ap();
    r.ap_medium = classes_bucket[1] ? sum_bucket[1] / (kNumThresholds * classes_bucket[1]) : undefined_ap();
    r.ap_large = classes_bucket[2] ? sum_bucket[2] / (kNumThresholds * classes_bucket[2]) : undefined_ap();
    return r;
}

double map50(const std::vector<std::vector<BoundingBox>>& preds,
             const std::vector<std::vector<BoundingBox>>& gts,
             int num_classes) {
    if (preds.size() != gts.size())
        throw std::invalid_argument("map50: prediction/ground-truth image counts differ");
    std::vector<ClassView> views(num_classes);
    for (auto& v : views) {
        v.preds.resize(preds.size());
        v.gts.resize(gts.size());
    }
    for (size_t img = 0; img < preds.size(); ++img) {
        for (const auto& p : preds[img]) views[p.class_id].preds[img].push_back(p);
        for (const auto& g : gts[img]) {
            views[g.class_id].gts[img].push_back(g);
            views[g.class_id].num_gt += 1;
        }
    }
    double sum = 0;
    int valid = 0;
    for (int c = 0; c < num_classes; ++c) {
        if (views[c].num_gt == 0) continue;
        ++valid;
        auto [flags, n] = pooled_flags(views[c], 0.5, -1);
        sum += ap_pascal(curve_from_flags(flags, n));
    }
    if (valid == 0) throw std::runtime_error("empty-ground-truth");
    return sum / valid;
}

int count_background_fp(const std::vector<std::vector<BoundingBox>>& preds_on_background,
                        double conf_threshold) {
    int count = 0;
    for (const auto& image_preds : preds_on_background)
        for (const auto& p : image_preds)
            if (p.confidence && *p.confidence >= conf_threshold) ++count;
    return count;
}

void write_boxes(const std::string& path, const std::vector<BoundingBox>& boxes) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    char buf[256];
    for (const auto& b : boxes) {
        if (b.confidence) {
            std::snprintf(buf, sizeof(buf), "%d %.17g %.17g %.17g %.17g %.17g\n", b.class_id,
                          *b.confidence, b.x_min, b.y_min, b.x_max, b.y_max);
        } else {
            std::snprintf(buf, sizeof(buf), "%d %.17g %.17g %.17g %.17g\n", b.class_id, b.x_min,
                          b.y_min, b.x_max, b.y_max);
        }
        out << buf;
    }
}

std::vector<BoundingBox> read_boxes(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::vector<BoundingBox> boxes;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::vector<double> f;
        int cls;
        ss >> cls;
        double v;
        while (ss >> v) f.push_back(v);
        if (f.size() == 4) {
            boxes.emplace_back(cls, f[0], f[1], f[2], f[3]);
        } else if (f.size() == 5) {
            boxes.emplace_back(cls, f[1], f[2], f[3], f[4], f[0]);
        } else {
            throw std::runtime_error("malformed box line in " + path);
        }
    }
    return boxes;
}

}  // namespace fedscope::metrics
