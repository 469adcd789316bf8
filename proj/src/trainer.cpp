#include "fedscope/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "fedscope/metrics.hpp"
#include "fedscope/parallel.hpp"
#include "fedscope/rng.hpp"

namespace fedscope::detector {

double validation_map50(const ModelParams& p, const Dataset& val, const TrainConfig& cfg) {
    std::vector<std::vector<BoundingBox>> preds(val.size()), gts(val.size());
    parallel_for(static_cast<int>(val.size()), cfg.threads, [&](int i) {
        preds[i] = predict(p, val[i].image, cfg.val_conf_threshold, cfg.val_nms_threshold,
                           cfg.loss.anchor);
    });
    for (size_t i = 0; i < val.size(); ++i) gts[i] = val[i].boxes;
    return metrics::map50(preds, gts, p.num_classes);
}

TrainResult train(const ModelParams& init, const Dataset& data, const Dataset& val,
                  const TrainConfig& cfg, const FreezeMask& mask) {
    if (data.empty()) throw std::invalid_argument("empty-dataset");
    if (cfg.epochs < 1) throw std::invalid_argument("train: epochs must be at least 1");
    if (cfg.batch_size < 1) throw std::invalid_argument("train: batch size must be at least 1");

    ModelParams p = init;
    OptimizerState st = OptimizerState::make(p);
    st.lr = cfg.lr;
    st.momentum = cfg.momentum;
    st.weight_decay = cfg.weight_decay;
    st.batch_size = cfg.batch_size;
    const std::vector<char> trainable = mask.trainable(kNumLayers);

    const int B = cfg.batch_size;
    std::vector<Gradients> slot(B, zero_like(p));
    std::vector<double> slot_loss(B);

    TrainResult res;
    res.model = p;
    double best_val = -std::numeric_limits<double>::infinity();
    int since_best = 0;

    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    for (int e = 0; e < cfg.epochs; ++e) {
        auto rng = make_rng(derive_seed(cfg.seed, "epoch-shuffle", static_cast<uint64_t>(e)));
        std::shuffle(order.begin(), order.end(), rng);

        double sched = 1.0;
        if (cfg.warmup_epochs > 0 && e < cfg.warmup_epochs)
            sched = 0.1 + 0.9 * (static_cast<double>(e) / cfg.warmup_epochs);
        if (cfg.epochs > 1)
            sched *= 1.0 - (1.0 - cfg.lr_final_frac) * (static_cast<double>(e) / (cfg.epochs - 1));
        st.lr = cfg.lr * sched;

        double loss_sum = 0;
        for (size_t start = 0; start < order.size(); start += B) {
            int bn = static_cast<int>(std::min<size_t>(B, order.size() - start));
            parallel_for(bn, cfg.threads, [&](int i) {
                const SceneSample& s = data[order[start + i]];
                slot_loss[i] = backward(p, s.image, s.boxes, cfg.loss, slot[i], &trainable);
            });
            for (int i = 1; i < bn; ++i) accumulate(slot[0], slot[i]);
            for (int i = 0; i < bn; ++i) loss_sum += slot_loss[i];
            scale(slot[0], 1.0 / bn);
            if (cfg.max_grad_norm > 0.0) {
                double sq = 0.0;
                for (const Tensor& t : slot[0].w)
                    for (double v : t.v) sq += v * v;
                for (const Tensor& t : slot[0].b)
                    for (double v : t.v) sq += v * v;
                double norm = std::sqrt(sq);
                if (norm > cfg.max_grad_norm) scale(slot[0], cfg.max_grad_norm / norm);
            }
            sgd_step(p, slot[0], st, mask);
        }

        EpochStats stats;
        stats.epoch = e;
        stats.train_loss = loss_sum / static_cast<double>(data.size());
        stats.val_map50 = std::numeric_limits<double>::quiet_NaN();

        bool stop = false;
        if (!val.empty()) {
            stats.val_map50 = validation_map50(p, val, cfg);
            if (stats.val_map50 > best_val) {
                best_val = stats.val_map50;
                res.model = p;
                res.best_epoch = e;
                since_best = 0;
            } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
                stop = true;
            }
        }
        res.history.push_back(stats);
        if (stop) break;
    }

    if (val.empty()) {
        res.model = std::move(p);
        res.best_epoch = -1;
    }
    return res;
}

}  // namespace fedscope::detector
