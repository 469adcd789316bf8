#include "fedscope/strategies.hpp"

#include <stdexcept>

#include "fedscope/rng.hpp"

namespace fedscope::strategies {

using detector::FreezeMask;
using detector::ModelParams;
using detector::TrainConfig;
using detector::TrainResult;

std::string to_string(StrategyKind k) {
    switch (k) {
        case StrategyKind::centralized_hybrid: return "centralized-hybrid";
        case StrategyKind::centralized_real: return "centralized-real";
        case StrategyKind::centralized_synthetic: return "centralized-synthetic";
        case StrategyKind::transfer: return "transfer";
        case StrategyKind::finetune: return "finetune";
        case StrategyKind::federated: return "federated";
        case StrategyKind::fedensemble: return "fedensemble";
        case StrategyKind::ensemble: return "ensemble";
    }
    throw std::logic_error("strategy: unhandled kind");
}

std::vector<StrategyKind> all_strategies() {
    return {StrategyKind::centralized_hybrid, StrategyKind::centralized_real,
            StrategyKind::centralized_synthetic, StrategyKind::transfer, StrategyKind::finetune,
            StrategyKind::federated, StrategyKind::fedensemble, StrategyKind::ensemble};
}

StrategyKind parse_strategy(std::string_view name) {
    for (StrategyKind k : all_strategies())
        if (to_string(k) == name) return k;
    throw std::invalid_argument("unknown strategy: " + std::string(name));
}

namespace {

TrainConfig with_budget(const TrainConfig& base, int epochs) {
    if (epochs <= 0) throw std::invalid_argument("strategy: epoch budget must be positive");
    TrainConfig cfg = base;
    cfg.epochs = epochs;
    return cfg;
}

// Both stage-2 flavours share everything except the freeze mask, so a
// transfer-vs-finetune comparison isolates the freezing decision.
TrainResult run_stage2(const ModelParams& stage1, const Dataset& real, const Dataset& val,
                       const TrainConfig& base, int epochs, const FreezeMask& mask) {
    if (real.empty()) throw std::invalid_argument("stage2: empty dataset");
    TrainConfig cfg = with_budget(base, epochs);
    cfg.seed = derive_seed(base.seed, "stage2");
    return detector::train(stage1, real, val, cfg, mask);
}

}  // namespace

TrainResult train_centralized(const ModelParams& init, const Dataset& data, const Dataset& val,
                              const TrainConfig& base, int epochs) {
    if (data.empty()) throw std::invalid_argument("centralized: empty dataset");
    return detector::train(init, data, val, with_budget(base, epochs));
}

TrainResult transfer_stage2(const ModelParams& stage1, const Dataset& real, const Dataset& val,
                            const TrainConfig& base, int epochs) {
    return run_stage2(stage1, real, val, base, epochs, FreezeMask::backbone());
}

TrainResult finetune_stage2(const ModelParams& stage1, const Dataset& real, const Dataset& val,
                            const TrainConfig& base, int epochs) {
    return run_stage2(stage1, real, val, base, epochs, FreezeMask::none());
}

TwoStageResult train_transfer(const ModelParams& init, const Dataset& synthetic,
                              const Dataset& real, const Dataset& val, const TrainConfig& base,
                              const StageBudgets& budgets) {
    TwoStageResult r;
    r.stage1 = train_centralized(init, synthetic, val, base, budgets.stage1);
    r.stage2 = transfer_stage2(r.stage1.model, real, val, base, budgets.transfer);
    return r;
}

TwoStageResult train_finetune(const ModelParams& init, const Dataset& synthetic,
                              const Dataset& real, const Dataset& val, const TrainConfig& base,
                              const StageBudgets& budgets) {
    TwoStageResult r;
    r.stage1 = train_centralized(init, synthetic, val, base, budgets.stage1);
    r.stage2 = finetune_stage2(r.stage1.model, real, val, base, budgets.finetune);
    return r;
}

std::vector<BoundingBox> ensemble_infer(const ModelParams& a, const ModelParams& b,
                                        const ImageGrid& img, double conf_threshold,
                                        double nms_threshold, detector::Anchor anchor) {
    if (!a.same_shape(b)) throw std::invalid_argument("ensemble: model shapes differ");
    std::vector<BoundingBox> pooled =
        detector::decode(detector::forward(a, img), a.num_classes, anchor, conf_threshold,
                         img.width, img.height);
    std::vector<BoundingBox> from_b =
        detector::decode(detector::forward(b, img), b.num_classes, anchor, conf_threshold,
                         img.width, img.height);
    pooled.insert(pooled.end(), from_b.begin(), from_b.end());
    return detector::nms(std::move(pooled), nms_threshold);
}

}  // namespace fedscope::strategies
