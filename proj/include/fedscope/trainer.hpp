#pragma once

#include <cstdint>

#include "fedscope/optimizer.hpp"
#include "fedscope/sample.hpp"

namespace fedscope::detector {

struct TrainConfig {
    int epochs = 50;
    int patience = 20;  // epochs without val improvement before stopping; 0 disables
    double lr = 0.01;
    // lr schedule: linear warmup from 0.1*lr over the first warmup_epochs,
    // then linear decay to lr_final_frac*lr at the last budgeted epoch.
    // A raw 0.01 step on a fresh random init diverges; this is the usual fix.
    int warmup_epochs = 3;
    double lr_final_frac = 0.1;
    double max_grad_norm = 3.0;  // global gradient-norm clip; 0 disables
    double momentum = 0.937;
    double weight_decay = 0.0005;
    int batch_size = 8;
    uint64_t seed = 1;
    int threads = 1;
    LossParams loss;
    // validation predictions are decoded deep (low threshold) for a full PR curve
    double val_conf_threshold = 0.05;
    double val_nms_threshold = 0.45;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0;  // mean per-image loss
    double val_map50 = 0;   // NaN when no validation set was given
};

struct TrainResult {
    ModelParams model;  // best-validation weights; final weights when no val set
    std::vector<EpochStats> history;
    int best_epoch = -1;  // -1 when no validation set
};

// Minibatch SGD training: per-epoch seeded shuffle, batches of batch_size
// (last partial batch kept), gradients averaged over the batch. Tracks
// validation mAP@0.5 per epoch and stops after `patience` epochs without
// improvement. Deterministic for a fixed config, regardless of `threads`.
TrainResult train(const ModelParams& init, const Dataset& data, const Dataset& val,
                  const TrainConfig& cfg, const FreezeMask& mask = {});

// mAP@0.5 of a model over a dataset at the given decode thresholds
double validation_map50(const ModelParams& p, const Dataset& val, const TrainConfig& cfg);

}  // namespace fedscope::detector
