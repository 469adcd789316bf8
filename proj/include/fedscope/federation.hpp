#pragma once

#include <string>
#include <vector>

#include "fedscope/sample.hpp"
#include "fedscope/trainer.hpp"

namespace fedscope::federation {

struct ClientShard {
    std::string client_id;
    Dataset samples;

    int n() const { return static_cast<int>(samples.size()); }
};

enum class Weighting { by_sample_count, uniform };

struct FederationConfig {
    int rounds = 10;
    int local_epochs = 15;
    std::vector<ClientShard> clients;
    Weighting weighting = Weighting::by_sample_count;
    uint64_t seed = 1;
    detector::TrainConfig local;  // lr/momentum/batch template for client training
    Dataset val;                  // global per-round validation (may be empty)
};

// Two shards: the real-capture domain and the synthetic domain.
std::vector<ClientShard> partition_by_domain(const Dataset& real, const Dataset& synthetic);

// Seeded shuffle then round-robin split into k shards (sizes differ by <= 1).
std::vector<ClientShard> partition_iid(const Dataset& hybrid, int k, uint64_t seed);

// Elementwise parameter average. by_sample_count weighs by n_k / sum(n);
// uniform is the plain mean.
detector::ModelParams fedavg_aggregate(const std::vector<detector::ModelParams>& models,
                                       const std::vector<int>& counts, Weighting weighting);

struct RoundStats {
    int round = 0;
    std::vector<double> client_loss;  // final local-epoch mean loss per client
    double val_map50 = 0;             // NaN without a validation set
};

struct FederationResult {
    detector::ModelParams final_model;  // after the last round
    detector::ModelParams best_model;   // best validation round (== final without val)
    int best_round = -1;
    std::vector<RoundStats> history;
};

// Synchronous FedAvg: per round, broadcast the global model, train every
// client for local_epochs (no early stopping inside a round; per-client RNG
// stream derived from (seed, client_id, round)), aggregate. Client failures
// propagate with the client_id attached.
//
// Client lr schedule: the per-epoch warmup/decay of `local` applies only in
// round 0 (fresh init); from round 1 on clients run flat at
// lr * (1 - (1 - lr_final_frac) * r / (rounds - 1)), so local steps shrink
// across rounds and the aggregate settles into one basin instead of averaging
// two drifted minima.
FederationResult run_federation(const FederationConfig& cfg, const detector::ModelParams& init);

}  // namespace fedscope::federation
