#include "fedscope/federation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "fedscope/rng.hpp"

namespace fedscope::federation {

using detector::ModelParams;

std::vector<ClientShard> partition_by_domain(const Dataset& real, const Dataset& synthetic) {
    if (real.empty() || synthetic.empty()) throw std::invalid_argument("empty-domain");
    std::vector<ClientShard> shards(2);
    shards[0].client_id = "client-real";
    shards[0].samples = real;
    shards[1].client_id = "client-synthetic";
    shards[1].samples = synthetic;
    return shards;
}

std::vector<ClientShard> partition_iid(const Dataset& hybrid, int k, uint64_t seed) {
    if (k < 2) throw std::invalid_argument("partition: need at least 2 clients");
    if (static_cast<size_t>(k) > hybrid.size()) throw std::invalid_argument("too-many-clients");
    std::vector<int> idx(hybrid.size());
    std::iota(idx.begin(), idx.end(), 0);
    auto rng = make_rng(derive_seed(seed, "iid-partition"));
    std::shuffle(idx.begin(), idx.end(), rng);

    std::vector<ClientShard> shards(k);
    for (int c = 0; c < k; ++c) shards[c].client_id = "client-iid-" + std::to_string(c);
    for (size_t i = 0; i < idx.size(); ++i)
        shards[i % k].samples.push_back(hybrid[idx[i]]);
    return shards;
}

ModelParams fedavg_aggregate(const std::vector<ModelParams>& models,
                             const std::vector<int>& counts, Weighting weighting) {
    if (models.empty()) throw std::invalid_argument("aggregate: no models");
    if (models.size() != counts.size())
        throw std::invalid_argument("aggregate: model/count list sizes differ");
    for (size_t k = 1; k < models.size(); ++k)
        if (!models[0].same_shape(models[k])) throw std::invalid_argument("incompatible-models");

    long long total = 0;
    for (int n : counts) {
        if (n <= 0) throw std::invalid_argument("aggregate: counts must be positive");
        total += n;
    }
    std::vector<double> coeff(models.size());
    for (size_t k = 0; k < models.size(); ++k)
        coeff[k] = weighting == Weighting::by_sample_count
                       ? static_cast<double>(counts[k]) / static_cast<double>(total)
                       : 1.0 / static_cast<double>(models.size());

    ModelParams out = models[0];
    for (size_t l = 0; l < out.layers.size(); ++l) {
        std::fill(out.layers[l].w.v.begin(), out.layers[l].w.v.end(), 0.0);
        std::fill(out.layers[l].b.v.begin(), out.layers[l].b.v.end(), 0.0);
        for (size_t k = 0; k < models.size(); ++k) {  // fixed client order
            const auto& lw = models[k].layers[l].w.v;
            const auto& lb = models[k].layers[l].b.v;
            for (size_t i = 0; i < lw.size(); ++i) out.layers[l].w.v[i] += coeff[k] * lw[i];
            for (size_t i = 0; i < lb.size(); ++i) out.layers[l].b.v[i] += coeff[k] * lb[i];
        }
    }
    return out;
}

FederationResult run_federation(const FederationConfig& cfg, const ModelParams& init) {
    if (cfg.rounds < 1) throw std::invalid_argument("federation: rounds must be at least 1");
    if (cfg.local_epochs < 1)
        throw std::invalid_argument("federation: local epochs must be at least 1");
    if (cfg.clients.size() < 2) throw std::invalid_argument("federation: need at least 2 clients");
    for (const auto& c : cfg.clients)
        if (c.samples.empty()) throw std::invalid_argument("empty-domain");

    std::vector<int> counts;
    for (const auto& c : cfg.clients) counts.push_back(c.n());

    FederationResult res;
    ModelParams global = init;
    double best_val = -std::numeric_limits<double>::infinity();

    for (int r = 0; r < cfg.rounds; ++r) {
        std::vector<ModelParams> locals;
        RoundStats stats;
        stats.round = r;
        for (const ClientShard& client : cfg.clients) {
            detector::TrainConfig tc = cfg.local;
            tc.epochs = cfg.local_epochs;
            tc.patience = 0;
            if (r > 0) {
                // decay across rounds, flat within the round (see header)
                double frac = static_cast<double>(r) / (cfg.rounds - 1);
                tc.lr = cfg.local.lr * (1.0 - (1.0 - cfg.local.lr_final_frac) * frac);
                tc.warmup_epochs = 0;
                tc.lr_final_frac = 1.0;
            }
            tc.seed = derive_seed(cfg.seed, client.client_id, static_cast<uint64_t>(r));
            try {
                auto out = detector::train(global, client.samples, {}, tc);
                stats.client_loss.push_back(out.history.back().train_loss);
                locals.push_back(std::move(out.model));
            } catch (const std::exception& e) {
                throw std::runtime_error(client.client_id + ": " + e.what());
            }
        }
        global = fedavg_aggregate(locals, counts, cfg.weighting);

        stats.val_map50 = std::numeric_limits<double>::quiet_NaN();
        if (!cfg.val.empty()) {
            stats.val_map50 = detector::validation_map50(global, cfg.val, cfg.local);
            if (stats.val_map50 > best_val) {
                best_val = stats.val_map50;
                res.best_model = global;
                res.best_round = r;
            }
        }
        res.history.push_back(std::move(stats));
    }

    res.final_model = std::move(global);
    if (cfg.val.empty()) {
        res.best_model = res.final_model;
        res.best_round = -1;
    }
    return res;
}

}  // namespace fedscope::federation
