#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fedscope/federation.hpp"
#include "fedscope/metrics.hpp"
#include "fedscope/strategies.hpp"

namespace fedscope::harness {

// Everything a full comparison run needs. Field defaults mirror the
// reference protocol at desk scale; every key is settable from a config
// file and overridable via FEDSCOPE_<KEY> environment variables.
struct ExperimentConfig {
    std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
    std::vector<strategies::StrategyKind> strategy_list = strategies::all_strategies();

    // dataset sizes (images per split)
    int real_images = 300;
    int synthetic_images = 300;
    int val_images = 60;
    int test_images = 100;

    // epoch budgets
    strategies::StageBudgets budgets;  // stage1 50 / transfer 40 / finetune 50
    int rounds = 10;
    int local_epochs = 15;
    int fedensemble_clients = 3;

    // optimizer knobs forwarded into detector::TrainConfig
    double lr = 0.01;
    double momentum = 0.937;
    double weight_decay = 0.0005;
    int batch_size = 8;
    int patience = 20;
    int threads = 1;

    // evaluation
    double eval_conf = 0.05;  // decode depth for PR curves
    double eval_nms = 0.45;
    double background_fp_conf = 0.25;

    std::string output_dir = "runs";
};

// `key = value` lines; '#' starts a comment; unknown keys are errors.
ExperimentConfig load_config(const std::string& path);
// FEDSCOPE_<UPPERCASED KEY> environment variables override cfg in place.
void apply_env_overrides(ExperimentConfig& cfg);
void validate(const ExperimentConfig& cfg);  // throws on nonsense
// the canonical key list, in file order (used by the parser and the docs)
std::vector<std::string> config_keys();

struct StrategyEval {
    strategies::StrategyKind kind = strategies::StrategyKind::centralized_hybrid;
    metrics::EvalReport test_in;  // in-distribution test set
    metrics::EvalReport unseen;   // full 116-image unseen set, background_fp filled
};

struct SeedReport {
    uint64_t seed = 0;
    std::string init_hash;  // hex digest of the shared init weights
    std::string data_hash;  // combined digest of all five dataset manifests
    std::vector<StrategyEval> rows;
    // per-round training curves for the federated strategies
    std::vector<std::pair<strategies::StrategyKind, std::vector<federation::RoundStats>>>
        round_history;
};

struct ComparisonReport {
    std::vector<strategies::StrategyKind> strategy_list;
    std::vector<SeedReport> seeds;
    std::vector<std::pair<uint64_t, std::string>> failed_seeds;  // seed -> cause
};

// Runs every requested strategy on every seed: generate the five datasets,
// share one init, train, evaluate both test sets, count background FPs.
// A strategy failure abandons that seed (recorded in failed_seeds) and the
// remaining seeds proceed.
ComparisonReport run_experiment(const ExperimentConfig& cfg);

// The per-seed dataset bundle run_experiment works from, exposed so the
// train/evaluate subcommands operate on byte-identical data.
struct SeedData {
    Dataset real, synthetic, hybrid, val, test_in, unseen;
    detector::ModelParams init;
};
SeedData make_seed_data(const ExperimentConfig& cfg, uint64_t seed);

// Trains the model backing one strategy on that seed's datasets, exactly as
// run_experiment would. `ensemble` is rejected: it is two models combined at
// inference time; train centralized-real and centralized-synthetic instead.
detector::ModelParams train_strategy(const ExperimentConfig& cfg, uint64_t seed,
                                     strategies::StrategyKind kind);

// Mean over seeds, skipping undefined (NaN) cells; a cell undefined in every
// seed stays NaN. background_fp becomes a mean count.
struct MeanRow {
    strategies::StrategyKind kind = strategies::StrategyKind::centralized_hybrid;
    double ap = 0, ap50 = 0, ap75 = 0, ap_small = 0, ap_medium = 0, ap_large = 0, map = 0;
    double background_fp = 0;
};
std::vector<MeanRow> mean_rows(const ComparisonReport& r, bool unseen);

enum class ReportFormat { csv, markdown };

// Writes per-seed and mean tables (one file per test set) plus runinfo.txt
// and per-round CSVs into dir. Returns the paths written, in a fixed order.
// Output is byte-deterministic for a given report.
std::vector<std::string> emit_report(const ComparisonReport& r, const std::string& dir,
                                     ReportFormat format);

// Directional checks over a finished report (the paper's qualitative
// claims). `detail` is a one-line human-readable account.
struct TrendOutcome {
    std::string name;
    bool pass = false;
    std::string detail;
};
TrendOutcome trend_synthetic_worst(const ComparisonReport& r);
TrendOutcome trend_federated_unseen(const ComparisonReport& r);
TrendOutcome trend_generalization_gap(const ComparisonReport& r);
TrendOutcome trend_background_fp(const ComparisonReport& r);
std::vector<TrendOutcome> all_trends(const ComparisonReport& r);

}  // namespace fedscope::harness
