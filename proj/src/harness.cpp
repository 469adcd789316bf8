#include "fedscope/harness.hpp"

#include <cctype>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include "fedscope/datagen.hpp"
#include "fedscope/rng.hpp"

namespace fedscope::harness {

using detector::ModelParams;
using detector::TrainConfig;
using strategies::StrategyKind;

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

long long parse_int(const std::string& key, const std::string& v) {
    size_t pos = 0;
    long long x;
    try {
        x = std::stoll(v, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: " + key + ": not an integer: '" + v + "'");
    }
    if (pos != v.size())
        throw std::invalid_argument("config: " + key + ": trailing junk in '" + v + "'");
    return x;
}

double parse_real(const std::string& key, const std::string& v) {
    size_t pos = 0;
    double x;
    try {
        x = std::stod(v, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: " + key + ": not a number: '" + v + "'");
    }
    if (pos != v.size())
        throw std::invalid_argument("config: " + key + ": trailing junk in '" + v + "'");
    return x;
}

// One row per config key: canonical name and how to poke it into the struct.
struct KeySpec {
    const char* key;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

const std::vector<KeySpec>& key_table() {
    auto as_int = [](int ExperimentConfig::* f) {
        return [f](ExperimentConfig& c, const std::string& v) {
            c.*f = static_cast<int>(parse_int("", v));
        };
    };
    auto as_real = [](double ExperimentConfig::* f) {
        return [f](ExperimentConfig& c, const std::string& v) { c.*f = parse_real("", v); };
    };
    static const std::vector<KeySpec> table = {
        {"seeds",
         [](ExperimentConfig& c, const std::string& v) {
             c.seeds.clear();
             for (const std::string& s : split_list(v))
                 c.seeds.push_back(static_cast<uint64_t>(parse_int("seeds", s)));
         }},
        {"strategies",
         [](ExperimentConfig& c, const std::string& v) {
             if (trim(v) == "all") {
                 c.strategy_list = strategies::all_strategies();
                 return;
             }
             c.strategy_list.clear();
             for (const std::string& s : split_list(v))
                 c.strategy_list.push_back(strategies::parse_strategy(s));
         }},
        {"real_images", as_int(&ExperimentConfig::real_images)},
        {"synthetic_images", as_int(&ExperimentConfig::synthetic_images)},
        {"val_images", as_int(&ExperimentConfig::val_images)},
        {"test_images", as_int(&ExperimentConfig::test_images)},
        {"stage1_epochs",
         [](ExperimentConfig& c, const std::string& v) {
             c.budgets.stage1 = static_cast<int>(parse_int("stage1_epochs", v));
         }},
        {"transfer_epochs",
         [](ExperimentConfig& c, const std::string& v) {
             c.budgets.transfer = static_cast<int>(parse_int("transfer_epochs", v));
         }},
        {"finetune_epochs",
         [](ExperimentConfig& c, const std::string& v) {
             c.budgets.finetune = static_cast<int>(parse_int("finetune_epochs", v));
         }},
        {"rounds", as_int(&ExperimentConfig::rounds)},
        {"local_epochs", as_int(&ExperimentConfig::local_epochs)},
        {"fedensemble_clients", as_int(&ExperimentConfig::fedensemble_clients)},
        {"lr", as_real(&ExperimentConfig::lr)},
        {"momentum", as_real(&ExperimentConfig::momentum)},
        {"weight_decay", as_real(&ExperimentConfig::weight_decay)},
        {"batch_size", as_int(&ExperimentConfig::batch_size)},
        {"patience", as_int(&ExperimentConfig::patience)},
        {"threads", as_int(&ExperimentConfig::threads)},
        {"eval_conf", as_real(&ExperimentConfig::eval_conf)},
        {"eval_nms", as_real(&ExperimentConfig::eval_nms)},
        {"background_fp_conf", as_real(&ExperimentConfig::background_fp_conf)},
        {"output_dir",
         [](ExperimentConfig& c, const std::string& v) { c.output_dir = trim(v); }},
    };
    return table;
}

void set_key(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    for (const KeySpec& ks : key_table()) {
        if (key == ks.key) {
            try {
                ks.set(cfg, value);
            } catch (const std::invalid_argument& e) {
                // re-tag so the message always names the key
                std::string what = e.what();
                if (what.find(key) == std::string::npos)
                    throw std::invalid_argument("config: " + key + ": " + what);
                throw;
            }
            return;
        }
    }
    throw std::invalid_argument("config: unknown key '" + key + "'");
}

}  // namespace

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const KeySpec& ks : key_table()) keys.push_back(ks.key);
    return keys;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    ExperimentConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: " + path + ":" + std::to_string(lineno) +
                                        ": expected 'key = value'");
        set_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

void apply_env_overrides(ExperimentConfig& cfg) {
    for (const KeySpec& ks : key_table()) {
        std::string var = "FEDSCOPE_";
        for (const char* p = ks.key; *p; ++p)
            var += static_cast<char>(std::toupper(static_cast<unsigned char>(*p)));
        if (const char* v = std::getenv(var.c_str())) set_key(cfg, ks.key, v);
    }
}

void validate(const ExperimentConfig& cfg) {
    auto bad = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
    if (cfg.seeds.empty()) bad("need at least one seed");
    if (cfg.strategy_list.empty()) bad("need at least one strategy");
    for (size_t i = 0; i < cfg.strategy_list.size(); ++i)
        for (size_t j = i + 1; j < cfg.strategy_list.size(); ++j)
            if (cfg.strategy_list[i] == cfg.strategy_list[j])
                bad("duplicate strategy " + strategies::to_string(cfg.strategy_list[i]));
    if (cfg.real_images < 1 || cfg.synthetic_images < 1 || cfg.val_images < 1 ||
        cfg.test_images < 1)
        bad("dataset sizes must be positive");
    if (cfg.budgets.stage1 < 1 || cfg.budgets.transfer < 1 || cfg.budgets.finetune < 1)
        bad("epoch budgets must be positive");
    if (cfg.rounds < 1 || cfg.local_epochs < 1) bad("rounds and local_epochs must be positive");
    if (cfg.fedensemble_clients < 2) bad("fedensemble needs at least 2 clients");
    if (!(cfg.lr >= 0)) bad("lr must be non-negative");
    if (!(cfg.momentum >= 0 && cfg.momentum < 1)) bad("momentum outside [0,1)");
    if (!(cfg.weight_decay >= 0)) bad("weight_decay must be non-negative");
    if (cfg.batch_size < 1) bad("batch_size must be positive");
    if (cfg.patience < 0) bad("patience must be non-negative");
    if (cfg.threads < 1) bad("threads must be positive");
    if (!(cfg.eval_conf > 0 && cfg.eval_conf < 1)) bad("eval_conf outside (0,1)");
    if (!(cfg.eval_nms > 0 && cfg.eval_nms <= 1)) bad("eval_nms outside (0,1]");
    if (!(cfg.background_fp_conf > 0 && cfg.background_fp_conf < 1))
        bad("background_fp_conf outside (0,1)");
    if (cfg.output_dir.empty()) bad("output_dir must be set");
}

namespace {

uint64_t fnv1a(const void* data, size_t n, uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string model_hash(const ModelParams& p) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& l : p.layers) {
        h = fnv1a(l.w.v.data(), l.w.v.size() * sizeof(double), h);
        h = fnv1a(l.b.v.data(), l.b.v.size() * sizeof(double), h);
    }
    return hex64(h);
}

std::string combined_data_hash(const std::vector<const Dataset*>& sets) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const Dataset* ds : sets) {
        uint64_t dh = datagen::dataset_hash(*ds);
        h = fnv1a(&dh, sizeof dh, h);
    }
    return hex64(h);
}

TrainConfig base_train_config(const ExperimentConfig& cfg) {
    TrainConfig tc;
    tc.lr = cfg.lr;
    tc.momentum = cfg.momentum;
    tc.weight_decay = cfg.weight_decay;
    tc.batch_size = cfg.batch_size;
    tc.patience = cfg.patience;
    tc.threads = cfg.threads;
    tc.val_conf_threshold = cfg.eval_conf;
    tc.val_nms_threshold = cfg.eval_nms;
    return tc;
}

// Trains (and caches) the model backing a strategy. transfer/finetune reuse
// the centralized-synthetic model as their stage 1; ensemble has no model of
// its own and is resolved at prediction time.
class StrategyModels {
  public:
    StrategyModels(const ExperimentConfig& cfg, uint64_t seed, const ModelParams& init,
                   const Dataset& real, const Dataset& synth, const Dataset& hybrid,
                   const Dataset& val, SeedReport& report)
        : cfg_(cfg), seed_(seed), init_(init), real_(real), synth_(synth), hybrid_(hybrid),
          val_(val), report_(report) {}

    const ModelParams& get(StrategyKind kind) {
        auto it = cache_.find(kind);
        if (it != cache_.end()) return it->second;
        return cache_.emplace(kind, train(kind)).first->second;
    }

  private:
    TrainConfig seeded(const char* label) const {
        TrainConfig tc = base_train_config(cfg_);
        tc.seed = derive_seed(seed_, label);
        return tc;
    }

    ModelParams train(StrategyKind kind) {
        switch (kind) {
            case StrategyKind::centralized_hybrid:
                return strategies::train_centralized(init_, hybrid_, val_,
                                                     seeded("centralized-hybrid"),
                                                     cfg_.budgets.stage1)
                    .model;
            case StrategyKind::centralized_real:
                return strategies::train_centralized(init_, real_, val_,
                                                     seeded("centralized-real"),
                                                     cfg_.budgets.stage1)
                    .model;
            case StrategyKind::centralized_synthetic:
                return strategies::train_centralized(init_, synth_, val_,
                                                     seeded("centralized-synthetic"),
                                                     cfg_.budgets.stage1)
                    .model;
            case StrategyKind::transfer:
                return strategies::transfer_stage2(get(StrategyKind::centralized_synthetic),
                                                   real_, val_, seeded("transfer"),
                                                   cfg_.budgets.transfer)
                    .model;
            case StrategyKind::finetune:
                return strategies::finetune_stage2(get(StrategyKind::centralized_synthetic),
                                                   real_, val_, seeded("finetune"),
                                                   cfg_.budgets.finetune)
                    .model;
            case StrategyKind::federated:
                return federate(kind, federation::partition_by_domain(real_, synth_));
            case StrategyKind::fedensemble:
                return federate(kind, federation::partition_iid(
                                          hybrid_, cfg_.fedensemble_clients,
                                          derive_seed(seed_, "fedensemble-partition")));
            case StrategyKind::ensemble:
                throw std::logic_error("ensemble has no single model");
        }
        throw std::logic_error("unhandled strategy");
    }

    ModelParams federate(StrategyKind kind, std::vector<federation::ClientShard> clients) {
        federation::FederationConfig fc;
        fc.rounds = cfg_.rounds;
        fc.local_epochs = cfg_.local_epochs;
        fc.clients = std::move(clients);
        fc.seed = derive_seed(seed_, strategies::to_string(kind));
        fc.local = base_train_config(cfg_);
        fc.val = val_;
        federation::FederationResult r = federation::run_federation(fc, init_);
        report_.round_history.emplace_back(kind, r.history);
        // final-round global model: picking the best real-domain val round
        // instead systematically favors early rounds (the clients are split by
        // domain, so a one-domain val score plateaus while the rounds are
        // still consolidating) and ships a mid-drift average
        return r.final_model;
    }

    const ExperimentConfig& cfg_;
    uint64_t seed_;
    const ModelParams& init_;
    const Dataset& real_;
    const Dataset& synth_;
    const Dataset& hybrid_;
    const Dataset& val_;
    SeedReport& report_;
    std::map<StrategyKind, ModelParams> cache_;
};

std::vector<std::vector<BoundingBox>> ground_truths(const Dataset& ds) {
    std::vector<std::vector<BoundingBox>> gts;
    gts.reserve(ds.size());
    for (const SceneSample& s : ds) gts.push_back(s.boxes);
    return gts;
}

SeedReport run_seed(const ExperimentConfig& cfg, uint64_t seed) {
    SeedData d = make_seed_data(cfg, seed);

    SeedReport sr;
    sr.seed = seed;
    sr.init_hash = model_hash(d.init);
    sr.data_hash = combined_data_hash({&d.real, &d.synthetic, &d.val, &d.test_in, &d.unseen});

    StrategyModels models(cfg, seed, d.init, d.real, d.synthetic, d.hybrid, d.val, sr);

    auto predict_set = [&](StrategyKind kind, const Dataset& ds) {
        std::vector<std::vector<BoundingBox>> preds;
        preds.reserve(ds.size());
        for (const SceneSample& s : ds) {
            if (kind == StrategyKind::ensemble)
                preds.push_back(strategies::ensemble_infer(
                    models.get(StrategyKind::centralized_real),
                    models.get(StrategyKind::centralized_synthetic), s.image, cfg.eval_conf,
                    cfg.eval_nms));
            else
                preds.push_back(
                    detector::predict(models.get(kind), s.image, cfg.eval_conf, cfg.eval_nms));
        }
        return preds;
    };

    std::vector<std::vector<BoundingBox>> gts_in = ground_truths(d.test_in);
    std::vector<std::vector<BoundingBox>> gts_un = ground_truths(d.unseen);

    for (StrategyKind kind : cfg.strategy_list) {
        StrategyEval row;
        row.kind = kind;
        std::vector<std::vector<BoundingBox>> preds_in = predict_set(kind, d.test_in);
        std::vector<std::vector<BoundingBox>> preds_un = predict_set(kind, d.unseen);
        row.test_in = metrics::evaluate(preds_in, gts_in, datagen::kNumClasses);
        row.unseen = metrics::evaluate(preds_un, gts_un, datagen::kNumClasses);

        std::vector<std::vector<BoundingBox>> bg_preds;
        for (size_t i = 0; i < d.unseen.size(); ++i)
            if (d.unseen[i].background_only) bg_preds.push_back(preds_un[i]);
        row.unseen.background_fp = metrics::count_background_fp(bg_preds, cfg.background_fp_conf);

        sr.rows.push_back(std::move(row));
    }
    return sr;
}

}  // namespace

SeedData make_seed_data(const ExperimentConfig& cfg, uint64_t seed) {
    using namespace datagen;
    SeedData d;
    d.real = generate_dataset(real_domain(), cfg.real_images, true, derive_seed(seed, "real"));
    d.synthetic = generate_dataset(synthetic_domain(), cfg.synthetic_images, true,
                                   derive_seed(seed, "synthetic"));
    d.val = generate_dataset(real_domain(), cfg.val_images, true, derive_seed(seed, "val"));
    d.test_in =
        generate_dataset(real_domain(), cfg.test_images, true, derive_seed(seed, "test-in"));
    d.unseen = make_unseen_testset(seed);
    d.hybrid = d.real;
    d.hybrid.insert(d.hybrid.end(), d.synthetic.begin(), d.synthetic.end());
    d.init = detector::init_params(derive_seed(seed, "init"));
    return d;
}

ModelParams train_strategy(const ExperimentConfig& cfg, uint64_t seed, StrategyKind kind) {
    if (kind == StrategyKind::ensemble)
        throw std::invalid_argument(
            "ensemble is an inference-time combination; train centralized-real and "
            "centralized-synthetic and evaluate with two weights files");
    SeedData d = make_seed_data(cfg, seed);
    SeedReport scratch;
    StrategyModels models(cfg, seed, d.init, d.real, d.synthetic, d.hybrid, d.val, scratch);
    return models.get(kind);
}

ComparisonReport run_experiment(const ExperimentConfig& cfg) {
    validate(cfg);
    ComparisonReport report;
    report.strategy_list = cfg.strategy_list;
    for (uint64_t seed : cfg.seeds) {
        try {
            report.seeds.push_back(run_seed(cfg, seed));
        } catch (const std::exception& e) {
            report.failed_seeds.emplace_back(seed, e.what());
        }
    }
    return report;
}

}  // namespace fedscope::harness
