// fedscope: desk-scale federated object-detection training simulator.
// Subcommands: generate-data, train, evaluate, report, run-all.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "fedscope/datagen.hpp"
#include "fedscope/harness.hpp"
#include "fedscope/metrics.hpp"
#include "fedscope/rng.hpp"
#include "fedscope/strategies.hpp"
#include "fedscope/weights_io.hpp"

using namespace fedscope;
namespace fs = std::filesystem;

namespace {

harness::ExperimentConfig load_experiment_config(const std::string& config_path) {
    harness::ExperimentConfig cfg;
    if (!config_path.empty()) cfg = harness::load_config(config_path);
    harness::apply_env_overrides(cfg);
    harness::validate(cfg);
    return cfg;
}

void print_eval_line(const metrics::EvalReport& e, const std::string& bgfp) {
    auto cell = [](double v) {
        if (std::isnan(v)) return std::string("n/a");
        char buf[16];
        std::snprintf(buf, sizeof buf, "%.4f", v);
        return std::string(buf);
    };
    std::printf("AP %s  AP50 %s  AP75 %s  APsmall %s  APmedium %s  APlarge %s  mAP %s  "
                "BackgroundFP %s\n",
                cell(e.ap).c_str(), cell(e.ap50).c_str(), cell(e.ap75).c_str(),
                cell(e.ap_small).c_str(), cell(e.ap_medium).c_str(), cell(e.ap_large).c_str(),
                cell(e.map_pascal).c_str(), bgfp.c_str());
}

// pooled PR curve at IoU 0.5 for one class across the whole set
std::vector<metrics::PRPoint> class_pr(const std::vector<std::vector<BoundingBox>>& preds,
                                       const std::vector<std::vector<BoundingBox>>& gts,
                                       int cls) {
    std::vector<std::pair<double, char>> scored;  // (confidence, tp)
    int num_gt = 0;
    for (size_t i = 0; i < preds.size(); ++i) {
        std::vector<BoundingBox> p, g;
        for (const BoundingBox& b : preds[i])
            if (b.class_id == cls) p.push_back(b);
        for (const BoundingBox& b : gts[i])
            if (b.class_id == cls) g.push_back(b);
        num_gt += static_cast<int>(g.size());
        metrics::MatchResult m = metrics::match_detections(p, g, 0.5);
        for (size_t k = 0; k < m.pred_conf.size(); ++k)
            scored.emplace_back(m.pred_conf[k], m.pred_tp[k]);
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<metrics::PRPoint> curve;
    int tp = 0, fp = 0;
    for (const auto& [conf, hit] : scored) {
        (hit ? tp : fp) += 1;
        if (num_gt > 0)
            curve.push_back({double(tp) / num_gt, double(tp) / (tp + fp)});
        else
            curve.push_back({0.0, 0.0});
    }
    return curve;
}

int cmd_generate_data(const std::string& domain, int n, uint64_t seed, const std::string& out,
                      bool imbalanced, bool n_given) {
    Dataset ds;
    if (domain == "unseen-test") {
        if (n_given) throw std::invalid_argument("unseen-test has a fixed size (116 images)");
        ds = datagen::make_unseen_testset(seed);
        datagen::save_dataset(out, ds);
    } else {
        datagen::DomainSpec spec =
            domain == "real" ? datagen::real_domain() : datagen::synthetic_domain();
        ds = datagen::generate_dataset(spec, n, !imbalanced, seed);
        datagen::save_dataset(out, ds, &spec);
    }
    int boxes = 0, bg = 0;
    for (const SceneSample& s : ds) {
        boxes += static_cast<int>(s.boxes.size());
        bg += s.background_only;
    }
    std::printf("wrote %zu images (%d boxes, %d background-only) to %s\n", ds.size(), boxes, bg,
                out.c_str());
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& strategy, uint64_t seed,
              bool seed_given, std::string out) {
    harness::ExperimentConfig cfg = load_experiment_config(config_path);
    strategies::StrategyKind kind = strategies::parse_strategy(strategy);
    if (!seed_given) seed = cfg.seeds.front();
    if (out.empty()) out = strategy + "-seed" + std::to_string(seed) + ".weights";

    detector::ModelParams model = harness::train_strategy(cfg, seed, kind);
    detector::save_weights(out, model);

    // quick quality readout on this seed's in-distribution test split
    harness::SeedData d = harness::make_seed_data(cfg, seed);
    detector::TrainConfig tc;
    tc.val_conf_threshold = cfg.eval_conf;
    tc.val_nms_threshold = cfg.eval_nms;
    double map = detector::validation_map50(model, d.test_in, tc);
    std::printf("saved %s (mAP@0.5 %.4f on the seed-%llu in-distribution test split)\n",
                out.c_str(), map, static_cast<unsigned long long>(seed));
    return 0;
}

int cmd_evaluate(const std::string& weights, const std::string& weights2,
                 const std::string& testset, double conf, double nms, double bgfp_conf,
                 const std::string& pr_out) {
    detector::ModelParams model = detector::load_weights(weights);
    detector::ModelParams second;
    if (!weights2.empty()) second = detector::load_weights(weights2);
    Dataset ds = datagen::load_dataset(testset);

    std::vector<std::vector<BoundingBox>> preds, gts;
    for (const SceneSample& s : ds) {
        if (weights2.empty())
            preds.push_back(detector::predict(model, s.image, conf, nms));
        else
            preds.push_back(strategies::ensemble_infer(model, second, s.image, conf, nms));
        gts.push_back(s.boxes);
    }

    metrics::EvalReport e = metrics::evaluate(preds, gts, datagen::kNumClasses);
    std::vector<std::vector<BoundingBox>> bg_preds;
    for (size_t i = 0; i < ds.size(); ++i)
        if (ds[i].background_only) bg_preds.push_back(preds[i]);
    std::string bgfp = "n/a";
    if (!bg_preds.empty()) {
        e.background_fp = metrics::count_background_fp(bg_preds, bgfp_conf);
        bgfp = std::to_string(e.background_fp);
    }
    print_eval_line(e, bgfp);

    if (!pr_out.empty()) {
        std::ofstream out(pr_out, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + pr_out);
        out << "class,recall,precision\n";
        char buf[64];
        for (int cls = 0; cls < datagen::kNumClasses; ++cls)
            for (const metrics::PRPoint& pt : class_pr(preds, gts, cls)) {
                std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f\n", cls, pt.recall, pt.precision);
                out << buf;
            }
        std::printf("wrote PR curves to %s\n", pr_out.c_str());
    }
    return 0;
}

// ---- report: rebuild the mean tables from the per-seed CSV artifacts ----

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!cells.empty()) rows.push_back(cells);
    }
    return rows;
}

double parse_cell(const std::string& s) {
    return s == "n/a" ? metrics::undefined_ap() : std::stod(s);
}

metrics::EvalReport row_to_eval(const std::vector<std::string>& cells) {
    metrics::EvalReport e;
    e.ap = parse_cell(cells[1]);
    e.ap50 = parse_cell(cells[2]);
    e.ap75 = parse_cell(cells[3]);
    e.ap_small = parse_cell(cells[4]);
    e.ap_medium = parse_cell(cells[5]);
    e.ap_large = parse_cell(cells[6]);
    e.map_pascal = parse_cell(cells[7]);
    e.background_fp = cells[8] == "n/a" ? 0 : static_cast<int>(std::stol(cells[8]));
    return e;
}

int cmd_report(const std::string& dir) {
    // collect seed ids from the per-seed CSV names
    std::vector<uint64_t> seeds;
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::string name = entry.path().filename().string();
        const std::string prefix = "seed", suffix = "_in_distribution.csv";
        if (name.size() > prefix.size() + suffix.size() && name.rfind(prefix, 0) == 0 &&
            name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
            seeds.push_back(std::stoull(name.substr(prefix.size(),
                                                    name.size() - prefix.size() - suffix.size())));
    }
    std::sort(seeds.begin(), seeds.end());
    if (seeds.empty()) {
        std::fprintf(stderr, "error: no seed*_in_distribution.csv files in %s\n", dir.c_str());
        return 1;
    }

    harness::ComparisonReport report;
    for (uint64_t seed : seeds) {
        auto in_rows =
            read_csv(dir + "/seed" + std::to_string(seed) + "_in_distribution.csv");
        auto un_rows = read_csv(dir + "/seed" + std::to_string(seed) + "_unseen.csv");
        if (in_rows.size() != un_rows.size() || in_rows.size() < 2)
            throw std::runtime_error("seed " + std::to_string(seed) +
                                     ": table sizes disagree or are empty");
        harness::SeedReport sr;
        sr.seed = seed;
        for (size_t i = 1; i < in_rows.size(); ++i) {
            harness::StrategyEval row;
            row.kind = strategies::parse_strategy(in_rows[i][0]);
            if (un_rows[i][0] != in_rows[i][0])
                throw std::runtime_error("seed " + std::to_string(seed) +
                                         ": strategy rows out of order");
            row.test_in = row_to_eval(in_rows[i]);
            row.unseen = row_to_eval(un_rows[i]);
            sr.rows.push_back(row);
        }
        report.seeds.push_back(std::move(sr));
    }
    for (const harness::StrategyEval& row : report.seeds.front().rows)
        report.strategy_list.push_back(row.kind);

    harness::emit_report(report, dir, harness::ReportFormat::csv);
    harness::emit_report(report, dir, harness::ReportFormat::markdown);
    std::printf("recomputed mean tables over %zu seeds into %s\n", report.seeds.size(),
                dir.c_str());
    for (const harness::TrendOutcome& t : harness::all_trends(report))
        std::printf("%s %s: %s\n", t.pass ? "PASS" : "FAIL", t.name.c_str(), t.detail.c_str());
    return 0;
}

int cmd_run_all(const std::string& config_path) {
    harness::ExperimentConfig cfg = load_experiment_config(config_path);

    harness::ComparisonReport report;
    report.strategy_list = cfg.strategy_list;
    for (uint64_t seed : cfg.seeds) {
        harness::ExperimentConfig one = cfg;
        one.seeds = {seed};
        harness::ComparisonReport part = harness::run_experiment(one);
        for (auto& sr : part.seeds) {
            std::printf("seed %llu: %zu strategies evaluated\n",
                        static_cast<unsigned long long>(seed), sr.rows.size());
            report.seeds.push_back(std::move(sr));
        }
        for (auto& f : part.failed_seeds) {
            std::printf("seed %llu: FAILED (%s)\n", static_cast<unsigned long long>(f.first),
                        f.second.c_str());
            report.failed_seeds.push_back(std::move(f));
        }
        std::fflush(stdout);
    }

    std::vector<std::string> files = harness::emit_report(report, cfg.output_dir,
                                                          harness::ReportFormat::csv);
    harness::emit_report(report, cfg.output_dir, harness::ReportFormat::markdown);
    std::printf("wrote %zu report files to %s\n", files.size(), cfg.output_dir.c_str());

    if (report.seeds.empty()) {
        std::fprintf(stderr, "error: every seed failed\n");
        return 1;
    }

    std::printf("\nmean over %zu seeds, unseen-environment test set:\n", report.seeds.size());
    std::printf("%-24s %8s %8s\n", "Algorithm", "mAP", "bgFP");
    for (const harness::MeanRow& m : harness::mean_rows(report, true))
        std::printf("%-24s %8.4f %8.2f\n", strategies::to_string(m.kind).c_str(), m.map,
                    m.background_fp);
    std::printf("\n");
    for (const harness::TrendOutcome& t : harness::all_trends(report))
        std::printf("%s %s: %s\n", t.pass ? "PASS" : "FAIL", t.name.c_str(), t.detail.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale federated object-detection training simulator"};
    app.require_subcommand(1);

    // generate-data
    auto* gen = app.add_subcommand("generate-data", "render a dataset directory");
    std::string gen_domain = "real", gen_out;
    int gen_n = 300;
    uint64_t gen_seed = 1;
    bool gen_imbalanced = false;
    gen->add_option("--domain", gen_domain, "real | synthetic | unseen-test")
        ->check(CLI::IsMember({"real", "synthetic", "unseen-test"}));
    auto* gen_n_opt = gen->add_option("--n", gen_n, "number of images (fixed at 116 for unseen-test)");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_flag("--imbalanced", gen_imbalanced, "skip class balancing");

    // train
    auto* train = app.add_subcommand("train", "train one strategy and save its weights");
    std::string train_config, train_strategy, train_out;
    uint64_t train_seed = 0;
    train->add_option("--strategy", train_strategy, "strategy kind")->required();
    train->add_option("--config", train_config, "experiment config file");
    auto* train_seed_opt = train->add_option("--seed", train_seed, "seed (default: first configured)");
    train->add_option("--out", train_out, "weights file (default <strategy>-seed<seed>.weights)");

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "evaluate saved weights on a dataset directory");
    std::string eval_weights, eval_weights2, eval_testset, eval_pr;
    double eval_conf = 0.05, eval_nms = 0.45, eval_bgfp_conf = 0.25;
    eval->add_option("--weights", eval_weights, "weights file")->required();
    eval->add_option("--weights2", eval_weights2, "second weights file for ensemble inference");
    eval->add_option("--testset", eval_testset, "dataset directory")->required();
    eval->add_option("--conf", eval_conf, "decode confidence threshold");
    eval->add_option("--nms", eval_nms, "NMS IoU threshold");
    eval->add_option("--bgfp-conf", eval_bgfp_conf, "background-FP confidence threshold");
    eval->add_option("--pr-out", eval_pr, "write per-class PR curves (IoU 0.5) to this CSV");

    // report
    auto* rep = app.add_subcommand("report", "rebuild mean tables from per-seed CSVs");
    std::string rep_dir;
    rep->add_option("--dir", rep_dir, "run directory with seed*_*.csv files")->required();

    // run-all
    auto* runall = app.add_subcommand("run-all", "full multi-seed comparison run");
    std::string runall_config;
    runall->add_option("--config", runall_config, "experiment config file");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed())
            return cmd_generate_data(gen_domain, gen_n, gen_seed, gen_out, gen_imbalanced,
                                     gen_n_opt->count() > 0);
        if (train->parsed())
            return cmd_train(train_config, train_strategy, train_seed,
                             train_seed_opt->count() > 0, train_out);
        if (eval->parsed())
            return cmd_evaluate(eval_weights, eval_weights2, eval_testset, eval_conf, eval_nms,
                                eval_bgfp_conf, eval_pr);
        if (rep->parsed()) return cmd_report(rep_dir);
        if (runall->parsed()) return cmd_run_all(runall_config);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
