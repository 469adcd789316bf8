#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "fedscope/harness.hpp"

namespace fedscope::harness {

using strategies::StrategyKind;

namespace {

constexpr const char* kColumns[] = {"Algorithm", "AP",       "AP50", "AP75",        "APsmall",
                                    "APmedium",  "APlarge",  "mAP",  "BackgroundFP"};
constexpr int kNumColumns = 9;

std::string fmt4(double v) {
    if (std::isnan(v)) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

// AP cells for one table row; BackgroundFP handled separately since its type
// differs between the per-seed (count) and mean (average) tables.
std::vector<std::string> ap_cells(const metrics::EvalReport& e) {
    return {fmt4(e.ap),       fmt4(e.ap50),     fmt4(e.ap75),      fmt4(e.ap_small),
            fmt4(e.ap_medium), fmt4(e.ap_large), fmt4(e.map_pascal)};
}

void write_table(const std::string& path, ReportFormat format,
                 const std::vector<std::vector<std::string>>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("report: cannot write " + path);
    if (format == ReportFormat::csv) {
        for (int c = 0; c < kNumColumns; ++c) out << (c ? "," : "") << kColumns[c];
        out << "\n";
        for (const auto& row : rows) {
            for (size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << row[c];
            out << "\n";
        }
    } else {
        out << "|";
        for (const char* col : kColumns) out << " " << col << " |";
        out << "\n|";
        for (int c = 0; c < kNumColumns; ++c) out << "---|";
        out << "\n";
        for (const auto& row : rows) {
            out << "|";
            for (const std::string& cell : row) out << " " << cell << " |";
            out << "\n";
        }
    }
}

std::vector<std::vector<std::string>> seed_table(const SeedReport& sr, bool unseen) {
    std::vector<std::vector<std::string>> rows;
    for (const StrategyEval& row : sr.rows) {
        const metrics::EvalReport& e = unseen ? row.unseen : row.test_in;
        std::vector<std::string> cells = {strategies::to_string(row.kind)};
        for (std::string& c : ap_cells(e)) cells.push_back(std::move(c));
        // background probes only exist in the unseen set
        cells.push_back(unseen ? std::to_string(e.background_fp) : std::string("n/a"));
        rows.push_back(std::move(cells));
    }
    return rows;
}

std::vector<std::vector<std::string>> mean_table(const std::vector<MeanRow>& means, bool unseen) {
    std::vector<std::vector<std::string>> rows;
    for (const MeanRow& m : means) {
        std::vector<std::string> cells = {strategies::to_string(m.kind)};
        for (double v : {m.ap, m.ap50, m.ap75, m.ap_small, m.ap_medium, m.ap_large, m.map})
            cells.push_back(fmt4(v));
        cells.push_back(unseen ? fmt4(m.background_fp) : std::string("n/a"));
        rows.push_back(std::move(cells));
    }
    return rows;
}

void write_runinfo(const std::string& path, const ComparisonReport& r) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("report: cannot write " + path);
    out << "strategies =";
    for (StrategyKind k : r.strategy_list) out << " " << strategies::to_string(k);
    out << "\n";
    for (const SeedReport& sr : r.seeds)
        out << "seed " << sr.seed << "  init " << sr.init_hash << "  data " << sr.data_hash
            << "\n";
    for (const auto& [seed, cause] : r.failed_seeds)
        out << "seed " << seed << "  FAILED: " << cause << "\n";
}

void write_rounds(const std::string& path,
                  const std::vector<federation::RoundStats>& history) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("report: cannot write " + path);
    size_t clients = history.empty() ? 0 : history.front().client_loss.size();
    out << "round";
    for (size_t c = 0; c < clients; ++c) out << ",client_loss_" << c;
    out << ",val_map50\n";
    char buf[32];
    for (const federation::RoundStats& rs : history) {
        out << rs.round;
        for (double loss : rs.client_loss) {
            std::snprintf(buf, sizeof buf, "%.6f", loss);
            out << "," << buf;
        }
        out << "," << (std::isnan(rs.val_map50)
                           ? std::string("n/a")
                           : (std::snprintf(buf, sizeof buf, "%.6f", rs.val_map50), buf))
            << "\n";
    }
}

}  // namespace

std::vector<MeanRow> mean_rows(const ComparisonReport& r, bool unseen) {
    std::vector<MeanRow> means;
    for (StrategyKind kind : r.strategy_list) {
        MeanRow m;
        m.kind = kind;
        // mean over seeds where the cell is defined; NaN when it never is
        auto mean_of = [&](auto pick) {
            double sum = 0;
            int n = 0;
            for (const SeedReport& sr : r.seeds)
                for (const StrategyEval& row : sr.rows)
                    if (row.kind == kind) {
                        double v = pick(unseen ? row.unseen : row.test_in);
                        if (!std::isnan(v)) {
                            sum += v;
                            ++n;
                        }
                    }
            return n ? sum / n : metrics::undefined_ap();
        };
        m.ap = mean_of([](const metrics::EvalReport& e) { return e.ap; });
        m.ap50 = mean_of([](const metrics::EvalReport& e) { return e.ap50; });
        m.ap75 = mean_of([](const metrics::EvalReport& e) { return e.ap75; });
        m.ap_small = mean_of([](const metrics::EvalReport& e) { return e.ap_small; });
        m.ap_medium = mean_of([](const metrics::EvalReport& e) { return e.ap_medium; });
        m.ap_large = mean_of([](const metrics::EvalReport& e) { return e.ap_large; });
        m.map = mean_of([](const metrics::EvalReport& e) { return e.map_pascal; });
        m.background_fp =
            unseen ? mean_of([](const metrics::EvalReport& e) { return double(e.background_fp); })
                   : metrics::undefined_ap();
        means.push_back(m);
    }
    return means;
}

std::vector<std::string> emit_report(const ComparisonReport& r, const std::string& dir,
                                     ReportFormat format) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const char* ext = format == ReportFormat::csv ? ".csv" : ".md";
    std::vector<std::string> written;

    for (const SeedReport& sr : r.seeds) {
        for (bool unseen : {false, true}) {
            std::string path = dir + "/seed" + std::to_string(sr.seed) +
                               (unseen ? "_unseen" : "_in_distribution") + ext;
            write_table(path, format, seed_table(sr, unseen));
            written.push_back(path);
        }
    }
    for (bool unseen : {false, true}) {
        std::string path = dir + std::string(unseen ? "/mean_unseen" : "/mean_in_distribution") + ext;
        write_table(path, format, mean_table(mean_rows(r, unseen), unseen));
        written.push_back(path);
    }
    std::string info = dir + "/runinfo.txt";
    write_runinfo(info, r);
    written.push_back(info);
    for (const SeedReport& sr : r.seeds) {
        for (const auto& [kind, history] : sr.round_history) {
            std::string path = dir + "/rounds_" + strategies::to_string(kind) + "_seed" +
                               std::to_string(sr.seed) + ".csv";
            write_rounds(path, history);
            written.push_back(path);
        }
    }
    return written;
}

namespace {

// Trends compare specific strategies, so those must be present in the run.
const StrategyEval* find_row(const SeedReport& sr, StrategyKind kind) {
    for (const StrategyEval& row : sr.rows)
        if (row.kind == kind) return &row;
    return nullptr;
}

bool has_all(const ComparisonReport& r, std::initializer_list<StrategyKind> kinds,
             TrendOutcome& out) {
    if (r.seeds.empty()) {
        out.pass = false;
        out.detail = "no completed seeds";
        return false;
    }
    for (StrategyKind k : kinds)
        if (std::find(r.strategy_list.begin(), r.strategy_list.end(), k) ==
            r.strategy_list.end()) {
            out.pass = false;
            out.detail = "requires strategy " + strategies::to_string(k);
            return false;
        }
    return true;
}

int need_of(size_t seeds, int num, int den) {
    return static_cast<int>((seeds * num + den - 1) / den);  // ceil(seeds * num/den)
}

}  // namespace

TrendOutcome trend_synthetic_worst(const ComparisonReport& r) {
    TrendOutcome t{"synthetic-worst-in-distribution", false, ""};
    if (!has_all(r, {StrategyKind::centralized_synthetic}, t)) return t;
    int hit = 0;
    for (const SeedReport& sr : r.seeds) {
        double synth = find_row(sr, StrategyKind::centralized_synthetic)->test_in.map_pascal;
        bool worst = true;
        for (const StrategyEval& row : sr.rows)
            if (row.test_in.map_pascal < synth) worst = false;
        hit += worst;
    }
    int need = need_of(r.seeds.size(), 4, 5);
    t.pass = hit >= need;
    t.detail = "synthetic-only lowest in-distribution mAP in " + std::to_string(hit) + "/" +
               std::to_string(r.seeds.size()) + " seeds (need " + std::to_string(need) + ")";
    return t;
}

TrendOutcome trend_federated_unseen(const ComparisonReport& r) {
    TrendOutcome t{"federated-strong-on-unseen", false, ""};
    if (!has_all(r, {StrategyKind::federated, StrategyKind::centralized_hybrid}, t)) return t;
    int beats_hybrid = 0, top2 = 0;
    for (const SeedReport& sr : r.seeds) {
        double fed = find_row(sr, StrategyKind::federated)->unseen.map_pascal;
        double hybrid = find_row(sr, StrategyKind::centralized_hybrid)->unseen.map_pascal;
        beats_hybrid += fed >= hybrid;
        int better = 0;
        for (const StrategyEval& row : sr.rows)
            if (row.unseen.map_pascal > fed) ++better;
        top2 += better < 2;
    }
    int need = need_of(r.seeds.size(), 4, 5);
    t.pass = beats_hybrid >= need && top2 >= need;
    t.detail = "federated >= hybrid on unseen in " + std::to_string(beats_hybrid) + "/" +
               std::to_string(r.seeds.size()) + ", in top-2 in " + std::to_string(top2) + "/" +
               std::to_string(r.seeds.size()) + " seeds (need " + std::to_string(need) +
               " each)";
    return t;
}

TrendOutcome trend_generalization_gap(const ComparisonReport& r) {
    TrendOutcome t{"federated-smaller-generalization-gap", false, ""};
    if (!has_all(r, {StrategyKind::centralized_real, StrategyKind::federated}, t)) return t;
    int real_overfits = 0, fed_smaller = 0;
    for (const SeedReport& sr : r.seeds) {
        const StrategyEval* real = find_row(sr, StrategyKind::centralized_real);
        const StrategyEval* fed = find_row(sr, StrategyKind::federated);
        double real_gap = real->test_in.map_pascal - real->unseen.map_pascal;
        double fed_gap = fed->test_in.map_pascal - fed->unseen.map_pascal;
        real_overfits += real_gap > 0;
        fed_smaller += fed_gap < real_gap;
    }
    int need_smaller = need_of(r.seeds.size(), 3, 5);
    t.pass = real_overfits == static_cast<int>(r.seeds.size()) && fed_smaller >= need_smaller;
    t.detail = "real-only gap positive in " + std::to_string(real_overfits) + "/" +
               std::to_string(r.seeds.size()) + " (need all), federated gap smaller in " +
               std::to_string(fed_smaller) + "/" + std::to_string(r.seeds.size()) + " (need " +
               std::to_string(need_smaller) + ")";
    return t;
}

TrendOutcome trend_background_fp(const ComparisonReport& r) {
    TrendOutcome t{"federated-fewer-background-fp", false, ""};
    if (!has_all(r,
                 {StrategyKind::federated, StrategyKind::fedensemble,
                  StrategyKind::centralized_hybrid},
                 t))
        return t;
    auto mean_bgfp = [&](StrategyKind kind) {
        double sum = 0;
        for (const SeedReport& sr : r.seeds) sum += find_row(sr, kind)->unseen.background_fp;
        return sum / static_cast<double>(r.seeds.size());
    };
    double fed = mean_bgfp(StrategyKind::federated);
    double fedens = mean_bgfp(StrategyKind::fedensemble);
    double hybrid = mean_bgfp(StrategyKind::centralized_hybrid);
    t.pass = fed <= hybrid && fedens <= hybrid;
    char buf[128];
    std::snprintf(buf, sizeof buf,
                  "mean background FPs: federated %.2f, fedensemble %.2f, hybrid %.2f", fed,
                  fedens, hybrid);
    t.detail = buf;
    return t;
}

std::vector<TrendOutcome> all_trends(const ComparisonReport& r) {
    return {trend_synthetic_worst(r), trend_federated_unseen(r), trend_generalization_gap(r),
            trend_background_fp(r)};
}

}  // namespace fedscope::harness
