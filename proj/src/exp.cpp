// Copyright 2026 the mnlab authors
// SPDX-License-Identifier: Apache-2.0

#include "mnlab/exp.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "mnlab/audit.hpp"
#include "mnlab/diagnostics.hpp"
#include "mnlab/prng.hpp"
#include "mnlab/transform.hpp"

namespace fs = std::filesystem;

namespace mnlab {

namespace {

/// Fixed 6-decimal formatting so re-emitted reports are byte-stable.
std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) fail(ErrorCode::Io, "cannot open " + path);
    nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
    if (j.is_discarded()) fail(ErrorCode::Io, path + " is not valid JSON");
    return j;
}

} // namespace

SweepConfig sweep_config_from_json(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::Io, std::string("sweep config parse error: ") + e.what());
    }

    SweepConfig c;
    if (j.contains("builder")) {
        const auto& b = j["builder"];
        c.builder.name = b.value("name", c.builder.name);
        c.builder.widths = b.value("widths", c.builder.widths);
        c.builder.num_classes = b.value("num_classes", c.builder.num_classes);
        c.builder.input_channels = b.value("input_channels", c.builder.input_channels);
    }
    c.r_grid = j.value("r_grid", c.r_grid);
    c.ipc_grid = j.value("ipc_grid", c.ipc_grid);
    c.seeds = j.value("seeds", c.seeds);
    if (j.contains("dataset")) {
        const auto& d = j["dataset"];
        c.dataset.kind = d.value("kind", c.dataset.kind);
        if (d.contains("synth")) {
            const auto& s = d["synth"];
            c.dataset.synth.classes = s.value("classes", c.dataset.synth.classes);
            c.dataset.synth.samples_per_class =
                s.value("samples_per_class", c.dataset.synth.samples_per_class);
            c.dataset.synth.channels = s.value("channels", c.dataset.synth.channels);
            c.dataset.synth.height = s.value("height", c.dataset.synth.height);
            c.dataset.synth.width = s.value("width", c.dataset.synth.width);
            c.dataset.synth.noise_stddev = s.value("noise_stddev", c.dataset.synth.noise_stddev);
        }
        c.dataset.eval_samples_per_class =
            d.value("eval_samples_per_class", c.dataset.eval_samples_per_class);
        c.dataset.data_seed = d.value("data_seed", c.dataset.data_seed);
        c.dataset.train_path = d.value("train_path", c.dataset.train_path);
        c.dataset.test_path = d.value("test_path", c.dataset.test_path);
        c.dataset.variant = d.value("variant", "cifar10") == std::string("cifar100")
                                ? CifarVariant::Cifar100
                                : CifarVariant::Cifar10;
    }
    if (j.contains("train")) c.train = train_config_from_json(j["train"].dump());
    c.audit_batch = j.value("audit_batch", c.audit_batch);
    c.parallelism = j.value("parallelism", c.parallelism);
    c.out_dir = j.value("out_dir", c.out_dir);
    if (c.r_grid.empty() || c.ipc_grid.empty() || c.seeds.empty())
        fail(ErrorCode::InvalidArgument, "sweep config: grids and seeds must be nonempty");
    if (c.out_dir.empty()) fail(ErrorCode::InvalidArgument, "sweep config: out_dir is required");
    return c;
}

std::string sweep_config_to_json(const SweepConfig& c) {
    nlohmann::ordered_json j;
    j["builder"] = {{"name", c.builder.name},
                    {"widths", c.builder.widths},
                    {"num_classes", c.builder.num_classes},
                    {"input_channels", c.builder.input_channels}};
    j["r_grid"] = c.r_grid;
    j["ipc_grid"] = c.ipc_grid;
    j["seeds"] = c.seeds;
    j["dataset"] = {{"kind", c.dataset.kind},
                    {"synth",
                     {{"classes", c.dataset.synth.classes},
                      {"samples_per_class", c.dataset.synth.samples_per_class},
                      {"channels", c.dataset.synth.channels},
                      {"height", c.dataset.synth.height},
                      {"width", c.dataset.synth.width},
                      {"noise_stddev", c.dataset.synth.noise_stddev}}},
                    {"eval_samples_per_class", c.dataset.eval_samples_per_class},
                    {"data_seed", c.dataset.data_seed},
                    {"train_path", c.dataset.train_path},
                    {"test_path", c.dataset.test_path},
                    {"variant", c.dataset.variant == CifarVariant::Cifar100 ? "cifar100" : "cifar10"}};
    j["train"] = nlohmann::ordered_json::parse(train_config_to_json(c.train));
    j["audit_batch"] = c.audit_batch;
    j["parallelism"] = c.parallelism;
    j["out_dir"] = c.out_dir;
    return j.dump(2) + "\n";
}

std::string cell_id(int r, int ipc, std::uint64_t seed) {
    return "r" + std::to_string(r) + "_ipc" + std::to_string(ipc) + "_seed" + std::to_string(seed);
}

namespace {

ArchGraph build_from_spec(const BuilderSpec& b, int dataset_classes) {
    const int classes = b.num_classes > 0 ? b.num_classes : dataset_classes;
    if (b.name == "resnet18") return build_resnet18(classes, b.input_channels);
    if (b.name == "micro_cnn") return build_micro_cnn(b.widths, classes);
    fail(ErrorCode::InvalidArgument, "unknown builder '" + b.name + "'");
}

struct SweepData {
    Dataset train_pool;
    Dataset eval_set;
};

SweepData load_sweep_data(const DatasetSpec& d) {
    SweepData sd;
    if (d.kind == "synth") {
        sd.train_pool = synth_dataset(d.synth, derive_seed(d.data_seed, "train-split"));
        SynthSpec es = d.synth;
        es.samples_per_class = d.eval_samples_per_class;
        sd.eval_set = synth_dataset(es, derive_seed(d.data_seed, "eval-split"));
    } else if (d.kind == "cifar") {
        sd.train_pool = load_cifar_binary(d.train_path, d.variant);
        if (d.test_path.empty())
            fail(ErrorCode::InvalidArgument, "cifar sweep needs dataset.test_path");
        sd.eval_set = load_cifar_binary(d.test_path, d.variant);
    } else {
        fail(ErrorCode::InvalidArgument, "unknown dataset kind '" + d.kind + "'");
    }
    return sd;
}

CellResult run_cell(const SweepConfig& cfg, const SweepData& data, int r, int ipc,
                    std::uint64_t seed) {
    CellResult res;
    res.id = cell_id(r, ipc, seed);
    res.r = r;
    res.ipc = ipc;
    res.seed = seed;
    res.dir = cfg.out_dir + "/" + res.id;

    // Idempotence: a completed cell is never re-run.
    if (fs::exists(res.dir + "/cell_summary.json")) {
        try {
            nlohmann::json j = read_json_file(res.dir + "/cell_summary.json");
            if (j.value("status", "") == "complete") {
                res.status = "skipped";
                res.test_accuracy = j.value("test_accuracy", -1.0);
                res.oracle_accuracy = j.value("oracle_accuracy", -1.0);
                res.final_train_acc = j.value("final_train_acc", -1.0);
                res.per_path_accuracy = j.value("per_path_accuracy", std::vector<double>{});
                res.params = j.value("params", 0ull);
                res.macs_eval = j.value("macs_eval", 0ull);
                return res;
            }
        } catch (const Error&) {
            // Unreadable summary: fall through and re-run the cell.
        }
    }

    try {
        fs::create_directories(res.dir);

        // One index set per (ipc, seed), reused across every r.
        const std::vector<int> indices = subsample_indices(data.train_pool, ipc, seed);
        {
            nlohmann::json ij = indices;
            std::ofstream(res.dir + "/subset.idx") << ij.dump() << "\n";
        }
        Dataset train = take_indices(data.train_pool, indices);
        train.ipc = ipc;

        ArchGraph base = build_from_spec(cfg.builder, data.train_pool.class_count);
        TransformConfig tc;
        tc.r = r;
        ArchGraph graph = mn_transform(base, tc);
        std::ofstream(res.dir + "/graph.json") << graph_to_json(graph);

        AuditReport audit = audit_graph(graph, data.train_pool.height, data.train_pool.width,
                                        cfg.audit_batch);
        AuditReport base_audit = count_params(base);
        audit.has_gain = true;
        audit.gain_vs_baseline_percent =
            (static_cast<double>(audit.total_params) / static_cast<double>(base_audit.total_params) -
             1.0) *
            100.0;
        std::ofstream(res.dir + "/audit.json") << audit_to_json(audit, nullptr);
        res.params = audit.total_params;
        res.macs_eval = audit.total_macs_eval;

        TrainConfig tcfg = cfg.train;
        tcfg.seed = seed;
        TrainOutput out = train_model(graph, train, &data.eval_set, tcfg, res.dir);
        res.final_train_acc = out.result.final_train_acc;

        DiagnosticsOptions dopt;
        dopt.batch_size = std::min(tcfg.batch_size, data.eval_set.size());
        DiagnosticsReport diag = diagnose_run(res.dir, data.eval_set, dopt, res.dir);
        res.test_accuracy = diag.test_accuracy;
        res.oracle_accuracy = diag.oracle;
        res.per_path_accuracy = diag.per_path_accuracy;

        res.status = "complete";
    } catch (const std::exception& e) {
        res.status = "failed";
        res.error = e.what();
    }

    nlohmann::ordered_json j;
    j["format"] = "mnlab.cell.v1";
    j["id"] = res.id;
    j["r"] = r;
    j["ipc"] = ipc;
    j["seed"] = seed;
    j["status"] = res.status;
    if (!res.error.empty()) j["error"] = res.error;
    j["test_accuracy"] = res.test_accuracy;
    j["oracle_accuracy"] = res.oracle_accuracy;
    j["final_train_acc"] = res.final_train_acc;
    j["per_path_accuracy"] = res.per_path_accuracy;
    j["params"] = res.params;
    j["macs_eval"] = res.macs_eval;
    std::ofstream(res.dir + "/cell_summary.json") << j.dump(2) << "\n";
    return res;
}

} // namespace

SweepOutcome run_sweep(const SweepConfig& cfg) {
    SweepOutcome out;
    out.out_dir = cfg.out_dir;
    fs::create_directories(cfg.out_dir);
    std::ofstream(cfg.out_dir + "/sweep_config.json") << sweep_config_to_json(cfg);

    const SweepData data = load_sweep_data(cfg.dataset);

    struct Job {
        int r, ipc;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (int ipc : cfg.ipc_grid)
        for (int r : cfg.r_grid)
            for (std::uint64_t seed : cfg.seeds) jobs.push_back({r, ipc, seed});

    int parallelism = std::max(1, cfg.parallelism);
    if (const char* det = std::getenv("MNLAB_DETERMINISTIC"); det && det[0] == '1') parallelism = 1;
    parallelism = std::min<int>(parallelism, static_cast<int>(jobs.size()));

    std::vector<CellResult> results(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            results[i] = run_cell(cfg, data, jobs[i].r, jobs[i].ipc, jobs[i].seed);
        }
    };
    if (parallelism == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < parallelism; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    for (auto& r : results) {
        if (r.status == "failed") ++out.failures;
        out.cells.push_back(std::move(r));
    }
    return out;
}

namespace {

struct CellRow {
    int r = 0, ipc = 0;
    std::uint64_t seed = 0;
    double test_acc = std::numeric_limits<double>::quiet_NaN();
    double oracle = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t params = 0, macs_eval = 0;
    std::string id, dir;
};

std::vector<CellRow> scan_cells(const std::string& results_dir) {
    std::vector<CellRow> rows;
    if (!fs::is_directory(results_dir)) fail(ErrorCode::Io, "no such results dir: " + results_dir);
    for (const auto& e : fs::directory_iterator(results_dir)) {
        if (!e.is_directory()) continue;
        const std::string summary = e.path().string() + "/cell_summary.json";
        if (!fs::exists(summary)) continue;
        nlohmann::json j = read_json_file(summary);
        if (j.value("status", "") != "complete") continue;
        CellRow row;
        row.r = j.value("r", 0);
        row.ipc = j.value("ipc", 0);
        row.seed = j.value("seed", 0ull);
        row.test_acc = j.value("test_accuracy", std::numeric_limits<double>::quiet_NaN());
        row.oracle = j.value("oracle_accuracy", std::numeric_limits<double>::quiet_NaN());
        row.params = j.value("params", 0ull);
        row.macs_eval = j.value("macs_eval", 0ull);
        row.id = j.value("id", e.path().filename().string());
        row.dir = e.path().filename().string();
        rows.push_back(std::move(row));
    }
    if (rows.empty()) fail(ErrorCode::Io, "no completed cells under " + results_dir);
    std::sort(rows.begin(), rows.end(), [](const CellRow& a, const CellRow& b) {
        return std::tie(a.ipc, a.r, a.seed) < std::tie(b.ipc, b.r, b.seed);
    });
    return rows;
}

} // namespace

std::vector<std::vector<double>> column_minmax_normalize(const std::vector<std::vector<double>>& m) {
    if (m.empty()) return {};
    const std::size_t cols = m.front().size();
    std::vector<std::vector<double>> out = m;
    for (std::size_t c = 0; c < cols; ++c) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -std::numeric_limits<double>::infinity();
        for (const auto& row : m) {
            const double v = row[c];
            if (!std::isnan(v)) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
        for (auto& row : out) {
            double& v = row[c];
            if (std::isnan(v)) continue;
            v = hi > lo ? (v - lo) / (hi - lo) : 1.0;
        }
    }
    return out;
}

void emit_report(const std::string& results_dir) {
    const std::vector<CellRow> rows = scan_cells(results_dir);
    const std::string report_dir = results_dir + "/report";
    fs::create_directories(report_dir);

    std::set<int> r_set, ipc_set;
    for (const auto& c : rows) {
        r_set.insert(c.r);
        ipc_set.insert(c.ipc);
    }
    const std::vector<int> rs(r_set.begin(), r_set.end());
    const std::vector<int> ipcs(ipc_set.begin(), ipc_set.end());
    const double nan = std::numeric_limits<double>::quiet_NaN();

    // Mean over seeds per (ipc, r).
    std::map<std::pair<int, int>, std::pair<double, int>> agg;
    for (const auto& c : rows) {
        if (std::isnan(c.test_acc)) continue;
        auto& [sum, n] = agg[{c.ipc, c.r}];
        sum += c.test_acc;
        ++n;
    }
    auto mean_at = [&](int ipc, int r) {
        auto it = agg.find({ipc, r});
        return it == agg.end() ? nan : it->second.first / it->second.second;
    };

    std::vector<std::vector<double>> acc_matrix;
    for (int ipc : ipcs) {
        std::vector<double> row;
        for (int r : rs) row.push_back(mean_at(ipc, r));
        acc_matrix.push_back(std::move(row));
    }

    auto write_matrix = [&](const std::string& name, const std::vector<std::vector<double>>& m) {
        std::ostringstream os;
        os << "ipc";
        for (int r : rs) os << ",r=" << r;
        os << '\n';
        for (std::size_t i = 0; i < ipcs.size(); ++i) {
            os << ipcs[i];
            for (std::size_t j = 0; j < rs.size(); ++j) {
                os << ',';
                if (!std::isnan(m[i][j])) os << fixed6(m[i][j]);
            }
            os << '\n';
        }
        std::ofstream(report_dir + "/" + name) << os.str();
    };

    write_matrix("accuracy_matrix.csv", acc_matrix);
    write_matrix("accuracy_matrix_colnorm.csv", column_minmax_normalize(acc_matrix));

    // Gain vs the r=1 cell at the same ipc — always computed, never stored.
    std::vector<std::vector<double>> gain_matrix;
    for (std::size_t i = 0; i < ipcs.size(); ++i) {
        const double base = mean_at(ipcs[i], 1);
        std::vector<double> row;
        for (std::size_t j = 0; j < rs.size(); ++j)
            row.push_back(std::isnan(base) || std::isnan(acc_matrix[i][j]) ? nan
                                                                           : acc_matrix[i][j] - base);
        gain_matrix.push_back(std::move(row));
    }
    write_matrix("gain_matrix.csv", gain_matrix);

    // Cost table: one row per r (architecture cost is ipc/seed independent).
    std::ostringstream cost;
    cost << "r,params,params_millions_3sf,gain_table_percent,macs_eval,activation_elements\n";
    std::map<int, const CellRow*> per_r;
    for (const auto& c : rows)
        if (!per_r.count(c.r)) per_r[c.r] = &c;
    const CellRow* base_row = per_r.count(1) ? per_r.at(1) : nullptr;
    for (const auto& [r, c] : per_r) {
        cost << r << ',' << c->params << ',' << fixed6(params_in_millions_3sf(c->params)) << ',';
        if (base_row) cost << fixed6(table_gain_percent(base_row->params, c->params));
        cost << ',' << c->macs_eval << ',';
        // Activation elements live in the cell's audit.json.
        const nlohmann::json a = read_json_file(results_dir + "/" + c->dir + "/audit.json");
        cost << a.at("totals").value("activation_elements", 0ull) << '\n';
    }
    std::ofstream(report_dir + "/cost_table.csv") << cost.str();

    // Summary with full traceability: every number names its cell.
    nlohmann::ordered_json sj;
    sj["format"] = "mnlab.report.v1";
    sj["cells"] = nlohmann::ordered_json::array();
    for (const auto& c : rows) {
        const double base = mean_at(c.ipc, 1);
        nlohmann::ordered_json cj;
        cj["id"] = c.id;
        cj["dir"] = c.dir;
        cj["r"] = c.r;
        cj["ipc"] = c.ipc;
        cj["seed"] = c.seed;
        cj["test_accuracy"] = c.test_acc;
        cj["oracle_accuracy"] = c.oracle;
        if (!std::isnan(base)) cj["gain_vs_r1"] = c.test_acc - base;
        cj["params"] = c.params;
        cj["macs_eval"] = c.macs_eval;
        sj["cells"].push_back(cj);
    }
    sj["aggregates"] = nlohmann::ordered_json::array();
    for (int ipc : ipcs)
        for (int r : rs) {
            std::vector<double> accs;
            for (const auto& c : rows)
                if (c.ipc == ipc && c.r == r && !std::isnan(c.test_acc)) accs.push_back(c.test_acc);
            if (accs.empty()) continue;
            double mean = 0;
            for (double a : accs) mean += a;
            mean /= static_cast<double>(accs.size());
            double var = 0;
            for (double a : accs) var += (a - mean) * (a - mean);
            const double stddev = accs.size() > 1 ? std::sqrt(var / (accs.size() - 1)) : 0.0;
            sj["aggregates"].push_back({{"ipc", ipc},
                                        {"r", r},
                                        {"seeds", accs.size()},
                                        {"mean_test_accuracy", mean},
                                        {"stddev_test_accuracy", stddev}});
        }
    std::ofstream(report_dir + "/summary.json") << sj.dump(2) << "\n";
}

std::vector<std::string> validate_cell_dir(const std::string& dir) {
    std::vector<std::string> problems;
    auto need_file = [&](const std::string& name) {
        if (!fs::exists(dir + "/" + name)) problems.push_back(dir + ": missing " + name);
        return fs::exists(dir + "/" + name);
    };

    if (need_file("cell_summary.json")) {
        try {
            nlohmann::json j = read_json_file(dir + "/cell_summary.json");
            for (const char* key : {"id", "r", "ipc", "seed", "status"})
                if (!j.contains(key)) problems.push_back(dir + ": cell_summary.json lacks '" + key + "'");
            if (j.value("status", "") == "failed") return problems; // failed cells carry no artifacts
        } catch (const Error& e) {
            problems.push_back(e.what());
            return problems;
        }
    }
    need_file("graph.json");
    need_file("audit.json");
    need_file("subset.idx");
    need_file("config.json");
    need_file("stats.json");
    need_file("checkpoint.mnck");
    if (need_file("history.csv")) {
        std::ifstream is(dir + "/history.csv");
        std::string header;
        std::getline(is, header);
        if (header != "epoch,lr,train_loss,train_acc,val_acc")
            problems.push_back(dir + ": history.csv has unexpected header '" + header + "'");
        std::string line;
        int prev = 0;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            const int epoch = std::atoi(line.c_str());
            if (epoch != prev + 1)
                problems.push_back(dir + ": history.csv epochs not monotone at '" + line + "'");
            prev = epoch;
        }
        if (prev == 0) problems.push_back(dir + ": history.csv has no rows");
    }
    if (need_file("diag.json")) {
        try {
            nlohmann::json j = read_json_file(dir + "/diag.json");
            for (const char* key :
                 {"format", "paths", "test_accuracy", "oracle_accuracy", "per_path_accuracy",
                  "dnr_per_layer", "cumulative_curves"})
                if (!j.contains(key)) problems.push_back(dir + ": diag.json lacks '" + key + "'");
            if (j.value("format", "") != "mnlab.diag.v1")
                problems.push_back(dir + ": diag.json has wrong format tag");
            const int paths = j.value("paths", 0);
            if (static_cast<int>(j.value("per_path_accuracy", std::vector<double>{}).size()) != paths)
                problems.push_back(dir + ": per_path_accuracy length != paths");
            if (j.contains("cumulative_curves"))
                for (const char* curve : {"BestFirst", "WorstFirst", "Original"})
                    if (static_cast<int>(
                            j["cumulative_curves"].value(curve, std::vector<double>{}).size()) != paths)
                        problems.push_back(dir + ": cumulative curve '" + curve + "' length != paths");
        } catch (const Error& e) {
            problems.push_back(e.what());
        }
    }
    for (const char* csv : {"cka_layerwise.csv", "dnr_layerwise.csv", "cumulative_curves.csv", "paths.csv"})
        need_file(csv);
    return problems;
}

std::vector<std::string> validate_report_dir(const std::string& dir) {
    std::vector<std::string> problems;
    for (const char* name : {"accuracy_matrix.csv", "accuracy_matrix_colnorm.csv", "gain_matrix.csv",
                             "cost_table.csv", "summary.json"})
        if (!fs::exists(dir + "/" + std::string(name)))
            problems.push_back(dir + ": missing " + name);
    if (problems.empty()) {
        try {
            nlohmann::json j = read_json_file(dir + "/summary.json");
            if (j.value("format", "") != "mnlab.report.v1")
                problems.push_back(dir + ": summary.json has wrong format tag");
            if (!j.contains("cells") || !j["cells"].is_array() || j["cells"].empty())
                problems.push_back(dir + ": summary.json has no cells");
            else
                for (const auto& c : j["cells"])
                    if (!c.contains("dir") || !c.contains("id"))
                        problems.push_back(dir + ": summary.json cell lacks traceability fields");
        } catch (const Error& e) {
            problems.push_back(e.what());
        }
    }
    return problems;
}

} // namespace mnlab
