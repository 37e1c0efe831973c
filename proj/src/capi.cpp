// Copyright 2026 the mnlab authors
// SPDX-License-Identifier: Apache-2.0

#include "mnlab/mnlab.h"

#include <cstring>
#include <fstream>
#include <string>

#include <json.hpp>

#include "mnlab/arch.hpp"
#include "mnlab/audit.hpp"
#include "mnlab/data.hpp"
#include "mnlab/diagnostics.hpp"
#include "mnlab/exp.hpp"
#include "mnlab/transform.hpp"

using namespace mnlab;

struct mnlab_graph {
    ArchGraph g;
};
struct mnlab_dataset {
    Dataset ds;
};

namespace {

thread_local std::string g_last_error;

mnlab_status to_status(ErrorCode c) {
    switch (c) {
    case ErrorCode::InvalidArgument: return MNLAB_ERR_INVALID_ARGUMENT;
    case ErrorCode::Io: return MNLAB_ERR_IO;
    case ErrorCode::Validation: return MNLAB_ERR_VALIDATION;
    case ErrorCode::Transform: return MNLAB_ERR_TRANSFORM;
    case ErrorCode::Shape: return MNLAB_ERR_SHAPE;
    case ErrorCode::Numeric: return MNLAB_ERR_NUMERIC;
    case ErrorCode::Internal: return MNLAB_ERR_INTERNAL;
    }
    return MNLAB_ERR_INTERNAL;
}

/// Runs fn, mapping exceptions onto status codes + the thread-local message.
template <typename Fn>
mnlab_status guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const Error& e) {
        g_last_error = e.what();
        return to_status(e.code());
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return MNLAB_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return MNLAB_ERR_INTERNAL;
    }
}

char* dup_string(const std::string& s) {
    char* out = new char[s.size() + 1];
    std::memcpy(out, s.data(), s.size() + 1);
    return out;
}

mnlab_status require(bool cond, const char* msg) {
    if (cond) return MNLAB_OK;
    g_last_error = msg;
    return MNLAB_ERR_INVALID_ARGUMENT;
}

} // namespace

extern "C" {

const char* mnlab_version(void) { return "mnlab 1.0.0"; }

const char* mnlab_last_error(void) { return g_last_error.c_str(); }

void mnlab_string_free(char* s) { delete[] s; }

mnlab_status mnlab_graph_build_resnet18(int num_classes, int input_channels, mnlab_graph** out) {
    if (auto st = require(out != nullptr, "out pointer is null"); st != MNLAB_OK) return st;
    return guarded([&] {
        *out = new mnlab_graph{build_resnet18(num_classes, input_channels)};
        return MNLAB_OK;
    });
}

mnlab_status mnlab_graph_build_micro_cnn(const int* widths, int num_widths, int num_classes,
                                         mnlab_graph** out) {
    if (auto st = require(out && widths && num_widths > 0, "bad builder arguments"); st != MNLAB_OK)
        return st;
    return guarded([&] {
        *out = new mnlab_graph{
            build_micro_cnn(std::vector<int>(widths, widths + num_widths), num_classes)};
        return MNLAB_OK;
    });
}

mnlab_status mnlab_graph_from_json(const char* json_text, mnlab_graph** out) {
    if (auto st = require(out && json_text, "null argument"); st != MNLAB_OK) return st;
    return guarded([&] {
        *out = new mnlab_graph{graph_from_json(json_text)};
        return MNLAB_OK;
    });
}

mnlab_status mnlab_graph_to_json(const mnlab_graph* g, char** out_json) {
    if (auto st = require(g && out_json, "null argument"); st != MNLAB_OK) return st;
    return guarded([&] {
        *out_json = dup_string(graph_to_json(g->g));
        return MNLAB_OK;
    });
}

mnlab_status mnlab_graph_transform(const mnlab_graph* g, int r, mnlab_graph** out) {
    if (auto st = require(g && out, "null argument"); st != MNLAB_OK) return st;
    return guarded([&] {
        TransformConfig cfg;
        cfg.r = r;
        *out = new mnlab_graph{mn_transform(g->g, cfg)};
        return MNLAB_OK;
    });
}

mnlab_status mnlab_path_count(int r, long long* out) {
    if (auto st = require(out != nullptr, "out pointer is null"); st != MNLAB_OK) return st;
    return guarded([&] {
        *out = path_count(r);
        return MNLAB_OK;
    });
}

void mnlab_graph_free(mnlab_graph* g) { delete g; }

mnlab_status mnlab_audit_json(const mnlab_graph* g, const mnlab_graph* baseline, int height,
                              int width, long long batch, char** out_json) {
    if (auto st = require(g && out_json && batch >= 0, "bad audit arguments"); st != MNLAB_OK)
        return st;
    return guarded([&] {
        AuditReport rep = audit_graph(g->g, height, width, static_cast<std::uint64_t>(batch));
        std::vector<LayerPreservation> pres;
        if (baseline) {
            AuditReport base = count_params(baseline->g);
            rep.has_gain = true;
            rep.gain_vs_baseline_percent =
                (static_cast<double>(rep.total_params) / static_cast<double>(base.total_params) - 1.0) *
                100.0;
            pres = preservation_report(base, rep);
        }
        *out_json = dup_string(audit_to_json(rep, baseline ? &pres : nullptr));
        return MNLAB_OK;
    });
}

mnlab_status mnlab_dataset_load_cifar(const char* path, int variant, mnlab_dataset** out) {
    if (auto st = require(path && out && (variant == 10 || variant == 100), "bad loader arguments");
        st != MNLAB_OK)
        return st;
    return guarded([&] {
        *out = new mnlab_dataset{
            load_cifar_binary(path, variant == 100 ? CifarVariant::Cifar100 : CifarVariant::Cifar10)};
        return MNLAB_OK;
    });
}

mnlab_status mnlab_dataset_synth(const char* spec_json, uint64_t seed, mnlab_dataset** out) {
    if (auto st = require(spec_json && out, "null argument"); st != MNLAB_OK) return st;
    return guarded([&] {
        nlohmann::json j = nlohmann::json::parse(spec_json, nullptr, false);
        if (j.is_discarded()) fail(ErrorCode::Io, "synth spec is not valid JSON");
        SynthSpec spec;
        spec.classes = j.value("classes", spec.classes);
        spec.samples_per_class = j.value("samples_per_class", spec.samples_per_class);
        spec.channels = j.value("channels", spec.channels);
        spec.height = j.value("height", spec.height);
        spec.width = j.value("width", spec.width);
        spec.noise_stddev = j.value("noise_stddev", spec.noise_stddev);
        *out = new mnlab_dataset{synth_dataset(spec, seed)};
        return MNLAB_OK;
    });
}

mnlab_status mnlab_dataset_write_cifar(const mnlab_dataset* ds, const char* path, int variant) {
    if (auto st = require(ds && path && (variant == 10 || variant == 100), "bad writer arguments");
        st != MNLAB_OK)
        return st;
    return guarded([&] {
        write_cifar_binary(ds->ds, path,
                           variant == 100 ? CifarVariant::Cifar100 : CifarVariant::Cifar10);
        return MNLAB_OK;
    });
}

mnlab_status mnlab_dataset_subsample_indices(const mnlab_dataset* ds, int ipc, uint64_t seed,
                                             char** out_json) {
    if (auto st = require(ds && out_json, "null argument"); st != MNLAB_OK) return st;
    return guarded([&] {
        nlohmann::json j = subsample_indices(ds->ds, ipc, seed);
        *out_json = dup_string(j.dump() + "\n");
        return MNLAB_OK;
    });
}

mnlab_status mnlab_dataset_take_indices(const mnlab_dataset* ds, const char* indices_json,
                                        int ipc_tag, mnlab_dataset** out) {
    if (auto st = require(ds && indices_json && out, "null argument"); st != MNLAB_OK) return st;
    return guarded([&] {
        nlohmann::json j = nlohmann::json::parse(indices_json, nullptr, false);
        if (j.is_discarded() || !j.is_array()) fail(ErrorCode::Io, "indices must be a JSON array");
        Dataset sub = take_indices(ds->ds, j.get<std::vector<int>>());
        sub.ipc = ipc_tag;
        *out = new mnlab_dataset{std::move(sub)};
        return MNLAB_OK;
    });
}

mnlab_status mnlab_dataset_info(const mnlab_dataset* ds, char** out_json) {
    if (auto st = require(ds && out_json, "null argument"); st != MNLAB_OK) return st;
    return guarded([&] {
        nlohmann::ordered_json j;
        j["size"] = ds->ds.size();
        j["channels"] = ds->ds.channels;
        j["height"] = ds->ds.height;
        j["width"] = ds->ds.width;
        j["class_count"] = ds->ds.class_count;
        j["ipc"] = ds->ds.ipc;
        j["provenance"] = ds->ds.provenance.empty()
                              ? nlohmann::json(nullptr)
                              : nlohmann::json::parse(ds->ds.provenance, nullptr, false);
        *out_json = dup_string(j.dump(2) + "\n");
        return MNLAB_OK;
    });
}

void mnlab_dataset_free(mnlab_dataset* ds) { delete ds; }

mnlab_status mnlab_train(const mnlab_graph* g, const mnlab_dataset* train, const mnlab_dataset* val,
                         const char* config_json, const char* run_dir, char** out_summary_json) {
    if (auto st = require(g && train && config_json && run_dir, "null argument"); st != MNLAB_OK)
        return st;
    return guarded([&] {
        TrainConfig cfg = train_config_from_json(config_json);
        TrainOutput out = train_model(g->g, train->ds, val ? &val->ds : nullptr, cfg, run_dir);
        nlohmann::ordered_json j;
        j["run_dir"] = run_dir;
        j["epochs"] = out.result.history.size();
        j["total_steps"] = out.result.total_steps;
        j["final_train_acc"] = out.result.final_train_acc;
        if (out.result.final_val_acc >= 0) j["final_val_acc"] = out.result.final_val_acc;
        if (!out.result.history.empty()) j["final_train_loss"] = out.result.history.back().train_loss;
        if (out_summary_json) *out_summary_json = dup_string(j.dump(2) + "\n");
        return MNLAB_OK;
    });
}

mnlab_status mnlab_diagnose(const char* run_dir, const mnlab_dataset* eval_ds,
                            const char* options_json, const char* out_dir, char** out_diag_json) {
    if (auto st = require(run_dir && eval_ds && out_dir, "null argument"); st != MNLAB_OK) return st;
    return guarded([&] {
        DiagnosticsOptions opt;
        if (options_json) {
            nlohmann::json j = nlohmann::json::parse(options_json, nullptr, false);
            if (j.is_discarded()) fail(ErrorCode::Io, "diagnose options are not valid JSON");
            opt.batch_size = j.value("batch_size", opt.batch_size);
            opt.pseudo_groups = j.value("pseudo_groups", opt.pseudo_groups);
            opt.layers = j.value("layers", opt.layers);
        }
        DiagnosticsReport rep = diagnose_run(run_dir, eval_ds->ds, opt, out_dir);
        if (out_diag_json) *out_diag_json = dup_string(diagnostics_to_json(rep));
        return MNLAB_OK;
    });
}

mnlab_status mnlab_run_sweep(const char* sweep_config_json, char** out_summary_json) {
    if (auto st = require(sweep_config_json != nullptr, "null config"); st != MNLAB_OK) return st;
    return guarded([&]() -> mnlab_status {
        SweepConfig cfg = sweep_config_from_json(sweep_config_json);
        SweepOutcome outcome = run_sweep(cfg);
        nlohmann::ordered_json j;
        j["out_dir"] = outcome.out_dir;
        j["cells"] = nlohmann::ordered_json::array();
        for (const auto& c : outcome.cells) {
            nlohmann::ordered_json cj;
            cj["id"] = c.id;
            cj["status"] = c.status;
            if (!c.error.empty()) cj["error"] = c.error;
            cj["test_accuracy"] = c.test_accuracy;
            cj["oracle_accuracy"] = c.oracle_accuracy;
            j["cells"].push_back(cj);
        }
        j["failures"] = outcome.failures;
        if (out_summary_json) *out_summary_json = dup_string(j.dump(2) + "\n");
        if (outcome.failures > 0) {
            g_last_error = std::to_string(outcome.failures) + " sweep cell(s) failed";
            return MNLAB_ERR_PARTIAL;
        }
        return MNLAB_OK;
    });
}

mnlab_status mnlab_emit_report(const char* results_dir, char** out_summary_json) {
    if (auto st = require(results_dir != nullptr, "null results dir"); st != MNLAB_OK) return st;
    return guarded([&] {
        emit_report(results_dir);
        const std::string summary_path = std::string(results_dir) + "/report/summary.json";
        if (out_summary_json) {
            std::ifstream is(summary_path);
            std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
            *out_summary_json = dup_string(text);
        }
        return MNLAB_OK;
    });
}

} // extern "C"
