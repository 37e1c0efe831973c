// Copyright 2026 the mnlab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Config-driven (r x IPC x seed) sweep runner and report emitter. Cells
// are independent jobs (subsample -> transform -> audit -> train ->
// diagnose) with idempotent re-invocation; reports are machine-readable
// CSV/JSON and byte-stable for unchanged inputs.

#include <cstdint>
#include <string>
#include <vector>

#include "mnlab/arch.hpp"
#include "mnlab/data.hpp"
#include "mnlab/trainer.hpp"

namespace mnlab {

struct BuilderSpec {
    std::string name = "micro_cnn"; // or "resnet18"
    std::vector<int> widths = {16, 32};
    int num_classes = 0; // 0 = match dataset
    int input_channels = 3;
};

struct DatasetSpec {
    std::string kind = "synth"; // or "cifar"
    SynthSpec synth;
    int eval_samples_per_class = 32; // synth eval split size
    std::uint64_t data_seed = 9000;
    std::string train_path, test_path; // cifar
    CifarVariant variant = CifarVariant::Cifar10;
};

struct SweepConfig {
    BuilderSpec builder;
    std::vector<int> r_grid = {1, 2, 4, 8, 16, 32};
    std::vector<int> ipc_grid = {50, 10};
    std::vector<std::uint64_t> seeds = {0, 1, 2};
    DatasetSpec dataset;
    TrainConfig train;
    std::uint64_t audit_batch = 128;
    int parallelism = 1; // MNLAB_DETERMINISTIC=1 forces 1
    std::string out_dir;
};

SweepConfig sweep_config_from_json(const std::string& json_text);
std::string sweep_config_to_json(const SweepConfig& cfg);

struct CellResult {
    std::string id;
    int r = 1;
    int ipc = 0;
    std::uint64_t seed = 0;
    std::string status; // "complete", "failed", "skipped" (already complete)
    std::string error;
    double test_accuracy = -1;
    double oracle_accuracy = -1;
    double final_train_acc = -1;
    std::vector<double> per_path_accuracy;
    std::uint64_t params = 0;
    std::uint64_t macs_eval = 0;
    std::string dir;
};

struct SweepOutcome {
    std::vector<CellResult> cells;
    int failures = 0;
    std::string out_dir;
};

/// Runs every (r, ipc, seed) cell; completed cells (cell_summary.json with
/// status "complete") are skipped. Cell failures are recorded and the
/// sweep continues; `failures` counts them.
SweepOutcome run_sweep(const SweepConfig& cfg);

std::string cell_id(int r, int ipc, std::uint64_t seed);

/// Emits accuracy_matrix.csv, accuracy_matrix_colnorm.csv,
/// gain_matrix.csv, cost_table.csv and summary.json from the cell
/// directories under results_dir into results_dir/report. Missing cells
/// become empty fields. Byte-identical for unchanged inputs.
void emit_report(const std::string& results_dir);

/// Per-column min-max normalization (the heatmap companion); a constant
/// column maps to 1.0. Missing entries (NaN) stay NaN.
std::vector<std::vector<double>> column_minmax_normalize(const std::vector<std::vector<double>>& m);

/// Schema checks for run artifacts; returns human-readable problems
/// (empty = valid).
std::vector<std::string> validate_cell_dir(const std::string& dir);
std::vector<std::string> validate_report_dir(const std::string& dir);

} // namespace mnlab
