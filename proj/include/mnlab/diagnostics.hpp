// Copyright 2026 the mnlab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Post-training analyses over a frozen model and an evaluation set:
// layer-wise linear CKA between paths, dead-neuron ratio, per-path and
// oracle accuracy, and cumulative ensemble-accuracy curves.

#include <optional>
#include <string>
#include <vector>

#include "mnlab/arch.hpp"
#include "mnlab/data.hpp"
#include "mnlab/executor.hpp"
#include "mnlab/trainer.hpp"

namespace mnlab {

/// Column-major-agnostic dense feature matrix (n rows, d columns).
struct FeatureMatrix {
    int n = 0, d = 0;
    std::vector<double> v; // row-major n*d
    double& at(int r, int c) { return v[static_cast<std::size_t>(r) * d + c]; }
    double at(int r, int c) const { return v[static_cast<std::size_t>(r) * d + c]; }
};

/// Linear CKA between two feature matrices with n >= 2 rows:
/// ||Yc' Xc||_F^2 / (||Xc' Xc||_F ||Yc' Yc||_F) on column-centered data.
/// Returns nullopt (flagged null) when either input has all-constant
/// features, where the index is undefined.
std::optional<double> linear_cka(const FeatureMatrix& X, const FeatureMatrix& Y);

struct PathOutputs {
    int paths = 1;
    int classes = 0;
    std::vector<float> logits; // N * paths * classes
    std::vector<int> labels;
    std::vector<double> per_path_accuracy;
    double aggregated_accuracy = 0.0;
    AggregationMode mode = AggregationMode::Logits;

    int size() const { return static_cast<int>(labels.size()); }
    float logit(int n, int m, int c) const {
        return logits[(static_cast<std::size_t>(n) * paths + m) * classes + c];
    }
};

PathOutputs collect_path_outputs(const ArchGraph& g, ModelStateF& state, const Dataset& ds,
                                 int batch_size, AggregationMode mode);

/// Fraction of samples where at least one path's argmax is the label.
double oracle_accuracy(const PathOutputs& po);

struct CumulativeCurves {
    std::vector<double> best_first, worst_first, original; // length M
};

/// Entry k-1 = accuracy of the prefix-mean of the first k paths under the
/// given ordering. Ties in per-path accuracy break by ascending index.
CumulativeCurves cumulative_curves(const PathOutputs& po);

struct LayerCka {
    std::string layer;
    std::optional<double> mean_pairwise; // null if every pair was degenerate
    int pairs_used = 0;
    int pairs_skipped = 0;
};

struct LayerDnr {
    std::string layer;
    int dead = 0;
    int total = 0;
    double ratio = 0.0;
};

struct DiagnosticsOptions {
    int batch_size = 64;
    int pseudo_groups = 4;           // channel grouping for M = 1 baselines
    std::vector<std::string> layers; // empty = every ReLU layer
};

/// Mean pairwise linear CKA between path feature blocks at each selected
/// layer. Features are spatially average-pooled channels per sample; for
/// M = 1 the channels are split into `pseudo_groups` contiguous blocks.
std::vector<LayerCka> layerwise_group_cka(const ArchGraph& g, ModelStateF& state, const Dataset& ds,
                                          const DiagnosticsOptions& opt);

/// Per ReLU layer: channels whose activation is exactly zero for every
/// sample and every spatial position of the evaluation set.
std::vector<LayerDnr> dead_neuron_ratio(const ArchGraph& g, ModelStateF& state, const Dataset& ds,
                                        const DiagnosticsOptions& opt);

struct DiagnosticsReport {
    int paths = 1;
    double test_accuracy = 0.0;
    double oracle = 0.0;
    std::vector<double> per_path_accuracy;
    std::vector<LayerCka> cka_per_layer;
    std::vector<LayerDnr> dnr_per_layer;
    CumulativeCurves curves;
    AggregationMode mode = AggregationMode::Logits;
    int pseudo_groups = 0; // reported for M = 1 analyses
};

DiagnosticsReport run_diagnostics(const ArchGraph& g, ModelStateF& state, const Dataset& ds,
                                  AggregationMode mode, const DiagnosticsOptions& opt);

/// Loads a training run directory (checkpoint.mnck, stats.json,
/// config.json), standardizes the raw evaluation set with the run's
/// training statistics and computes the full report. Writes diag.json
/// plus cka_layerwise.csv, dnr_layerwise.csv, cumulative_curves.csv and
/// paths.csv into out_dir when nonempty.
DiagnosticsReport diagnose_run(const std::string& run_dir, const Dataset& eval_raw,
                               const DiagnosticsOptions& opt, const std::string& out_dir);

std::string diagnostics_to_json(const DiagnosticsReport& rep);

} // namespace mnlab
