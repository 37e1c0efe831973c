// Copyright 2026 the mnlab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Analytic accounting of parameters, multiply-accumulates and activation
// footprint for any ArchGraph, plus the per-layer preservation report
// comparing a transformed graph against its baseline.

#include <cstdint>
#include <string>
#include <vector>

#include "mnlab/arch.hpp"

namespace mnlab {

struct LayerAudit {
    std::string id;
    LayerKind kind = LayerKind::Input;
    PreservationClass pclass = PreservationClass::ParameterFree;
    std::uint64_t weight_params = 0;
    std::uint64_t bias_params = 0;
    std::uint64_t params = 0;
    std::uint64_t macs = 0; // evaluation-mode, whole batch
    int activation_channels = 0;
    int out_h = 0;
    int out_w = 0;
};

struct AuditReport {
    std::vector<LayerAudit> per_layer;
    std::uint64_t total_params = 0;
    std::uint64_t total_weight_params = 0;
    std::uint64_t total_bias_params = 0;
    std::uint64_t total_macs_eval = 0;  // per batch
    std::uint64_t total_macs_train = 0; // per batch
    std::uint64_t activation_elements = 0;
    int r = 1;
    int path_multiplicity = 1;
    int input_h = 0, input_w = 0;
    std::uint64_t batch = 0;
    // Exact-count gain vs an attached baseline; unset (and 0) without one.
    bool has_gain = false;
    double gain_vs_baseline_percent = 0.0;
};

/// MAC cost model. Convolution and dense layers cost one MAC per
/// weight-input product; normalization costs a fixed number of MACs per
/// element (2 in evaluation, +3 in training for the batch-statistics
/// pass — the pair of factors that reproduces both Table-style analytic
/// cost columns); everything else is free.
struct MacConvention {
    int norm_macs_per_element_eval = 2;
    int norm_macs_per_element_train = 5;
};

/// K^2 * (C_in/groups) * C_out (+ C_out if bias). Errors on divisibility.
std::uint64_t conv_params(int kernel, int c_in, int c_out, int groups, bool has_bias);

/// Parameter-only audit (MACs/activations zero).
AuditReport count_params(const ArchGraph& g);

/// Full audit with spatial propagation from the given input resolution.
AuditReport audit_graph(const ArchGraph& g, int input_h, int input_w, std::uint64_t batch,
                        const MacConvention& conv = {});

/// Evaluation-mode MACs for the whole batch.
std::uint64_t count_macs(const ArchGraph& g, int input_h, int input_w, std::uint64_t batch,
                         const MacConvention& conv = {});

/// Total activation elements (batch * C * H * W summed over every
/// non-Input layer output).
std::uint64_t activation_footprint(const ArchGraph& g, int input_h, int input_w, std::uint64_t batch);

enum class PreservationStatus { PreservedExactly, InflatedTimesR, InflatedOther };

const char* preservation_status_name(PreservationStatus s);

struct LayerPreservation {
    std::string id;
    PreservationClass pclass = PreservationClass::ParameterFree;
    std::uint64_t weight_before = 0;
    std::uint64_t weight_after = 0;
    PreservationStatus status = PreservationStatus::PreservedExactly;
};

/// Per-layer weight-tensor classification of a transformed report against
/// its baseline. Reports must share a lineage (same layer ids, transformed
/// may add the Aggregate sink).
std::vector<LayerPreservation> preservation_report(const AuditReport& baseline,
                                                   const AuditReport& transformed);

/// Gain in percent the way the published parameter tables compute it:
/// from parameter counts rounded to 3 significant figures (millions).
double table_gain_percent(std::uint64_t baseline_params, std::uint64_t transformed_params);

/// Parameters rounded to 3 significant figures, in millions.
double params_in_millions_3sf(std::uint64_t params);

std::string audit_to_json(const AuditReport& rep, const std::vector<LayerPreservation>* pres);
std::string audit_to_csv(const AuditReport& rep);

} // namespace mnlab
