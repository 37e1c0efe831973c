// Copyright 2026 the mnlab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Typed layer-graph IR for the CNNs this workbench builds, transforms,
// audits and trains. Graphs are immutable after construction/validation
// and safe to share read-only across threads.

#include <string>
#include <vector>

#include "mnlab/common.hpp"

namespace mnlab {

enum class LayerKind {
    Input,
    Conv2d,
    DepthwiseConv2d,
    Dense,
    Norm,
    ReLU,
    Pool,
    GlobalPool,
    Add,
    ClassifierHead,
    Aggregate,
};

const char* layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& name);

/// Where a layer sits relative to the fixed I/O interface. Drives both
/// preservation classification and the transform's per-layer rewrite rule.
enum class LayerPosition { InputFacing, Intermediate, OutputFacing };

/// How a layer's parameter count behaves under the multi-narrow rewrite.
enum class PreservationClass {
    DenseCoupling, // both sides narrow: total params preserved exactly
    OneSidedFixed, // one side pinned by the data format or the task
    Depthwise,     // no channel coupling: narrows by 1/r only
    PerChannel,    // per-channel parameters (normalization affine)
    ParameterFree,
};

const char* preservation_class_name(PreservationClass c);

struct LayerSpec {
    std::string id;
    LayerKind kind = LayerKind::Input;
    int kernel = 0; // spatial size, square; conv kinds only
    int in_channels = 0;
    int out_channels = 0;
    int groups = 1;
    int stride = 1;
    bool has_bias = false;
    std::vector<std::string> predecessors;

    bool is_conv() const { return kind == LayerKind::Conv2d || kind == LayerKind::DepthwiseConv2d; }
    bool is_dense() const { return kind == LayerKind::Dense || kind == LayerKind::ClassifierHead; }
    /// Implicit "same" padding for odd kernels: 3x3 -> 1, 1x1 -> 0.
    int padding() const { return is_conv() ? (kernel - 1) / 2 : 0; }
};

struct ArchGraph {
    std::vector<LayerSpec> layers; // topologically ordered
    int path_multiplicity = 1;     // M (1 for baseline)
    int width_divisor = 1;         // r applied (1 for baseline)
    std::vector<int> stage_widths; // per-stage channel totals

    const LayerSpec& layer(const std::string& id) const;
    int layer_index(const std::string& id) const; // -1 if absent
    const LayerSpec& input_layer() const;
    const LayerSpec& sink_layer() const;
    int num_classes() const;

    LayerPosition position_of(const LayerSpec& l) const;

    /// Structural validation; throws Error{Validation} with the offending
    /// layer named. Checks the documented invariants: DAG shape, single
    /// Input, Aggregate-or-ClassifierHead sink, two-way reachability,
    /// channel/group divisibility, M == r*r, and (for transformed graphs)
    /// that no intermediate channel-coupled layer mixes paths.
    void validate() const;
};

ArchGraph build_resnet18(int num_classes, int input_channels);
ArchGraph build_micro_cnn(const std::vector<int>& widths, int num_classes);

/// Total over every layer kind the builders produce; unknown kinds throw.
PreservationClass classify_layer(const LayerSpec& layer, LayerPosition position);

std::string graph_to_json(const ArchGraph& g);
ArchGraph graph_from_json(const std::string& json_text);

} // namespace mnlab
