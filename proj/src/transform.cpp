// Copyright 2026 the mnlab authors
// SPDX-License-Identifier: Apache-2.0

#include "mnlab/transform.hpp"

namespace mnlab {

int path_count(int r) {
    if (r < 1) fail(ErrorCode::InvalidArgument, "transformation strength r must be >= 1");
    return r * r;
}

int TransformConfig::path_count() const { return mnlab::path_count(r); }

namespace {

void require_divisible(const LayerSpec& l, int value, int r, const char* side) {
    if (value % r != 0)
        fail(ErrorCode::Transform, "layer '" + l.id + "': " + side + " width " + std::to_string(value) +
                                       " not divisible by r=" + std::to_string(r));
}

} // namespace

ArchGraph mn_transform(const ArchGraph& g, const TransformConfig& cfg) {
    g.validate();
    const int r = cfg.r;
    const int M = cfg.path_count();
    if (g.path_multiplicity != 1 || g.width_divisor != 1)
        fail(ErrorCode::Transform, "input graph is already transformed (M=" +
                                       std::to_string(g.path_multiplicity) + ")");
    if (r == 1) return g;

    ArchGraph out = g;
    out.path_multiplicity = M;
    out.width_divisor = r;
    for (int& w : out.stage_widths) {
        if (w % r != 0)
            fail(ErrorCode::Transform, "stage width " + std::to_string(w) + " not divisible by r=" + std::to_string(r));
        w *= r; // r^2 paths of width w/r retain r*w channels in total
    }

    std::string head_id;
    int classes = 0;
    for (auto& l : out.layers) {
        const LayerPosition pos = g.position_of(g.layer(l.id));
        switch (l.kind) {
        case LayerKind::Input:
            break;
        case LayerKind::Conv2d:
        case LayerKind::Dense:
            if (pos == LayerPosition::InputFacing) {
                // Input side pinned by the data format: replicate the
                // narrowed output side M times; M * (C_out/r) = r*C_out.
                require_divisible(l, l.out_channels, r, "output");
                l.out_channels *= r;
            } else {
                require_divisible(l, l.in_channels, r, "input");
                require_divisible(l, l.out_channels, r, "output");
                l.in_channels *= r;
                l.out_channels *= r;
                l.groups *= M;
            }
            break;
        case LayerKind::DepthwiseConv2d:
            require_divisible(l, l.in_channels, r, "input");
            l.in_channels *= r;
            l.out_channels *= r;
            l.groups *= r; // stays == channel count
            break;
        case LayerKind::Norm:
            require_divisible(l, l.in_channels, r, "input");
            l.in_channels *= r;
            l.out_channels *= r;
            l.groups *= r; // statistics remain within one path per group
            break;
        case LayerKind::ReLU:
        case LayerKind::Pool:
        case LayerKind::GlobalPool:
        case LayerKind::Add:
            require_divisible(l, l.in_channels, r, "input");
            l.in_channels *= r;
            l.out_channels *= r;
            break;
        case LayerKind::ClassifierHead:
            // One independent head per path; output side pinned by the task.
            require_divisible(l, l.in_channels, r, "input");
            classes = l.out_channels;
            l.in_channels *= r;
            l.out_channels *= M;
            l.groups *= M;
            head_id = l.id;
            break;
        case LayerKind::Aggregate:
            fail(ErrorCode::Transform, "baseline graph must not contain an Aggregate layer");
        }
    }

    if (head_id.empty())
        fail(ErrorCode::Transform, "graph has no ClassifierHead to branch");

    out.layers.push_back({.id = "aggregate",
                          .kind = LayerKind::Aggregate,
                          .in_channels = M * classes,
                          .out_channels = classes,
                          .groups = M,
                          .predecessors = {head_id}});

    out.validate();
    return out;
}

std::vector<double> aggregate_outputs(const std::vector<std::vector<double>>& path_logits) {
    if (path_logits.empty())
        fail(ErrorCode::InvalidArgument, "aggregate_outputs: no path outputs given");
    const std::size_t n = path_logits.front().size();
    for (const auto& v : path_logits)
        if (v.size() != n)
            fail(ErrorCode::InvalidArgument, "aggregate_outputs: path output lengths differ");

    std::vector<double> mean(n, 0.0);
    for (const auto& v : path_logits)
        for (std::size_t i = 0; i < n; ++i) mean[i] += v[i];
    const double inv = 1.0 / static_cast<double>(path_logits.size());
    for (double& x : mean) x *= inv;
    return mean;
}

} // namespace mnlab
