// Copyright 2026 the mnlab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// The multi-narrow rewrite: split a baseline graph into M = r*r narrow,
// path-independent branches under an approximately preserved parameter
// budget, with outputs averaged behind a single Aggregate sink.

#include <vector>

#include "mnlab/arch.hpp"

namespace mnlab {

enum class NormPolicy { PerPathStats };
enum class WidthRounding { RequireDivisible };

struct TransformConfig {
    int r = 1;
    NormPolicy norm_policy = NormPolicy::PerPathStats;
    WidthRounding width_rounding = WidthRounding::RequireDivisible;

    int path_count() const; // M = r*r
};

/// M = r^2, the path count that preserves dense-coupling parameters.
int path_count(int r);

/// Rewrites a validated baseline graph (M = 1). r = 1 is the identity.
/// Throws Error{Transform} naming the first layer whose width is not
/// divisible by r, and rejects already-transformed inputs.
ArchGraph mn_transform(const ArchGraph& g, const TransformConfig& cfg);

/// Elementwise arithmetic mean of M equal-length logit vectors.
/// Summation over paths is in ascending index order.
std::vector<double> aggregate_outputs(const std::vector<std::vector<double>>& path_logits);

} // namespace mnlab
