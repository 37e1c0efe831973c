// Copyright 2026 the mnlab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Checkpoint container: graph JSON plus named parameter blobs with shape
// headers, little-endian raw floats, version-tagged ("MNCKPT1\0").

#include <cstdint>
#include <string>
#include <variant>

#include "mnlab/arch.hpp"
#include "mnlab/executor.hpp"

namespace mnlab {

struct Checkpoint {
    ArchGraph graph;
    std::variant<ModelStateF, ModelStateD> state;

    bool is_double() const { return std::holds_alternative<ModelStateD>(state); }
};

void save_checkpoint(const std::string& path, const ArchGraph& g, const ModelStateF& s);
void save_checkpoint(const std::string& path, const ArchGraph& g, const ModelStateD& s);
Checkpoint load_checkpoint(const std::string& path);

} // namespace mnlab
