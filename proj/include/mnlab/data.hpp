// Copyright 2026 the mnlab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Dataset ingestion (CIFAR binary layout and a synthetic generator) and
// class-balanced images-per-class subsampling. Datasets are immutable
// after load and shareable read-only.

#include <cstdint>
#include <string>
#include <vector>

#include "mnlab/common.hpp"

namespace mnlab {

struct Dataset {
    int channels = 0, height = 0, width = 0;
    int class_count = 0;
    std::vector<float> images; // N*C*H*W, [0,1] raw or standardized
    std::vector<int> labels;
    int ipc = -1; // samples per class after subsampling; -1 = full
    bool standardized = false;
    std::string provenance; // JSON: source/generator, seed, split

    int size() const { return static_cast<int>(labels.size()); }
    std::size_t sample_stride() const {
        return static_cast<std::size_t>(channels) * height * width;
    }
    const float* sample(int i) const { return images.data() + sample_stride() * i; }
};

enum class CifarVariant { Cifar10, Cifar100 };

/// Reads the CIFAR binary layout: per record 1 (10-class) or 2 (100-class,
/// coarse byte then fine byte) label bytes followed by 3*1024 pixel bytes
/// in R,G,B planes. Pixels map to [0,1]. File size must be an exact
/// multiple of the record length.
Dataset load_cifar_binary(const std::string& path, CifarVariant variant);

/// Writes a dataset back out in CIFAR binary layout (quantized to bytes);
/// dataset must be 3x32x32 with <= 256 classes and unstandardized values.
void write_cifar_binary(const Dataset& ds, const std::string& path, CifarVariant variant);

/// Class-balanced subsample: indices chosen per class by a seeded shuffle
/// (mnlab.prng.v1), returned in ascending order.
std::vector<int> subsample_indices(const Dataset& ds, int ipc, std::uint64_t seed);

Dataset take_indices(const Dataset& ds, const std::vector<int>& indices);

Dataset subsample_ipc(const Dataset& ds, int ipc, std::uint64_t seed);

struct SynthSpec {
    int classes = 2;
    int samples_per_class = 32;
    int channels = 3;
    int height = 8;
    int width = 8;
    double noise_stddev = 0.05;
};

/// Deterministic class-separable toy images: class-indexed radial
/// frequency patterns plus Gaussian pixel noise, clamped to [0,1].
/// noise_stddev = 0 yields exact within-class duplicates.
Dataset synth_dataset(const SynthSpec& spec, std::uint64_t seed);

struct ChannelStats {
    std::vector<float> mean, stddev; // per channel
};

/// Per-channel mean/stddev over all pixels (stddev floored at 1e-6).
ChannelStats compute_channel_stats(const Dataset& ds);

/// (x - mean) / stddev per channel. Typically computed on the training
/// subset and reused for evaluation data.
Dataset standardize(const Dataset& ds, const ChannelStats& stats);

} // namespace mnlab
