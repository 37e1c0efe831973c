// Copyright 2026 the mnlab authors
// SPDX-License-Identifier: Apache-2.0

#include "mnlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "mnlab/prng.hpp"

namespace mnlab {

namespace {
constexpr int kCifarDim = 32;
constexpr std::size_t kCifarPixels = 3ull * kCifarDim * kCifarDim;
} // namespace

Dataset load_cifar_binary(const std::string& path, CifarVariant variant) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) fail(ErrorCode::Io, "cannot open dataset file: " + path);
    const auto file_size = static_cast<std::uint64_t>(is.tellg());
    is.seekg(0);

    const std::size_t label_bytes = variant == CifarVariant::Cifar100 ? 2 : 1;
    const std::size_t record = label_bytes + kCifarPixels;
    if (file_size == 0 || file_size % record != 0)
        fail(ErrorCode::Io, path + ": size " + std::to_string(file_size) +
                                " is not a multiple of the record length " + std::to_string(record));
    const auto n = static_cast<std::size_t>(file_size / record);

    Dataset ds;
    ds.channels = 3;
    ds.height = kCifarDim;
    ds.width = kCifarDim;
    ds.class_count = variant == CifarVariant::Cifar100 ? 100 : 10;
    ds.images.resize(n * kCifarPixels);
    ds.labels.resize(n);

    std::vector<unsigned char> buf(record);
    for (std::size_t i = 0; i < n; ++i) {
        is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(record));
        if (!is) fail(ErrorCode::Io, path + ": short read at record " + std::to_string(i));
        // CIFAR-100 records carry coarse label first, fine second.
        const int label = buf[label_bytes - 1];
        if (label >= ds.class_count)
            fail(ErrorCode::Io, path + ": label " + std::to_string(label) + " out of range at record " +
                                    std::to_string(i));
        ds.labels[i] = label;
        float* dst = ds.images.data() + i * kCifarPixels;
        for (std::size_t j = 0; j < kCifarPixels; ++j)
            dst[j] = static_cast<float>(buf[label_bytes + j]) / 255.0f;
    }

    ds.provenance = nlohmann::json{{"source", path},
                                   {"variant", variant == CifarVariant::Cifar100 ? "cifar100" : "cifar10"}}
                        .dump();
    return ds;
}

void write_cifar_binary(const Dataset& ds, const std::string& path, CifarVariant variant) {
    if (ds.channels != 3 || ds.height != kCifarDim || ds.width != kCifarDim)
        fail(ErrorCode::InvalidArgument, "write_cifar_binary: dataset is not 3x32x32");
    if (ds.standardized)
        fail(ErrorCode::InvalidArgument, "write_cifar_binary: refusing to quantize standardized data");
    if (ds.class_count > 256)
        fail(ErrorCode::InvalidArgument, "write_cifar_binary: too many classes for one label byte");

    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorCode::Io, "cannot open for writing: " + path);
    const std::size_t label_bytes = variant == CifarVariant::Cifar100 ? 2 : 1;
    std::vector<unsigned char> buf(label_bytes + kCifarPixels);
    for (int i = 0; i < ds.size(); ++i) {
        if (label_bytes == 2) buf[0] = 0; // coarse label unused
        buf[label_bytes - 1] = static_cast<unsigned char>(ds.labels[static_cast<std::size_t>(i)]);
        const float* src = ds.sample(i);
        for (std::size_t j = 0; j < kCifarPixels; ++j) {
            const float x = std::clamp(src[j], 0.0f, 1.0f);
            buf[label_bytes + j] = static_cast<unsigned char>(std::lround(x * 255.0f));
        }
        os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    }
    if (!os) fail(ErrorCode::Io, "write failed: " + path);
}

std::vector<int> subsample_indices(const Dataset& ds, int ipc, std::uint64_t seed) {
    if (ipc < 1) fail(ErrorCode::InvalidArgument, "ipc must be positive");
    std::map<int, std::vector<int>> by_class;
    for (int i = 0; i < ds.size(); ++i) by_class[ds.labels[static_cast<std::size_t>(i)]].push_back(i);

    std::vector<int> chosen;
    for (int c = 0; c < ds.class_count; ++c) {
        auto it = by_class.find(c);
        const int have = it == by_class.end() ? 0 : static_cast<int>(it->second.size());
        if (have < ipc)
            fail(ErrorCode::InvalidArgument, "class " + std::to_string(c) + " has " + std::to_string(have) +
                                                 " samples, fewer than ipc=" + std::to_string(ipc));
        Rng rng(derive_seed(seed, "subsample/class", static_cast<std::uint64_t>(c)));
        rng.shuffle(it->second);
        chosen.insert(chosen.end(), it->second.begin(), it->second.begin() + ipc);
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

Dataset take_indices(const Dataset& ds, const std::vector<int>& indices) {
    Dataset out;
    out.channels = ds.channels;
    out.height = ds.height;
    out.width = ds.width;
    out.class_count = ds.class_count;
    out.standardized = ds.standardized;
    out.provenance = ds.provenance;
    const std::size_t stride = ds.sample_stride();
    out.images.resize(indices.size() * stride);
    out.labels.resize(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const int src = indices[i];
        if (src < 0 || src >= ds.size())
            fail(ErrorCode::InvalidArgument, "index " + std::to_string(src) + " out of range");
        std::copy_n(ds.sample(src), stride, out.images.data() + i * stride);
        out.labels[i] = ds.labels[static_cast<std::size_t>(src)];
    }
    return out;
}

Dataset subsample_ipc(const Dataset& ds, int ipc, std::uint64_t seed) {
    Dataset out = take_indices(ds, subsample_indices(ds, ipc, seed));
    out.ipc = ipc;
    nlohmann::json prov = ds.provenance.empty() ? nlohmann::json::object()
                                                : nlohmann::json::parse(ds.provenance);
    prov["ipc"] = ipc;
    prov["subsample_seed"] = seed;
    out.provenance = prov.dump();
    return out;
}

Dataset synth_dataset(const SynthSpec& spec, std::uint64_t seed) {
    if (spec.classes < 2 || spec.samples_per_class < 1 || spec.channels < 1 || spec.height < 2 ||
        spec.width < 2)
        fail(ErrorCode::InvalidArgument, "synth_dataset: bad spec dimensions");
    if (spec.noise_stddev < 0) fail(ErrorCode::InvalidArgument, "synth_dataset: negative noise");

    Dataset ds;
    ds.channels = spec.channels;
    ds.height = spec.height;
    ds.width = spec.width;
    ds.class_count = spec.classes;
    const int n = spec.classes * spec.samples_per_class;
    ds.images.resize(static_cast<std::size_t>(n) * ds.sample_stride());
    ds.labels.resize(static_cast<std::size_t>(n));

    const double cy = (spec.height - 1) / 2.0;
    const double cx = (spec.width - 1) / 2.0;
    const double dmax = std::sqrt(cy * cy + cx * cx) + 1e-9;

    int idx = 0;
    for (int k = 0; k < spec.classes; ++k) {
        // Class identity is a radial frequency; flip/shift tolerant.
        const double freq = 1.0 + 0.75 * k;
        for (int s = 0; s < spec.samples_per_class; ++s, ++idx) {
            Rng rng(derive_seed(seed, "synth/sample", static_cast<std::uint64_t>(idx)));
            ds.labels[static_cast<std::size_t>(idx)] = k;
            float* img = ds.images.data() + static_cast<std::size_t>(idx) * ds.sample_stride();
            for (int c = 0; c < spec.channels; ++c) {
                const double phase = c * (2.0 * 3.14159265358979324 / 3.0);
                for (int y = 0; y < spec.height; ++y)
                    for (int x = 0; x < spec.width; ++x) {
                        const double d = std::sqrt((y - cy) * (y - cy) + (x - cx) * (x - cx)) / dmax;
                        double v = 0.5 + 0.45 * std::sin(2.0 * 3.14159265358979324 * freq * d + phase);
                        if (spec.noise_stddev > 0) v += spec.noise_stddev * rng.normal();
                        img[(static_cast<std::size_t>(c) * spec.height + y) * spec.width + x] =
                            static_cast<float>(std::clamp(v, 0.0, 1.0));
                    }
            }
        }
    }

    ds.provenance = nlohmann::json{{"generator", "synth.radial.v1"},
                                   {"seed", seed},
                                   {"classes", spec.classes},
                                   {"samples_per_class", spec.samples_per_class},
                                   {"noise_stddev", spec.noise_stddev}}
                        .dump();
    return ds;
}

ChannelStats compute_channel_stats(const Dataset& ds) {
    if (ds.size() == 0) fail(ErrorCode::InvalidArgument, "compute_channel_stats: empty dataset");
    ChannelStats st;
    st.mean.assign(static_cast<std::size_t>(ds.channels), 0.0f);
    st.stddev.assign(static_cast<std::size_t>(ds.channels), 0.0f);
    const std::size_t plane = static_cast<std::size_t>(ds.height) * ds.width;
    const std::size_t per_channel_count = plane * static_cast<std::size_t>(ds.size());

    for (int c = 0; c < ds.channels; ++c) {
        double sum = 0;
        for (int i = 0; i < ds.size(); ++i) {
            const float* p = ds.sample(i) + static_cast<std::size_t>(c) * plane;
            for (std::size_t j = 0; j < plane; ++j) sum += p[j];
        }
        const double mean = sum / static_cast<double>(per_channel_count);
        double sq = 0;
        for (int i = 0; i < ds.size(); ++i) {
            const float* p = ds.sample(i) + static_cast<std::size_t>(c) * plane;
            for (std::size_t j = 0; j < plane; ++j) sq += (p[j] - mean) * (p[j] - mean);
        }
        st.mean[static_cast<std::size_t>(c)] = static_cast<float>(mean);
        st.stddev[static_cast<std::size_t>(c)] = static_cast<float>(
            std::max(std::sqrt(sq / static_cast<double>(per_channel_count)), 1e-6));
    }
    return st;
}

Dataset standardize(const Dataset& ds, const ChannelStats& stats) {
    if (static_cast<int>(stats.mean.size()) != ds.channels)
        fail(ErrorCode::InvalidArgument, "standardize: channel count mismatch");
    Dataset out = ds;
    const std::size_t plane = static_cast<std::size_t>(ds.height) * ds.width;
    for (int i = 0; i < ds.size(); ++i) {
        float* p = out.images.data() + out.sample_stride() * i;
        for (int c = 0; c < ds.channels; ++c) {
            const float m = stats.mean[static_cast<std::size_t>(c)];
            const float inv = 1.0f / stats.stddev[static_cast<std::size_t>(c)];
            float* cp = p + static_cast<std::size_t>(c) * plane;
            for (std::size_t j = 0; j < plane; ++j) cp[j] = (cp[j] - m) * inv;
        }
    }
    out.standardized = true;
    return out;
}

} // namespace mnlab
