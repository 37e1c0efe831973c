// Copyright 2026 the mnlab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Walks an ArchGraph forward (with per-layer taps) and backward. A model
// instance (state + traces) belongs to one thread while training;
// forward-only use of a frozen state is safe concurrently.

#include <map>
#include <string>

#include "mnlab/arch.hpp"
#include "mnlab/ops.hpp"
#include "mnlab/prng.hpp"
#include "mnlab/tensor.hpp"

namespace mnlab {

enum class ExecMode { Train, Eval };

template <typename T>
struct LayerParamsT {
    TensorT<T> weight, bias, gamma, beta, running_mean, running_var;

    bool empty() const {
        return weight.v.empty() && bias.v.empty() && gamma.v.empty() && beta.v.empty();
    }
};

template <typename T>
struct ModelStateT {
    std::map<std::string, LayerParamsT<T>> layers;
    std::uint64_t seed = 0;

    bool operator==(const ModelStateT& o) const = default;
};

using ModelStateF = ModelStateT<float>;
using ModelStateD = ModelStateT<double>;

/// Expected parameter shapes for a layer, or empty if parameter-free.
inline std::vector<std::pair<std::string, std::vector<int>>> param_shapes(const LayerSpec& l) {
    switch (l.kind) {
    case LayerKind::Conv2d:
    case LayerKind::DepthwiseConv2d: {
        std::vector<std::pair<std::string, std::vector<int>>> s = {
            {"weight", {l.out_channels, l.in_channels / l.groups, l.kernel, l.kernel}}};
        if (l.has_bias) s.push_back({"bias", {l.out_channels}});
        return s;
    }
    case LayerKind::Dense:
    case LayerKind::ClassifierHead: {
        std::vector<std::pair<std::string, std::vector<int>>> s = {
            {"weight", {l.out_channels, l.in_channels / l.groups}}};
        if (l.has_bias) s.push_back({"bias", {l.out_channels}});
        return s;
    }
    case LayerKind::Norm:
        return {{"gamma", {l.out_channels}},
                {"beta", {l.out_channels}},
                {"running_mean", {l.groups}},
                {"running_var", {l.groups}}};
    default:
        return {};
    }
}

/// Fan-in scaled normal init for conv/dense (ReLU gain), zero biases,
/// identity norm affine. Each layer draws from its own derived stream, so
/// paths are initialized independently and layer order is irrelevant.
template <typename T>
ModelStateT<T> init_state(const ArchGraph& g, std::uint64_t seed) {
    ModelStateT<T> s;
    s.seed = seed;
    for (const auto& l : g.layers) {
        LayerParamsT<T> p;
        switch (l.kind) {
        case LayerKind::Conv2d:
        case LayerKind::DepthwiseConv2d:
        case LayerKind::Dense:
        case LayerKind::ClassifierHead: {
            const auto shapes = param_shapes(l);
            p.weight = TensorT<T>(shapes[0].second);
            std::size_t fan_in = 1;
            for (std::size_t i = 1; i < shapes[0].second.size(); ++i)
                fan_in *= static_cast<std::size_t>(shapes[0].second[i]);
            const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
            Rng rng(derive_seed(seed, "init/" + l.id));
            for (auto& w : p.weight.v) w = static_cast<T>(rng.normal() * std_dev);
            if (l.has_bias) p.bias = TensorT<T>({l.out_channels});
            break;
        }
        case LayerKind::Norm:
            p.gamma = TensorT<T>({l.out_channels});
            p.beta = TensorT<T>({l.out_channels});
            p.running_mean = TensorT<T>({l.groups});
            p.running_var = TensorT<T>({l.groups});
            for (auto& v : p.gamma.v) v = T(1);
            for (auto& v : p.running_var.v) v = T(1);
            break;
        default:
            break;
        }
        if (!p.empty() || l.kind == LayerKind::Norm) s.layers[l.id] = std::move(p);
    }
    return s;
}

template <typename T>
struct ForwardTrace {
    std::map<std::string, TensorT<T>> out;          // per-layer outputs (taps)
    std::map<std::string, ops::NormSaved<T>> norms; // per Norm layer
    std::string head_id;                            // ClassifierHead layer
    std::string sink_id;
    int paths = 1;
    int classes = 0;
    ExecMode mode = ExecMode::Eval;

    /// Head output [N, M*classes]; path m's logits are columns
    /// [m*classes, (m+1)*classes).
    const TensorT<T>& path_logits() const { return out.at(head_id); }
    /// Aggregated logits [N, classes] (the head output itself when M = 1).
    const TensorT<T>& aggregated() const { return out.at(sink_id); }
};

constexpr double kNormEps = 1e-5;
constexpr double kNormMomentum = 0.1;

template <typename T>
ForwardTrace<T> forward(const ArchGraph& g, ModelStateT<T>& state, const TensorT<T>& batch,
                        ExecMode mode) {
    ForwardTrace<T> tr;
    tr.mode = mode;
    tr.paths = g.path_multiplicity;
    tr.classes = g.num_classes();
    tr.sink_id = g.sink_layer().id;

    for (const auto& l : g.layers) {
        try {
            switch (l.kind) {
            case LayerKind::Input:
                require_shape(batch, {batch.dim(0), l.out_channels, batch.dim(2), batch.dim(3)},
                              "input batch");
                if (batch.dim(1) != l.out_channels)
                    fail(ErrorCode::Shape, "batch channel count mismatch");
                tr.out[l.id] = batch;
                break;
            case LayerKind::Conv2d:
            case LayerKind::DepthwiseConv2d: {
                auto& p = state.layers.at(l.id);
                tr.out[l.id] = ops::conv2d_forward(tr.out.at(l.predecessors[0]), p.weight, p.bias,
                                                   l.stride, l.padding(), l.groups);
                break;
            }
            case LayerKind::Dense:
            case LayerKind::ClassifierHead: {
                auto& p = state.layers.at(l.id);
                tr.out[l.id] = ops::dense_forward(tr.out.at(l.predecessors[0]), p.weight, p.bias, l.groups);
                tr.head_id = l.kind == LayerKind::ClassifierHead ? l.id : tr.head_id;
                break;
            }
            case LayerKind::Norm: {
                auto& p = state.layers.at(l.id);
                ops::NormSaved<T> saved;
                tr.out[l.id] = ops::norm_forward(tr.out.at(l.predecessors[0]), p.gamma, p.beta,
                                                 l.groups, static_cast<T>(kNormEps),
                                                 mode == ExecMode::Train, p.running_mean,
                                                 p.running_var, static_cast<T>(kNormMomentum), &saved);
                tr.norms[l.id] = std::move(saved);
                break;
            }
            case LayerKind::ReLU:
                tr.out[l.id] = ops::relu_forward(tr.out.at(l.predecessors[0]));
                break;
            case LayerKind::Pool:
                tr.out[l.id] = ops::avgpool2_forward(tr.out.at(l.predecessors[0]));
                break;
            case LayerKind::GlobalPool:
                tr.out[l.id] = ops::global_avgpool_forward(tr.out.at(l.predecessors[0]));
                break;
            case LayerKind::Add:
                tr.out[l.id] =
                    ops::add_forward(tr.out.at(l.predecessors[0]), tr.out.at(l.predecessors[1]));
                break;
            case LayerKind::Aggregate:
                tr.out[l.id] = ops::aggregate_forward(tr.out.at(l.predecessors[0]), g.path_multiplicity);
                break;
            }
        } catch (const Error& e) {
            if (e.code() == ErrorCode::Shape)
                fail(ErrorCode::Shape, "layer '" + l.id + "': " + e.what());
            throw;
        }
    }
    if (tr.head_id.empty()) fail(ErrorCode::Validation, "graph has no ClassifierHead");
    return tr;
}

template <typename T>
struct GradientsT {
    std::map<std::string, LayerParamsT<T>> layers; // weight/bias/gamma/beta slots
};

/// Reverse pass. `seed_grads` maps layer ids to d(loss)/d(output); usually
/// a single entry at the sink (logit-mean loss) or at the head
/// (probability-mean loss). Requires a Train-mode trace.
template <typename T>
GradientsT<T> backward(const ArchGraph& g, const ModelStateT<T>& state, const ForwardTrace<T>& tr,
                       const std::map<std::string, TensorT<T>>& seed_grads) {
    if (tr.mode != ExecMode::Train)
        fail(ErrorCode::InvalidArgument, "backward requires a Train-mode forward trace");
    if (tr.out.empty()) fail(ErrorCode::InvalidArgument, "backward before forward");

    std::map<std::string, TensorT<T>> grad; // d loss / d layer-output
    for (const auto& [id, gt] : seed_grads) {
        require_shape(gt, tr.out.at(id).shape, "seed gradient for '" + id + "'");
        grad[id] = gt;
    }

    GradientsT<T> out;
    auto accum = [&grad](const std::string& id, TensorT<T>&& t) {
        auto it = grad.find(id);
        if (it == grad.end()) {
            grad.emplace(id, std::move(t));
        } else {
            for (std::size_t i = 0; i < t.v.size(); ++i) it->second.v[i] += t.v[i];
        }
    };

    for (auto rit = g.layers.rbegin(); rit != g.layers.rend(); ++rit) {
        const LayerSpec& l = *rit;
        auto git = grad.find(l.id);
        if (git == grad.end()) continue; // loss does not depend on this layer
        const TensorT<T>& gy = git->second;

        switch (l.kind) {
        case LayerKind::Input:
            break;
        case LayerKind::Conv2d:
        case LayerKind::DepthwiseConv2d: {
            const auto& p = state.layers.at(l.id);
            auto gr = ops::conv2d_backward(tr.out.at(l.predecessors[0]), p.weight, l.has_bias, gy,
                                           l.stride, l.padding(), l.groups);
            out.layers[l.id].weight = std::move(gr.gw);
            if (l.has_bias) out.layers[l.id].bias = std::move(gr.gb);
            accum(l.predecessors[0], std::move(gr.gx));
            break;
        }
        case LayerKind::Dense:
        case LayerKind::ClassifierHead: {
            const auto& p = state.layers.at(l.id);
            auto gr = ops::dense_backward(tr.out.at(l.predecessors[0]), p.weight, l.has_bias, gy, l.groups);
            out.layers[l.id].weight = std::move(gr.gw);
            if (l.has_bias) out.layers[l.id].bias = std::move(gr.gb);
            accum(l.predecessors[0], std::move(gr.gx));
            break;
        }
        case LayerKind::Norm: {
            const auto& p = state.layers.at(l.id);
            auto gr = ops::norm_backward(tr.norms.at(l.id), p.gamma, gy, l.groups);
            out.layers[l.id].gamma = std::move(gr.ggamma);
            out.layers[l.id].beta = std::move(gr.gbeta);
            accum(l.predecessors[0], std::move(gr.gx));
            break;
        }
        case LayerKind::ReLU:
            accum(l.predecessors[0], ops::relu_backward(tr.out.at(l.predecessors[0]), gy));
            break;
        case LayerKind::Pool:
            accum(l.predecessors[0], ops::avgpool2_backward(tr.out.at(l.predecessors[0]), gy));
            break;
        case LayerKind::GlobalPool:
            accum(l.predecessors[0], ops::global_avgpool_backward(tr.out.at(l.predecessors[0]), gy));
            break;
        case LayerKind::Add: {
            accum(l.predecessors[0], TensorT<T>(gy));
            accum(l.predecessors[1], TensorT<T>(gy));
            break;
        }
        case LayerKind::Aggregate:
            accum(l.predecessors[0],
                  ops::aggregate_backward(g.path_multiplicity, l.in_channels, gy));
            break;
        }
    }
    return out;
}

/// Channel block [p*C/M, (p+1)*C/M) that path p owns at a layer with C
/// channels. The transform keeps per-path channels contiguous everywhere.
inline std::pair<int, int> path_channel_block(int channels, int paths, int path) {
    const int per = channels / paths;
    return {path * per, (path + 1) * per};
}

/// Zeroes every parameter belonging to one path (weights, biases, norm
/// affine). Input-facing and grouped layers alike: path p owns output
/// channel block p.
template <typename T>
ModelStateT<T> zero_path_params(const ArchGraph& g, const ModelStateT<T>& state, int path) {
    const int M = g.path_multiplicity;
    if (path < 0 || path >= M) fail(ErrorCode::InvalidArgument, "path index out of range");
    ModelStateT<T> s = state;
    for (const auto& l : g.layers) {
        auto it = s.layers.find(l.id);
        if (it == s.layers.end()) continue;
        auto& p = it->second;
        const int C = l.out_channels;
        if (C % M != 0) continue; // input layer etc.
        auto [lo, hi] = path_channel_block(C, M, path);
        switch (l.kind) {
        case LayerKind::Conv2d:
        case LayerKind::DepthwiseConv2d: {
            const std::size_t per_oc = p.weight.v.size() / static_cast<std::size_t>(C);
            std::fill(p.weight.v.begin() + lo * per_oc, p.weight.v.begin() + hi * per_oc, T(0));
            if (!p.bias.v.empty()) std::fill(p.bias.v.begin() + lo, p.bias.v.begin() + hi, T(0));
            break;
        }
        case LayerKind::Dense:
        case LayerKind::ClassifierHead: {
            const std::size_t per_o = p.weight.v.size() / static_cast<std::size_t>(C);
            std::fill(p.weight.v.begin() + lo * per_o, p.weight.v.begin() + hi * per_o, T(0));
            if (!p.bias.v.empty()) std::fill(p.bias.v.begin() + lo, p.bias.v.begin() + hi, T(0));
            break;
        }
        case LayerKind::Norm:
            std::fill(p.gamma.v.begin() + lo, p.gamma.v.begin() + hi, T(0));
            std::fill(p.beta.v.begin() + lo, p.beta.v.begin() + hi, T(0));
            break;
        default:
            break;
        }
    }
    return s;
}

} // namespace mnlab
