// Copyright 2026 the mnlab authors
// SPDX-License-Identifier: Apache-2.0

#include "mnlab/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace mnlab {

namespace {

constexpr char kMagic[8] = {'M', 'N', 'C', 'K', 'P', 'T', '1', '\0'};

void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4); // little-endian hosts only (x86/arm64)
    os.write(b, 4);
}

std::uint32_t get_u32(std::istream& is) {
    char b[4];
    is.read(b, 4);
    if (!is) fail(ErrorCode::Io, "checkpoint truncated");
    std::uint32_t v;
    std::memcpy(&v, b, 4);
    return v;
}

template <typename T>
void write_tensor(std::ostream& os, const std::string& name, const TensorT<T>& t) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    os.put(sizeof(T) == 8 ? 1 : 0);
    os.put(static_cast<char>(t.shape.size()));
    for (int d : t.shape) put_u32(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char*>(t.v.data()),
             static_cast<std::streamsize>(t.v.size() * sizeof(T)));
}

template <typename T>
void save_impl(const std::string& path, const ArchGraph& g, const ModelStateT<T>& s) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorCode::Io, "cannot open checkpoint for writing: " + path);
    os.write(kMagic, 8);
    const std::string gj = graph_to_json(g);
    put_u32(os, static_cast<std::uint32_t>(gj.size()));
    os.write(gj.data(), static_cast<std::streamsize>(gj.size()));

    std::uint32_t count = 0;
    for (const auto& [id, p] : s.layers) {
        (void)id;
        count += !p.weight.v.empty();
        count += !p.bias.v.empty();
        count += !p.gamma.v.empty();
        count += !p.beta.v.empty();
        count += !p.running_mean.v.empty();
        count += !p.running_var.v.empty();
    }
    put_u32(os, count);
    for (const auto& [id, p] : s.layers) {
        if (!p.weight.v.empty()) write_tensor(os, id + "/weight", p.weight);
        if (!p.bias.v.empty()) write_tensor(os, id + "/bias", p.bias);
        if (!p.gamma.v.empty()) write_tensor(os, id + "/gamma", p.gamma);
        if (!p.beta.v.empty()) write_tensor(os, id + "/beta", p.beta);
        if (!p.running_mean.v.empty()) write_tensor(os, id + "/running_mean", p.running_mean);
        if (!p.running_var.v.empty()) write_tensor(os, id + "/running_var", p.running_var);
    }
    if (!os) fail(ErrorCode::Io, "checkpoint write failed: " + path);
}

template <typename T>
void assign_slot(ModelStateT<T>& s, const std::string& name, TensorT<T>&& t) {
    const auto slash = name.rfind('/');
    if (slash == std::string::npos) fail(ErrorCode::Io, "checkpoint tensor name lacks slot: " + name);
    const std::string id = name.substr(0, slash);
    const std::string slot = name.substr(slash + 1);
    auto& p = s.layers[id];
    if (slot == "weight") p.weight = std::move(t);
    else if (slot == "bias") p.bias = std::move(t);
    else if (slot == "gamma") p.gamma = std::move(t);
    else if (slot == "beta") p.beta = std::move(t);
    else if (slot == "running_mean") p.running_mean = std::move(t);
    else if (slot == "running_var") p.running_var = std::move(t);
    else fail(ErrorCode::Io, "checkpoint has unknown slot: " + name);
}

} // namespace

void save_checkpoint(const std::string& path, const ArchGraph& g, const ModelStateF& s) {
    save_impl(path, g, s);
}
void save_checkpoint(const std::string& path, const ArchGraph& g, const ModelStateD& s) {
    save_impl(path, g, s);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorCode::Io, "cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        fail(ErrorCode::Io, "not a mnlab checkpoint: " + path);

    const std::uint32_t glen = get_u32(is);
    std::string gj(glen, '\0');
    is.read(gj.data(), glen);
    if (!is) fail(ErrorCode::Io, "checkpoint truncated in graph block");

    Checkpoint ck;
    ck.graph = graph_from_json(gj);

    const std::uint32_t count = get_u32(is);
    bool dtype_known = false;
    bool is_double = false;
    ModelStateF sf;
    ModelStateD sd;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t nlen = get_u32(is);
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        const int dtype = is.get();
        const int ndim = is.get();
        if (!is || ndim < 1 || ndim > 4) fail(ErrorCode::Io, "checkpoint tensor header corrupt");
        std::vector<int> shape(static_cast<std::size_t>(ndim));
        for (auto& d : shape) d = static_cast<int>(get_u32(is));
        if (!dtype_known) {
            is_double = dtype == 1;
            dtype_known = true;
        } else if (is_double != (dtype == 1)) {
            fail(ErrorCode::Io, "checkpoint mixes precisions");
        }
        if (dtype == 1) {
            TensorT<double> t(shape);
            is.read(reinterpret_cast<char*>(t.v.data()),
                    static_cast<std::streamsize>(t.v.size() * sizeof(double)));
            if (!is) fail(ErrorCode::Io, "checkpoint truncated in tensor data");
            assign_slot(sd, name, std::move(t));
        } else {
            TensorT<float> t(shape);
            is.read(reinterpret_cast<char*>(t.v.data()),
                    static_cast<std::streamsize>(t.v.size() * sizeof(float)));
            if (!is) fail(ErrorCode::Io, "checkpoint truncated in tensor data");
            assign_slot(sf, name, std::move(t));
        }
    }
    if (is_double)
        ck.state = std::move(sd);
    else
        ck.state = std::move(sf);
    return ck;
}

} // namespace mnlab
