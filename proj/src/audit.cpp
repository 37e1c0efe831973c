// Copyright 2026 the mnlab authors
// SPDX-License-Identifier: Apache-2.0

#include "mnlab/audit.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include <json.hpp>

namespace mnlab {

std::uint64_t conv_params(int kernel, int c_in, int c_out, int groups, bool has_bias) {
    if (kernel < 1 || c_in < 1 || c_out < 1 || groups < 1)
        fail(ErrorCode::InvalidArgument, "conv_params: dimensions must be positive");
    if (c_in % groups != 0 || c_out % groups != 0)
        fail(ErrorCode::InvalidArgument, "conv_params: channels not divisible by groups");
    const auto k = static_cast<std::uint64_t>(kernel);
    std::uint64_t p = k * k * static_cast<std::uint64_t>(c_in / groups) * static_cast<std::uint64_t>(c_out);
    if (has_bias) p += static_cast<std::uint64_t>(c_out);
    return p;
}

namespace {

struct Dims {
    int h = 0, w = 0;
};

void layer_param_counts(const LayerSpec& l, std::uint64_t& weights, std::uint64_t& biases) {
    weights = 0;
    biases = 0;
    switch (l.kind) {
    case LayerKind::Conv2d:
    case LayerKind::DepthwiseConv2d:
        weights = conv_params(l.kernel, l.in_channels, l.out_channels, l.groups, false);
        if (l.has_bias) biases = static_cast<std::uint64_t>(l.out_channels);
        break;
    case LayerKind::Dense:
    case LayerKind::ClassifierHead:
        weights = static_cast<std::uint64_t>(l.in_channels / l.groups) *
                  static_cast<std::uint64_t>(l.out_channels);
        if (l.has_bias) biases = static_cast<std::uint64_t>(l.out_channels);
        break;
    case LayerKind::Norm:
        weights = 2ull * static_cast<std::uint64_t>(l.out_channels); // scale + shift
        break;
    default:
        break;
    }
}

// Propagates spatial dims through the graph. Throws Error{Shape} on any
// inconsistency (the count_macs "inconsistent spatial propagation" error).
std::map<std::string, Dims> propagate_dims(const ArchGraph& g, int input_h, int input_w) {
    if (input_h < 1 || input_w < 1) fail(ErrorCode::InvalidArgument, "input resolution must be positive");
    std::map<std::string, Dims> dims;
    for (const auto& l : g.layers) {
        Dims in{};
        if (!l.predecessors.empty()) in = dims.at(l.predecessors.front());
        switch (l.kind) {
        case LayerKind::Input:
            dims[l.id] = {input_h, input_w};
            break;
        case LayerKind::Conv2d:
        case LayerKind::DepthwiseConv2d: {
            const int p = l.padding();
            const int oh = (in.h + 2 * p - l.kernel) / l.stride + 1;
            const int ow = (in.w + 2 * p - l.kernel) / l.stride + 1;
            if (oh < 1 || ow < 1)
                fail(ErrorCode::Shape, "layer '" + l.id + "': spatial dims collapse to zero");
            dims[l.id] = {oh, ow};
            break;
        }
        case LayerKind::Pool: {
            if (in.h < 2 || in.w < 2)
                fail(ErrorCode::Shape, "layer '" + l.id + "': input too small to pool");
            dims[l.id] = {in.h / 2, in.w / 2};
            break;
        }
        case LayerKind::GlobalPool:
            dims[l.id] = {1, 1};
            break;
        case LayerKind::Add: {
            for (const auto& pid : l.predecessors) {
                const Dims d = dims.at(pid);
                const LayerSpec& pl = g.layer(pid);
                if (d.h != in.h || d.w != in.w || pl.out_channels != l.in_channels)
                    fail(ErrorCode::Shape, "layer '" + l.id + "': residual join shape mismatch at '" + pid + "'");
            }
            dims[l.id] = in;
            break;
        }
        case LayerKind::Dense:
        case LayerKind::ClassifierHead:
        case LayerKind::Aggregate:
            if (in.h != 1 || in.w != 1)
                fail(ErrorCode::Shape, "layer '" + l.id + "': expects 1x1 spatial input, got " +
                                           std::to_string(in.h) + "x" + std::to_string(in.w));
            dims[l.id] = {1, 1};
            break;
        default: // Norm, ReLU
            dims[l.id] = in;
            break;
        }
    }
    return dims;
}

std::uint64_t layer_macs_per_sample(const LayerSpec& l, const Dims& out, int norm_per_element) {
    switch (l.kind) {
    case LayerKind::Conv2d:
    case LayerKind::DepthwiseConv2d: {
        const auto k = static_cast<std::uint64_t>(l.kernel);
        return k * k * static_cast<std::uint64_t>(l.in_channels / l.groups) *
               static_cast<std::uint64_t>(l.out_channels) * static_cast<std::uint64_t>(out.h) *
               static_cast<std::uint64_t>(out.w);
    }
    case LayerKind::Dense:
    case LayerKind::ClassifierHead:
        return static_cast<std::uint64_t>(l.in_channels / l.groups) *
               static_cast<std::uint64_t>(l.out_channels);
    case LayerKind::Norm:
        return static_cast<std::uint64_t>(norm_per_element) * static_cast<std::uint64_t>(l.out_channels) *
               static_cast<std::uint64_t>(out.h) * static_cast<std::uint64_t>(out.w);
    default:
        return 0;
    }
}

AuditReport build_report(const ArchGraph& g, int input_h, int input_w, std::uint64_t batch,
                         const MacConvention& conv, bool with_macs) {
    g.validate();
    AuditReport rep;
    rep.r = g.width_divisor;
    rep.path_multiplicity = g.path_multiplicity;
    rep.input_h = input_h;
    rep.input_w = input_w;
    rep.batch = batch;

    std::map<std::string, Dims> dims;
    if (with_macs) dims = propagate_dims(g, input_h, input_w);

    for (const auto& l : g.layers) {
        LayerAudit a;
        a.id = l.id;
        a.kind = l.kind;
        a.pclass = classify_layer(l, g.position_of(l));
        layer_param_counts(l, a.weight_params, a.bias_params);
        a.params = a.weight_params + a.bias_params;
        a.activation_channels = l.out_channels;
        if (with_macs) {
            const Dims d = dims.at(l.id);
            a.out_h = d.h;
            a.out_w = d.w;
            a.macs = batch * layer_macs_per_sample(l, d, conv.norm_macs_per_element_eval);
            rep.total_macs_eval += a.macs;
            rep.total_macs_train += batch * layer_macs_per_sample(l, d, conv.norm_macs_per_element_train);
            if (l.kind != LayerKind::Input)
                rep.activation_elements += batch * static_cast<std::uint64_t>(l.out_channels) *
                                           static_cast<std::uint64_t>(d.h) * static_cast<std::uint64_t>(d.w);
        }
        rep.total_params += a.params;
        rep.total_weight_params += a.weight_params;
        rep.total_bias_params += a.bias_params;
        rep.per_layer.push_back(std::move(a));
    }
    return rep;
}

} // namespace

AuditReport count_params(const ArchGraph& g) { return build_report(g, 1, 1, 0, {}, false); }

AuditReport audit_graph(const ArchGraph& g, int input_h, int input_w, std::uint64_t batch,
                        const MacConvention& conv) {
    return build_report(g, input_h, input_w, batch, conv, true);
}

std::uint64_t count_macs(const ArchGraph& g, int input_h, int input_w, std::uint64_t batch,
                         const MacConvention& conv) {
    return audit_graph(g, input_h, input_w, batch, conv).total_macs_eval;
}

std::uint64_t activation_footprint(const ArchGraph& g, int input_h, int input_w, std::uint64_t batch) {
    return audit_graph(g, input_h, input_w, batch).activation_elements;
}

const char* preservation_status_name(PreservationStatus s) {
    switch (s) {
    case PreservationStatus::PreservedExactly: return "preserved exactly";
    case PreservationStatus::InflatedTimesR: return "inflated xr";
    case PreservationStatus::InflatedOther: return "inflated other";
    }
    fail(ErrorCode::Internal, "unknown preservation status");
}

std::vector<LayerPreservation> preservation_report(const AuditReport& baseline,
                                                   const AuditReport& transformed) {
    if (transformed.r < 1 || baseline.r != 1)
        fail(ErrorCode::InvalidArgument, "preservation_report: baseline must be an r=1 report");
    std::map<std::string, const LayerAudit*> after;
    for (const auto& a : transformed.per_layer) after[a.id] = &a;

    const auto r = static_cast<std::uint64_t>(transformed.r);
    std::vector<LayerPreservation> rows;
    for (const auto& b : baseline.per_layer) {
        auto it = after.find(b.id);
        if (it == after.end())
            fail(ErrorCode::InvalidArgument,
                 "preservation_report: transformed report lacks layer '" + b.id + "' (mismatched lineage)");
        const LayerAudit& a = *it->second;
        LayerPreservation row;
        row.id = b.id;
        row.pclass = b.pclass;
        row.weight_before = b.weight_params;
        row.weight_after = a.weight_params;
        if (a.weight_params == b.weight_params)
            row.status = PreservationStatus::PreservedExactly;
        else if (a.weight_params == r * b.weight_params)
            row.status = PreservationStatus::InflatedTimesR;
        else
            row.status = PreservationStatus::InflatedOther;
        rows.push_back(row);
    }
    return rows;
}

double params_in_millions_3sf(std::uint64_t params) {
    if (params == 0) return 0.0;
    const double m = static_cast<double>(params) / 1e6;
    const double mag = std::pow(10.0, std::floor(std::log10(m)) - 2.0);
    return std::round(m / mag) * mag;
}

double table_gain_percent(std::uint64_t baseline_params, std::uint64_t transformed_params) {
    const double b = params_in_millions_3sf(baseline_params);
    const double t = params_in_millions_3sf(transformed_params);
    if (b <= 0.0) fail(ErrorCode::InvalidArgument, "table_gain_percent: empty baseline");
    return (t / b - 1.0) * 100.0;
}

std::string audit_to_json(const AuditReport& rep, const std::vector<LayerPreservation>* pres) {
    nlohmann::ordered_json j;
    j["format"] = "mnlab.audit.v1";
    j["r"] = rep.r;
    j["M"] = rep.path_multiplicity;
    j["resolution"] = {rep.input_h, rep.input_w};
    j["batch"] = rep.batch;
    j["totals"] = {
        {"params", rep.total_params},
        {"weight_params", rep.total_weight_params},
        {"bias_params", rep.total_bias_params},
        {"params_millions_3sf", params_in_millions_3sf(rep.total_params)},
        {"macs_eval", rep.total_macs_eval},
        {"macs_train", rep.total_macs_train},
        {"activation_elements", rep.activation_elements},
        {"activation_bytes_f32", rep.activation_elements * 4},
    };
    if (rep.has_gain) j["gain_vs_baseline_percent"] = rep.gain_vs_baseline_percent;
    j["per_layer"] = nlohmann::ordered_json::array();
    for (const auto& a : rep.per_layer) {
        j["per_layer"].push_back({
            {"id", a.id},
            {"kind", layer_kind_name(a.kind)},
            {"class", preservation_class_name(a.pclass)},
            {"params", a.params},
            {"weight_params", a.weight_params},
            {"bias_params", a.bias_params},
            {"macs", a.macs},
            {"activation_channels", a.activation_channels},
            {"h", a.out_h},
            {"w", a.out_w},
        });
    }
    if (pres) {
        j["preservation"] = nlohmann::ordered_json::array();
        for (const auto& p : *pres)
            j["preservation"].push_back({{"id", p.id},
                                         {"class", preservation_class_name(p.pclass)},
                                         {"weight_before", p.weight_before},
                                         {"weight_after", p.weight_after},
                                         {"status", preservation_status_name(p.status)}});
    }
    return j.dump(2) + "\n";
}

std::string audit_to_csv(const AuditReport& rep) {
    std::ostringstream os;
    os << "id,kind,class,params,weight_params,bias_params,macs,activation_channels,h,w\n";
    for (const auto& a : rep.per_layer)
        os << a.id << ',' << layer_kind_name(a.kind) << ',' << preservation_class_name(a.pclass) << ','
           << a.params << ',' << a.weight_params << ',' << a.bias_params << ',' << a.macs << ','
           << a.activation_channels << ',' << a.out_h << ',' << a.out_w << '\n';
    return os.str();
}

} // namespace mnlab
