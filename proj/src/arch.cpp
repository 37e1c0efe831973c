// Copyright 2026 the mnlab authors
// SPDX-License-Identifier: Apache-2.0

#include "mnlab/arch.hpp"

#include <algorithm>
#include <map>
#include <set>

#include <json.hpp>

namespace mnlab {

namespace {

constexpr const char* kGraphFormat = "mnlab.graph.v1";

const std::map<std::string, LayerKind>& kind_table() {
    static const std::map<std::string, LayerKind> table = {
        {"Input", LayerKind::Input},
        {"Conv2d", LayerKind::Conv2d},
        {"DepthwiseConv2d", LayerKind::DepthwiseConv2d},
        {"Dense", LayerKind::Dense},
        {"Norm", LayerKind::Norm},
        {"ReLU", LayerKind::ReLU},
        {"Pool", LayerKind::Pool},
        {"GlobalPool", LayerKind::GlobalPool},
        {"Add", LayerKind::Add},
        {"ClassifierHead", LayerKind::ClassifierHead},
        {"Aggregate", LayerKind::Aggregate},
    };
    return table;
}

} // namespace

const char* layer_kind_name(LayerKind k) {
    for (const auto& [name, kind] : kind_table())
        if (kind == k) return name.c_str();
    fail(ErrorCode::Internal, "unknown layer kind value");
}

LayerKind layer_kind_from_name(const std::string& name) {
    auto it = kind_table().find(name);
    if (it == kind_table().end())
        fail(ErrorCode::Validation, "unknown layer kind '" + name + "'");
    return it->second;
}

const char* preservation_class_name(PreservationClass c) {
    switch (c) {
    case PreservationClass::DenseCoupling: return "DenseCoupling";
    case PreservationClass::OneSidedFixed: return "OneSidedFixed";
    case PreservationClass::Depthwise: return "Depthwise";
    case PreservationClass::PerChannel: return "PerChannel";
    case PreservationClass::ParameterFree: return "ParameterFree";
    }
    fail(ErrorCode::Internal, "unknown preservation class value");
}

const LayerSpec& ArchGraph::layer(const std::string& id) const {
    int i = layer_index(id);
    if (i < 0) fail(ErrorCode::Validation, "no layer with id '" + id + "'");
    return layers[static_cast<std::size_t>(i)];
}

int ArchGraph::layer_index(const std::string& id) const {
    for (std::size_t i = 0; i < layers.size(); ++i)
        if (layers[i].id == id) return static_cast<int>(i);
    return -1;
}

const LayerSpec& ArchGraph::input_layer() const {
    for (const auto& l : layers)
        if (l.kind == LayerKind::Input) return l;
    fail(ErrorCode::Validation, "graph has no Input layer");
}

const LayerSpec& ArchGraph::sink_layer() const {
    // Sink = the unique layer with no successors.
    std::set<std::string> referenced;
    for (const auto& l : layers)
        for (const auto& p : l.predecessors) referenced.insert(p);
    const LayerSpec* sink = nullptr;
    for (const auto& l : layers) {
        if (referenced.count(l.id)) continue;
        if (sink) fail(ErrorCode::Validation, "graph has multiple sinks ('" + sink->id + "', '" + l.id + "')");
        sink = &l;
    }
    if (!sink) fail(ErrorCode::Validation, "graph has no sink");
    return *sink;
}

int ArchGraph::num_classes() const {
    const LayerSpec& s = sink_layer();
    if (s.kind == LayerKind::Aggregate) return s.out_channels;
    if (s.kind == LayerKind::ClassifierHead) return s.out_channels;
    fail(ErrorCode::Validation, "sink is neither Aggregate nor ClassifierHead");
}

LayerPosition ArchGraph::position_of(const LayerSpec& l) const {
    if (l.kind == LayerKind::ClassifierHead || l.kind == LayerKind::Aggregate)
        return LayerPosition::OutputFacing;
    for (const auto& p : l.predecessors)
        if (layer(p).kind == LayerKind::Input) return LayerPosition::InputFacing;
    return LayerPosition::Intermediate;
}

void ArchGraph::validate() const {
    if (layers.empty()) fail(ErrorCode::Validation, "graph has no layers");

    std::set<std::string> ids;
    for (const auto& l : layers) {
        if (l.id.empty()) fail(ErrorCode::Validation, "layer with empty id");
        if (!ids.insert(l.id).second) fail(ErrorCode::Validation, "duplicate layer id '" + l.id + "'");
    }

    // Topological order doubles as the acyclicity witness: every
    // predecessor must already have appeared.
    std::set<std::string> seen;
    int input_count = 0;
    for (const auto& l : layers) {
        for (const auto& p : l.predecessors) {
            if (!seen.count(p))
                fail(ErrorCode::Validation,
                     "layer '" + l.id + "' references '" + p + "' which is not an earlier layer");
        }
        if (l.kind == LayerKind::Input) {
            ++input_count;
            if (!l.predecessors.empty()) fail(ErrorCode::Validation, "Input layer must have no predecessors");
        } else if (l.predecessors.empty()) {
            fail(ErrorCode::Validation, "layer '" + l.id + "' has no predecessors");
        }
        seen.insert(l.id);
    }
    if (input_count != 1) fail(ErrorCode::Validation, "graph must have exactly one Input layer");

    const LayerSpec& sink = sink_layer();
    if (sink.kind != LayerKind::Aggregate && sink.kind != LayerKind::ClassifierHead)
        fail(ErrorCode::Validation, "sink '" + sink.id + "' must be Aggregate or ClassifierHead");

    // Sink reachable from every layer: walk predecessors from the sink and
    // require full coverage (every layer feeds the sink in a single-sink DAG).
    std::set<std::string> cone;
    std::vector<const LayerSpec*> stack = {&sink};
    while (!stack.empty()) {
        const LayerSpec* l = stack.back();
        stack.pop_back();
        if (!cone.insert(l->id).second) continue;
        for (const auto& p : l->predecessors) stack.push_back(&layer(p));
    }
    for (const auto& l : layers)
        if (!cone.count(l.id))
            fail(ErrorCode::Validation, "layer '" + l.id + "' cannot reach the sink");

    const int M = path_multiplicity;
    if (width_divisor > 1 && M != width_divisor * width_divisor)
        fail(ErrorCode::Validation, "path multiplicity must equal r*r");
    if (M < 1 || width_divisor < 1) fail(ErrorCode::Validation, "M and r must be positive");

    for (const auto& l : layers) {
        switch (l.kind) {
        case LayerKind::Conv2d:
        case LayerKind::DepthwiseConv2d:
            if (l.kernel < 1 || l.kernel % 2 == 0)
                fail(ErrorCode::Validation, "layer '" + l.id + "': kernel must be odd and positive");
            if (l.groups < 1 || l.in_channels % l.groups != 0 || l.out_channels % l.groups != 0)
                fail(ErrorCode::Validation, "layer '" + l.id + "': channels not divisible by groups");
            if (l.kind == LayerKind::DepthwiseConv2d &&
                (l.groups != l.in_channels || l.groups != l.out_channels))
                fail(ErrorCode::Validation, "layer '" + l.id + "': depthwise requires groups == C_in == C_out");
            break;
        case LayerKind::Dense:
        case LayerKind::ClassifierHead:
            if (l.groups < 1 || l.in_channels % l.groups != 0 || l.out_channels % l.groups != 0)
                fail(ErrorCode::Validation, "layer '" + l.id + "': features not divisible by groups");
            break;
        case LayerKind::Norm:
            if (l.in_channels != l.out_channels)
                fail(ErrorCode::Validation, "layer '" + l.id + "': Norm must preserve channel count");
            if (l.groups < 1 || l.in_channels % l.groups != 0)
                fail(ErrorCode::Validation, "layer '" + l.id + "': Norm channels not divisible by groups");
            break;
        case LayerKind::Aggregate:
            if (l.predecessors.size() != 1 || l.in_channels != M * l.out_channels)
                fail(ErrorCode::Validation, "layer '" + l.id + "': Aggregate must fold M path blocks into one output");
            break;
        default:
            break;
        }

        // Path-wise separation: channel-coupled layers between the input
        // and the aggregation may not mix paths.
        if (M > 1 && (l.is_conv() || l.is_dense() || l.kind == LayerKind::Norm)) {
            LayerPosition pos = position_of(l);
            if (pos != LayerPosition::InputFacing && l.groups % M != 0)
                fail(ErrorCode::Validation,
                     "layer '" + l.id + "': groups " + std::to_string(l.groups) +
                         " not a multiple of path count " + std::to_string(M));
        }
    }
}

PreservationClass classify_layer(const LayerSpec& layer, LayerPosition position) {
    switch (layer.kind) {
    case LayerKind::Conv2d:
        return position == LayerPosition::Intermediate ? PreservationClass::DenseCoupling
                                                       : PreservationClass::OneSidedFixed;
    case LayerKind::Dense:
        return position == LayerPosition::Intermediate ? PreservationClass::DenseCoupling
                                                       : PreservationClass::OneSidedFixed;
    case LayerKind::ClassifierHead:
        return PreservationClass::OneSidedFixed;
    case LayerKind::DepthwiseConv2d:
        return PreservationClass::Depthwise;
    case LayerKind::Norm:
        return PreservationClass::PerChannel;
    case LayerKind::Input:
    case LayerKind::ReLU:
    case LayerKind::Pool:
    case LayerKind::GlobalPool:
    case LayerKind::Add:
    case LayerKind::Aggregate:
        return PreservationClass::ParameterFree;
    }
    fail(ErrorCode::Validation, "cannot classify unknown layer kind");
}

namespace {

struct GraphBuilder {
    ArchGraph g;
    std::string last;

    std::string add(LayerSpec l, const std::vector<std::string>& preds = {}) {
        l.predecessors = preds.empty() && l.kind != LayerKind::Input ? std::vector<std::string>{last}
                                                                     : preds;
        g.layers.push_back(l);
        last = l.id;
        return l.id;
    }

    std::string conv(const std::string& id, int k, int cin, int cout, int stride = 1,
                     const std::vector<std::string>& preds = {}) {
        return add({.id = id,
                    .kind = LayerKind::Conv2d,
                    .kernel = k,
                    .in_channels = cin,
                    .out_channels = cout,
                    .groups = 1,
                    .stride = stride,
                    .has_bias = false}, // always followed by Norm in the builders
                   preds);
    }

    std::string norm(const std::string& id, int c) {
        return add({.id = id,
                    .kind = LayerKind::Norm,
                    .in_channels = c,
                    .out_channels = c,
                    .groups = c}); // per-channel statistics
    }

    std::string relu(const std::string& id, int c, const std::vector<std::string>& preds = {}) {
        return add({.id = id, .kind = LayerKind::ReLU, .in_channels = c, .out_channels = c}, preds);
    }
};

} // namespace

ArchGraph build_resnet18(int num_classes, int input_channels) {
    if (num_classes < 2) fail(ErrorCode::InvalidArgument, "num_classes must be >= 2");
    if (input_channels < 1) fail(ErrorCode::InvalidArgument, "input_channels must be >= 1");

    const std::vector<int> widths = {64, 128, 256, 512};
    GraphBuilder b;
    b.g.stage_widths = widths;

    b.add({.id = "input", .kind = LayerKind::Input, .out_channels = input_channels});
    b.conv("stem.conv", 3, input_channels, 64);
    b.norm("stem.norm", 64);
    b.relu("stem.relu", 64);

    int cin = 64;
    for (int s = 0; s < 4; ++s) {
        const int cout = widths[static_cast<std::size_t>(s)];
        for (int blk = 0; blk < 2; ++blk) {
            const std::string p = "s" + std::to_string(s + 1) + ".b" + std::to_string(blk) + ".";
            const bool down = blk == 0 && s > 0;
            const int stride = down ? 2 : 1;
            const std::string block_in = b.last;

            b.conv(p + "conv1", 3, cin, cout, stride, {block_in});
            b.norm(p + "norm1", cout);
            b.relu(p + "relu1", cout);
            b.conv(p + "conv2", 3, cout, cout);
            b.norm(p + "norm2", cout);

            std::string shortcut = block_in;
            if (down || cin != cout) {
                b.conv(p + "down.conv", 1, cin, cout, stride, {block_in});
                b.norm(p + "down.norm", cout);
                shortcut = p + "down.norm";
            }
            b.add({.id = p + "add", .kind = LayerKind::Add, .in_channels = cout, .out_channels = cout},
                  {p + "norm2", shortcut});
            b.relu(p + "relu2", cout);
            cin = cout;
        }
    }

    b.add({.id = "pool", .kind = LayerKind::GlobalPool, .in_channels = cin, .out_channels = cin});
    b.add({.id = "head",
           .kind = LayerKind::ClassifierHead,
           .in_channels = cin,
           .out_channels = num_classes,
           .groups = 1,
           .has_bias = true});

    b.g.validate();
    return b.g;
}

ArchGraph build_micro_cnn(const std::vector<int>& widths, int num_classes) {
    if (widths.empty()) fail(ErrorCode::InvalidArgument, "widths must be nonempty");
    for (int w : widths)
        if (w < 1) fail(ErrorCode::InvalidArgument, "widths must be positive");
    if (num_classes < 2) fail(ErrorCode::InvalidArgument, "num_classes must be >= 2");

    GraphBuilder b;
    b.g.stage_widths = widths;
    b.add({.id = "input", .kind = LayerKind::Input, .out_channels = 3});

    int cin = 3;
    for (std::size_t s = 0; s < widths.size(); ++s) {
        const int cout = widths[s];
        const std::string p = "s" + std::to_string(s + 1) + ".";
        b.conv(p + "conv", 3, cin, cout);
        b.norm(p + "norm", cout);
        b.relu(p + "relu", cout);
        cin = cout;
    }

    b.add({.id = "pool", .kind = LayerKind::GlobalPool, .in_channels = cin, .out_channels = cin});
    b.add({.id = "head",
           .kind = LayerKind::ClassifierHead,
           .in_channels = cin,
           .out_channels = num_classes,
           .groups = 1,
           .has_bias = true});

    b.g.validate();
    return b.g;
}

std::string graph_to_json(const ArchGraph& g) {
    nlohmann::ordered_json j;
    j["format"] = kGraphFormat;
    j["r"] = g.width_divisor;
    j["M"] = g.path_multiplicity;
    j["stage_widths"] = g.stage_widths;
    j["layers"] = nlohmann::ordered_json::array();
    for (const auto& l : g.layers) {
        nlohmann::ordered_json lj;
        lj["id"] = l.id;
        lj["kind"] = layer_kind_name(l.kind);
        if (l.is_conv()) lj["kernel"] = l.kernel;
        lj["in_channels"] = l.in_channels;
        lj["out_channels"] = l.out_channels;
        lj["groups"] = l.groups;
        lj["stride"] = l.stride;
        lj["has_bias"] = l.has_bias;
        lj["predecessors"] = l.predecessors;
        j["layers"].push_back(lj);
    }
    return j.dump(2) + "\n";
}

ArchGraph graph_from_json(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::Io, std::string("graph JSON parse error: ") + e.what());
    }
    if (!j.is_object() || j.value("format", "") != kGraphFormat)
        fail(ErrorCode::Io, "not a mnlab.graph.v1 document");

    ArchGraph g;
    try {
        g.width_divisor = j.at("r").get<int>();
        g.path_multiplicity = j.at("M").get<int>();
        g.stage_widths = j.value("stage_widths", std::vector<int>{});
        for (const auto& lj : j.at("layers")) {
            LayerSpec l;
            l.id = lj.at("id").get<std::string>();
            l.kind = layer_kind_from_name(lj.at("kind").get<std::string>());
            l.kernel = lj.value("kernel", 0);
            l.in_channels = lj.value("in_channels", 0);
            l.out_channels = lj.value("out_channels", 0);
            l.groups = lj.value("groups", 1);
            l.stride = lj.value("stride", 1);
            l.has_bias = lj.value("has_bias", false);
            l.predecessors = lj.value("predecessors", std::vector<std::string>{});
            g.layers.push_back(std::move(l));
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::Io, std::string("graph JSON field error: ") + e.what());
    }
    g.validate();
    return g;
}

} // namespace mnlab
