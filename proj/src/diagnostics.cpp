// Copyright 2026 the mnlab authors
// SPDX-License-Identifier: Apache-2.0

#include "mnlab/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mnlab/checkpoint.hpp"

namespace mnlab {

std::optional<double> linear_cka(const FeatureMatrix& X, const FeatureMatrix& Y) {
    if (X.n != Y.n) fail(ErrorCode::InvalidArgument, "linear_cka: row counts differ");
    if (X.n < 2) fail(ErrorCode::InvalidArgument, "linear_cka: need at least 2 samples");

    auto center = [](const FeatureMatrix& m) {
        FeatureMatrix c = m;
        for (int j = 0; j < m.d; ++j) {
            double mean = 0;
            for (int i = 0; i < m.n; ++i) mean += m.at(i, j);
            mean /= m.n;
            for (int i = 0; i < m.n; ++i) c.at(i, j) -= mean;
        }
        return c;
    };
    const FeatureMatrix Xc = center(X);
    const FeatureMatrix Yc = center(Y);

    // ||Yc' Xc||_F^2 and the two self terms, via explicit Gram products.
    auto cross_fro2 = [](const FeatureMatrix& A, const FeatureMatrix& B) {
        double total = 0;
        for (int a = 0; a < A.d; ++a)
            for (int b = 0; b < B.d; ++b) {
                double dot = 0;
                for (int i = 0; i < A.n; ++i) dot += A.at(i, a) * B.at(i, b);
                total += dot * dot;
            }
        return total;
    };
    const double xx = cross_fro2(Xc, Xc);
    const double yy = cross_fro2(Yc, Yc);
    if (xx <= 0.0 || yy <= 0.0) return std::nullopt; // all-constant features
    const double xy = cross_fro2(Xc, Yc);
    return xy / (std::sqrt(xx) * std::sqrt(yy));
}

PathOutputs collect_path_outputs(const ArchGraph& g, ModelStateF& state, const Dataset& ds,
                                 int batch_size, AggregationMode mode) {
    if (ds.size() == 0) fail(ErrorCode::InvalidArgument, "collect_path_outputs: empty dataset");
    PathOutputs po;
    po.paths = g.path_multiplicity;
    po.classes = g.num_classes();
    po.mode = mode;
    po.labels = ds.labels;
    po.logits.resize(static_cast<std::size_t>(ds.size()) * po.paths * po.classes);

    const int C = ds.channels, H = ds.height, W = ds.width;
    for (int first = 0; first < ds.size(); first += batch_size) {
        const int count = std::min(batch_size, ds.size() - first);
        TensorF x({count, C, H, W});
        for (int b = 0; b < count; ++b)
            std::copy_n(ds.sample(first + b), ds.sample_stride(), &x.at(b, 0, 0, 0));
        auto tr = forward(g, state, x, ExecMode::Eval);
        const TensorF& head = tr.path_logits();
        for (int b = 0; b < count; ++b)
            for (int m = 0; m < po.paths; ++m)
                for (int c = 0; c < po.classes; ++c)
                    po.logits[(static_cast<std::size_t>(first + b) * po.paths + m) * po.classes + c] =
                        head.at(b, m * po.classes + c);
    }

    // Per-path and aggregated accuracy.
    po.per_path_accuracy.assign(static_cast<std::size_t>(po.paths), 0.0);
    std::size_t agg_correct = 0;
    std::vector<double> acc(static_cast<std::size_t>(po.classes));
    for (int n = 0; n < po.size(); ++n) {
        const int y = po.labels[static_cast<std::size_t>(n)];
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int m = 0; m < po.paths; ++m) {
            int best = 0;
            for (int c = 1; c < po.classes; ++c)
                if (po.logit(n, m, c) > po.logit(n, m, best)) best = c;
            if (best == y) po.per_path_accuracy[static_cast<std::size_t>(m)] += 1.0;
            if (mode == AggregationMode::Logits) {
                for (int c = 0; c < po.classes; ++c) acc[static_cast<std::size_t>(c)] += po.logit(n, m, c);
            } else {
                double mx = po.logit(n, m, 0);
                for (int c = 1; c < po.classes; ++c) mx = std::max(mx, static_cast<double>(po.logit(n, m, c)));
                double sum = 0;
                for (int c = 0; c < po.classes; ++c) sum += std::exp(po.logit(n, m, c) - mx);
                for (int c = 0; c < po.classes; ++c)
                    acc[static_cast<std::size_t>(c)] += std::exp(po.logit(n, m, c) - mx) / sum;
            }
        }
        int best = 0;
        for (int c = 1; c < po.classes; ++c)
            if (acc[static_cast<std::size_t>(c)] > acc[static_cast<std::size_t>(best)]) best = c;
        if (best == y) ++agg_correct;
    }
    for (auto& a : po.per_path_accuracy) a /= po.size();
    po.aggregated_accuracy = static_cast<double>(agg_correct) / po.size();
    return po;
}

double oracle_accuracy(const PathOutputs& po) {
    if (po.paths < 1) fail(ErrorCode::InvalidArgument, "oracle_accuracy: no paths");
    std::size_t hit = 0;
    for (int n = 0; n < po.size(); ++n) {
        const int y = po.labels[static_cast<std::size_t>(n)];
        for (int m = 0; m < po.paths; ++m) {
            int best = 0;
            for (int c = 1; c < po.classes; ++c)
                if (po.logit(n, m, c) > po.logit(n, m, best)) best = c;
            if (best == y) {
                ++hit;
                break;
            }
        }
    }
    return static_cast<double>(hit) / po.size();
}

namespace {

double prefix_accuracy(const PathOutputs& po, const std::vector<int>& order, int k) {
    std::size_t correct = 0;
    std::vector<double> acc(static_cast<std::size_t>(po.classes));
    for (int n = 0; n < po.size(); ++n) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int j = 0; j < k; ++j) {
            const int m = order[static_cast<std::size_t>(j)];
            if (po.mode == AggregationMode::Logits) {
                for (int c = 0; c < po.classes; ++c) acc[static_cast<std::size_t>(c)] += po.logit(n, m, c);
            } else {
                double mx = po.logit(n, m, 0);
                for (int c = 1; c < po.classes; ++c) mx = std::max(mx, static_cast<double>(po.logit(n, m, c)));
                double sum = 0;
                for (int c = 0; c < po.classes; ++c) sum += std::exp(po.logit(n, m, c) - mx);
                for (int c = 0; c < po.classes; ++c)
                    acc[static_cast<std::size_t>(c)] += std::exp(po.logit(n, m, c) - mx) / sum;
            }
        }
        int best = 0;
        for (int c = 1; c < po.classes; ++c)
            if (acc[static_cast<std::size_t>(c)] > acc[static_cast<std::size_t>(best)]) best = c;
        if (best == po.labels[static_cast<std::size_t>(n)]) ++correct;
    }
    return static_cast<double>(correct) / po.size();
}

} // namespace

CumulativeCurves cumulative_curves(const PathOutputs& po) {
    const int M = po.paths;
    std::vector<int> original(static_cast<std::size_t>(M));
    std::iota(original.begin(), original.end(), 0);

    std::vector<int> best = original, worst = original;
    std::stable_sort(best.begin(), best.end(), [&](int a, int b) {
        return po.per_path_accuracy[static_cast<std::size_t>(a)] >
               po.per_path_accuracy[static_cast<std::size_t>(b)];
    });
    std::stable_sort(worst.begin(), worst.end(), [&](int a, int b) {
        return po.per_path_accuracy[static_cast<std::size_t>(a)] <
               po.per_path_accuracy[static_cast<std::size_t>(b)];
    });

    CumulativeCurves cc;
    for (int k = 1; k <= M; ++k) {
        cc.best_first.push_back(prefix_accuracy(po, best, k));
        cc.worst_first.push_back(prefix_accuracy(po, worst, k));
        cc.original.push_back(prefix_accuracy(po, original, k));
    }
    return cc;
}

namespace {

std::vector<std::string> default_cka_layers(const ArchGraph& g) {
    std::vector<std::string> layers;
    for (const auto& l : g.layers)
        if (l.kind == LayerKind::ReLU) layers.push_back(l.id);
    return layers;
}

/// Spatially average-pooled per-channel features for one layer,
/// accumulated across eval batches: N x C matrix.
FeatureMatrix pooled_features(const ArchGraph& g, ModelStateF& state, const Dataset& ds,
                              const std::string& layer_id, int batch_size) {
    const LayerSpec& l = g.layer(layer_id);
    if (l.out_channels < 1)
        fail(ErrorCode::InvalidArgument, "layer '" + layer_id + "' has no channel structure");
    FeatureMatrix f;
    f.n = ds.size();
    f.d = l.out_channels;
    f.v.resize(static_cast<std::size_t>(f.n) * f.d);

    const int C = ds.channels, H = ds.height, W = ds.width;
    for (int first = 0; first < ds.size(); first += batch_size) {
        const int count = std::min(batch_size, ds.size() - first);
        TensorF x({count, C, H, W});
        for (int b = 0; b < count; ++b)
            std::copy_n(ds.sample(first + b), ds.sample_stride(), &x.at(b, 0, 0, 0));
        auto tr = forward(g, state, x, ExecMode::Eval);
        const TensorF& t = tr.out.at(layer_id);
        const int h = t.dim(2), w = t.dim(3);
        for (int b = 0; b < count; ++b)
            for (int c = 0; c < l.out_channels; ++c) {
                double acc = 0;
                const float* p = &t.at(b, c, 0, 0);
                for (int i = 0; i < h * w; ++i) acc += p[i];
                f.at(first + b, c) = acc / (h * w);
            }
    }
    return f;
}

FeatureMatrix slice_columns(const FeatureMatrix& f, int lo, int hi) {
    FeatureMatrix s;
    s.n = f.n;
    s.d = hi - lo;
    s.v.resize(static_cast<std::size_t>(s.n) * s.d);
    for (int i = 0; i < s.n; ++i)
        for (int j = lo; j < hi; ++j) s.at(i, j - lo) = f.at(i, j);
    return s;
}

} // namespace

std::vector<LayerCka> layerwise_group_cka(const ArchGraph& g, ModelStateF& state, const Dataset& ds,
                                          const DiagnosticsOptions& opt) {
    const std::vector<std::string> layers = opt.layers.empty() ? default_cka_layers(g) : opt.layers;
    const int M = g.path_multiplicity;
    const int groups = M > 1 ? M : opt.pseudo_groups;
    if (groups < 2) fail(ErrorCode::InvalidArgument, "need at least 2 groups for pairwise CKA");

    std::vector<LayerCka> out;
    for (const auto& id : layers) {
        const FeatureMatrix f = pooled_features(g, state, ds, id, opt.batch_size);
        if (f.d % groups != 0)
            fail(ErrorCode::InvalidArgument, "layer '" + id + "': " + std::to_string(f.d) +
                                                 " channels not divisible into " + std::to_string(groups) +
                                                 " groups");
        const int per = f.d / groups;
        std::vector<FeatureMatrix> blocks;
        for (int m = 0; m < groups; ++m) blocks.push_back(slice_columns(f, m * per, (m + 1) * per));

        LayerCka row;
        row.layer = id;
        double sum = 0;
        for (int a = 0; a < groups; ++a)
            for (int b = a + 1; b < groups; ++b) {
                const auto v = linear_cka(blocks[static_cast<std::size_t>(a)],
                                          blocks[static_cast<std::size_t>(b)]);
                if (v) {
                    sum += *v;
                    ++row.pairs_used;
                } else {
                    ++row.pairs_skipped;
                }
            }
        if (row.pairs_used > 0) row.mean_pairwise = sum / row.pairs_used;
        out.push_back(std::move(row));
    }
    return out;
}

std::vector<LayerDnr> dead_neuron_ratio(const ArchGraph& g, ModelStateF& state, const Dataset& ds,
                                        const DiagnosticsOptions& opt) {
    if (ds.size() == 0) fail(ErrorCode::InvalidArgument, "dead_neuron_ratio: empty dataset");
    std::map<std::string, std::vector<float>> channel_max; // per ReLU layer
    for (const auto& l : g.layers)
        if (l.kind == LayerKind::ReLU)
            channel_max[l.id].assign(static_cast<std::size_t>(l.out_channels), 0.0f);

    const int C = ds.channels, H = ds.height, W = ds.width;
    for (int first = 0; first < ds.size(); first += opt.batch_size) {
        const int count = std::min(opt.batch_size, ds.size() - first);
        TensorF x({count, C, H, W});
        for (int b = 0; b < count; ++b)
            std::copy_n(ds.sample(first + b), ds.sample_stride(), &x.at(b, 0, 0, 0));
        auto tr = forward(g, state, x, ExecMode::Eval);
        for (auto& [id, mx] : channel_max) {
            const TensorF& t = tr.out.at(id);
            const int h = t.dim(2), w = t.dim(3);
            for (int b = 0; b < count; ++b)
                for (std::size_t c = 0; c < mx.size(); ++c) {
                    const float* p = &t.at(b, static_cast<int>(c), 0, 0);
                    for (int i = 0; i < h * w; ++i) mx[c] = std::max(mx[c], p[i]);
                }
        }
    }

    std::vector<LayerDnr> out;
    for (const auto& l : g.layers) {
        if (l.kind != LayerKind::ReLU) continue;
        const auto& mx = channel_max.at(l.id);
        LayerDnr row;
        row.layer = l.id;
        row.total = static_cast<int>(mx.size());
        // ReLU emits exact zeros when inactive, so the dead test is exact.
        for (float v : mx)
            if (v == 0.0f) ++row.dead;
        row.ratio = static_cast<double>(row.dead) / row.total;
        out.push_back(std::move(row));
    }
    return out;
}

DiagnosticsReport run_diagnostics(const ArchGraph& g, ModelStateF& state, const Dataset& ds,
                                  AggregationMode mode, const DiagnosticsOptions& opt) {
    DiagnosticsReport rep;
    rep.paths = g.path_multiplicity;
    rep.mode = mode;
    PathOutputs po = collect_path_outputs(g, state, ds, opt.batch_size, mode);
    rep.test_accuracy = po.aggregated_accuracy;
    rep.oracle = oracle_accuracy(po);
    rep.per_path_accuracy = po.per_path_accuracy;
    rep.curves = cumulative_curves(po);
    rep.dnr_per_layer = dead_neuron_ratio(g, state, ds, opt);
    if (rep.paths > 1 || opt.pseudo_groups >= 2) {
        rep.cka_per_layer = layerwise_group_cka(g, state, ds, opt);
        rep.pseudo_groups = rep.paths > 1 ? 0 : opt.pseudo_groups;
    }
    return rep;
}

std::string diagnostics_to_json(const DiagnosticsReport& rep) {
    nlohmann::ordered_json j;
    j["format"] = "mnlab.diag.v1";
    j["paths"] = rep.paths;
    j["aggregation"] = rep.mode == AggregationMode::Logits ? "logits" : "probs";
    j["test_accuracy"] = rep.test_accuracy;
    j["oracle_accuracy"] = rep.oracle;
    j["per_path_accuracy"] = rep.per_path_accuracy;
    if (rep.pseudo_groups > 0) j["baseline_pseudo_groups"] = rep.pseudo_groups;
    j["cka_per_layer"] = nlohmann::ordered_json::array();
    for (const auto& c : rep.cka_per_layer) {
        nlohmann::ordered_json row;
        row["layer"] = c.layer;
        if (c.mean_pairwise) row["mean_pairwise_cka"] = *c.mean_pairwise;
        else row["mean_pairwise_cka"] = nullptr;
        row["pairs_used"] = c.pairs_used;
        row["pairs_skipped"] = c.pairs_skipped;
        j["cka_per_layer"].push_back(row);
    }
    j["dnr_per_layer"] = nlohmann::ordered_json::array();
    for (const auto& d : rep.dnr_per_layer)
        j["dnr_per_layer"].push_back(
            {{"layer", d.layer}, {"dead", d.dead}, {"total", d.total}, {"ratio", d.ratio}});
    j["cumulative_curves"] = {{"BestFirst", rep.curves.best_first},
                              {"WorstFirst", rep.curves.worst_first},
                              {"Original", rep.curves.original}};
    return j.dump(2) + "\n";
}

DiagnosticsReport diagnose_run(const std::string& run_dir, const Dataset& eval_raw,
                               const DiagnosticsOptions& opt, const std::string& out_dir) {
    Checkpoint ck = load_checkpoint(run_dir + "/checkpoint.mnck");
    if (ck.is_double())
        fail(ErrorCode::InvalidArgument, "diagnose: f64 checkpoints are for gradient checks, not runs");
    ModelStateF state = std::get<ModelStateF>(std::move(ck.state));

    std::ifstream sf(run_dir + "/stats.json");
    if (!sf) fail(ErrorCode::Io, "run dir lacks stats.json: " + run_dir);
    nlohmann::json sj = nlohmann::json::parse(sf, nullptr, false);
    if (sj.is_discarded()) fail(ErrorCode::Io, "stats.json is not valid JSON");
    ChannelStats stats;
    stats.mean = sj.at("mean").get<std::vector<float>>();
    stats.stddev = sj.at("stddev").get<std::vector<float>>();

    AggregationMode mode = AggregationMode::Logits;
    std::ifstream cf(run_dir + "/config.json");
    if (cf) {
        nlohmann::json cj = nlohmann::json::parse(cf, nullptr, false);
        if (!cj.is_discarded() && cj.value("aggregation", "logits") == std::string("probs"))
            mode = AggregationMode::Probs;
    }

    const Dataset ds = standardize(eval_raw, stats);
    DiagnosticsReport rep = run_diagnostics(ck.graph, state, ds, mode, opt);

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream(out_dir + "/diag.json") << diagnostics_to_json(rep);

        std::ostringstream cka;
        cka << "layer,mean_pairwise_cka,pairs_used,pairs_skipped\n";
        for (const auto& c : rep.cka_per_layer) {
            cka << c.layer << ',';
            if (c.mean_pairwise) cka << *c.mean_pairwise;
            cka << ',' << c.pairs_used << ',' << c.pairs_skipped << '\n';
        }
        std::ofstream(out_dir + "/cka_layerwise.csv") << cka.str();

        std::ostringstream dnr;
        dnr << "layer,dead,total,ratio\n";
        for (const auto& d : rep.dnr_per_layer)
            dnr << d.layer << ',' << d.dead << ',' << d.total << ',' << d.ratio << '\n';
        std::ofstream(out_dir + "/dnr_layerwise.csv") << dnr.str();

        std::ostringstream cum;
        cum << "ordering,k,accuracy\n";
        auto emit = [&cum](const char* name, const std::vector<double>& v) {
            for (std::size_t k = 0; k < v.size(); ++k)
                cum << name << ',' << (k + 1) << ',' << v[k] << '\n';
        };
        emit("BestFirst", rep.curves.best_first);
        emit("WorstFirst", rep.curves.worst_first);
        emit("Original", rep.curves.original);
        std::ofstream(out_dir + "/cumulative_curves.csv") << cum.str();

        std::ostringstream paths;
        paths << "path,accuracy\n";
        for (std::size_t m = 0; m < rep.per_path_accuracy.size(); ++m)
            paths << m << ',' << rep.per_path_accuracy[m] << '\n';
        std::ofstream(out_dir + "/paths.csv") << paths.str();
    }
    return rep;
}

} // namespace mnlab
