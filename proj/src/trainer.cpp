// Copyright 2026 the mnlab authors
// SPDX-License-Identifier: Apache-2.0

#include "mnlab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mnlab/checkpoint.hpp"
#include "mnlab/prng.hpp"

namespace mnlab {

void TrainConfig::validate() const {
    if (batch_size < 1) fail(ErrorCode::InvalidArgument, "batch_size must be >= 1");
    if (max_lr < 0) fail(ErrorCode::InvalidArgument, "max_lr must be >= 0");
    if (epochs < 0) fail(ErrorCode::InvalidArgument, "epochs must be >= 0");
    if (weight_decay < 0) fail(ErrorCode::InvalidArgument, "weight_decay must be >= 0");
}

double max_lr_for_batch(int batch_size) {
    if (batch_size < 1) fail(ErrorCode::InvalidArgument, "batch_size must be >= 1");
    return 5e-3 * (static_cast<double>(batch_size) / 128.0);
}

int epochs_for_ipc(int ipc) {
    if (ipc < 1) fail(ErrorCode::InvalidArgument, "ipc must be >= 1");
    if (ipc >= 100) return 200;
    return static_cast<int>(std::lround(200.0 * (100.0 / static_cast<double>(ipc))));
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, double max_lr) {
    if (total_steps < 1) fail(ErrorCode::InvalidArgument, "total_steps must be >= 1");
    if (step < 0 || step > total_steps)
        fail(ErrorCode::InvalidArgument, "step " + std::to_string(step) + " outside [0, " +
                                             std::to_string(total_steps) + "]");
    return max_lr * (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(step) /
                                    static_cast<double>(total_steps))) /
           2.0;
}

TrainConfig train_config_from_json(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::Io, std::string("train config parse error: ") + e.what());
    }
    TrainConfig c;
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_lr = j.value("max_lr", c.max_lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    const std::string opt = j.value("optimizer", "adamw");
    if (opt == "adamw" || opt == "adaptive_decoupled")
        c.optimizer = OptimizerKind::AdaptiveDecoupled;
    else if (opt == "sgd" || opt == "momentum_sgd")
        c.optimizer = OptimizerKind::MomentumSGD;
    else
        fail(ErrorCode::InvalidArgument, "unknown optimizer '" + opt + "'");
    const std::string prec = j.value("precision", "f32");
    if (prec == "f32") c.precision = Precision::F32;
    else if (prec == "f64") c.precision = Precision::F64;
    else fail(ErrorCode::InvalidArgument, "unknown precision '" + prec + "'");
    c.augment = j.value("augment", c.augment);
    const std::string agg = j.value("aggregation", "logits");
    if (agg == "logits") c.aggregation = AggregationMode::Logits;
    else if (agg == "probs") c.aggregation = AggregationMode::Probs;
    else fail(ErrorCode::InvalidArgument, "unknown aggregation '" + agg + "'");
    c.momentum = j.value("momentum", c.momentum);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.validate();
    return c;
}

std::string train_config_to_json(const TrainConfig& c) {
    nlohmann::ordered_json j;
    j["batch_size"] = c.batch_size;
    j["max_lr"] = c.max_lr;
    j["weight_decay"] = c.weight_decay;
    j["epochs"] = c.epochs;
    j["seed"] = c.seed;
    j["optimizer"] = c.optimizer == OptimizerKind::AdaptiveDecoupled ? "adamw" : "sgd";
    j["precision"] = c.precision == Precision::F32 ? "f32" : "f64";
    j["augment"] = c.augment;
    j["aggregation"] = c.aggregation == AggregationMode::Logits ? "logits" : "probs";
    j["momentum"] = c.momentum;
    j["beta1"] = c.beta1;
    j["beta2"] = c.beta2;
    j["eps"] = c.eps;
    j["checkpoint_every"] = c.checkpoint_every;
    return j.dump(2) + "\n";
}

template <typename T>
void optimizer_step(const ArchGraph& g, ModelStateT<T>& state, const GradientsT<T>& grads,
                    OptStateT<T>& opt, const TrainConfig& cfg, double lr) {
    ++opt.step_count;
    for (const auto& l : g.layers) {
        auto git = grads.layers.find(l.id);
        if (git == grads.layers.end()) continue;
        auto& p = state.layers.at(l.id);
        auto& m1 = opt.m1[l.id];
        auto& m2 = opt.m2[l.id];

        auto update = [&](TensorT<T>& param, const TensorT<T>& grad, TensorT<T>& m, TensorT<T>& v,
                          bool decayed) {
            if (param.v.empty()) return;
            if (grad.v.size() != param.v.size())
                fail(ErrorCode::Shape, "optimizer: gradient shape mismatch at '" + l.id + "'");
            if (m.v.size() != param.v.size()) m = TensorT<T>(param.shape);
            const double wd = decayed ? cfg.weight_decay : 0.0;
            if (cfg.optimizer == OptimizerKind::AdaptiveDecoupled) {
                if (v.v.size() != param.v.size()) v = TensorT<T>(param.shape);
                adamw_update(param.v.data(), grad.v.data(), m.v.data(), v.v.data(), param.v.size(),
                             lr, wd, cfg.beta1, cfg.beta2, cfg.eps, opt.step_count);
            } else {
                sgd_update(param.v.data(), grad.v.data(), m.v.data(), param.v.size(), lr, wd,
                           cfg.momentum);
            }
        };

        // Decay applies to coupling weights only, not biases or norm affine.
        update(p.weight, git->second.weight, m1.weight, m2.weight, true);
        update(p.bias, git->second.bias, m1.bias, m2.bias, false);
        update(p.gamma, git->second.gamma, m1.gamma, m2.gamma, false);
        update(p.beta, git->second.beta, m1.beta, m2.beta, false);
    }
}

template void optimizer_step<float>(const ArchGraph&, ModelStateT<float>&, const GradientsT<float>&,
                                    OptStateT<float>&, const TrainConfig&, double);
template void optimizer_step<double>(const ArchGraph&, ModelStateT<double>&,
                                     const GradientsT<double>&, OptStateT<double>&,
                                     const TrainConfig&, double);

namespace {

/// Assembles a batch tensor, optionally augmented (seeded horizontal flip
/// plus zero-padded shift-crop scaled to the resolution: 4 px at 32).
template <typename T>
TensorT<T> make_batch(const Dataset& ds, const std::vector<int>& order, std::size_t first,
                      std::size_t count, bool augment, Rng* aug_rng) {
    const int C = ds.channels, H = ds.height, W = ds.width;
    TensorT<T> x({static_cast<int>(count), C, H, W});
    const int shift = std::max(1, (std::min(H, W) + 4) / 8);
    for (std::size_t b = 0; b < count; ++b) {
        const int src = order[first + b];
        const float* img = ds.sample(src);
        bool flip = false;
        int dy = 0, dx = 0;
        if (augment) {
            flip = aug_rng->coin();
            dy = static_cast<int>(aug_rng->bounded(2 * shift + 1)) - shift;
            dx = static_cast<int>(aug_rng->bounded(2 * shift + 1)) - shift;
        }
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) {
                    const int sy = y + dy;
                    int sx = xx + dx;
                    if (flip) sx = W - 1 - sx;
                    T v = 0;
                    if (sy >= 0 && sy < H && sx >= 0 && sx < W)
                        v = static_cast<T>(img[(static_cast<std::size_t>(c) * H + sy) * W + sx]);
                    x.at(static_cast<int>(b), c, y, xx) = v;
                }
    }
    return x;
}

template <typename T>
std::vector<int> batch_labels(const Dataset& ds, const std::vector<int>& order, std::size_t first,
                              std::size_t count) {
    std::vector<int> out(count);
    for (std::size_t b = 0; b < count; ++b) out[b] = ds.labels[static_cast<std::size_t>(order[first + b])];
    return out;
}

/// Predicted class per sample under the given aggregation mode.
template <typename T>
std::vector<int> predict(const ForwardTrace<T>& tr, AggregationMode mode) {
    const TensorT<T>& head = tr.path_logits();
    const int N = head.dim(0), C = tr.classes, M = tr.paths;
    std::vector<int> pred(static_cast<std::size_t>(N));
    for (int n = 0; n < N; ++n) {
        int best = 0;
        if (mode == AggregationMode::Logits || M == 1) {
            const TensorT<T>& agg = tr.aggregated();
            for (int c = 1; c < C; ++c)
                if (agg.at(n, c) > agg.at(n, best)) best = c;
        } else {
            // Mean of per-path softmax probabilities.
            std::vector<double> pbar(static_cast<std::size_t>(C), 0.0);
            for (int m = 0; m < M; ++m) {
                double mx = head.at(n, m * C);
                for (int c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(head.at(n, m * C + c)));
                double sum = 0;
                for (int c = 0; c < C; ++c) sum += std::exp(static_cast<double>(head.at(n, m * C + c)) - mx);
                for (int c = 0; c < C; ++c)
                    pbar[static_cast<std::size_t>(c)] +=
                        std::exp(static_cast<double>(head.at(n, m * C + c)) - mx) / sum;
            }
            for (int c = 1; c < C; ++c)
                if (pbar[static_cast<std::size_t>(c)] > pbar[static_cast<std::size_t>(best)]) best = c;
        }
        pred[static_cast<std::size_t>(n)] = best;
    }
    return pred;
}

template <typename T>
double eval_accuracy_impl(const ArchGraph& g, ModelStateT<T>& state, const Dataset& ds,
                          int batch_size, AggregationMode mode) {
    if (ds.size() == 0) fail(ErrorCode::InvalidArgument, "evaluate: empty dataset");
    std::vector<int> order(static_cast<std::size_t>(ds.size()));
    for (int i = 0; i < ds.size(); ++i) order[static_cast<std::size_t>(i)] = i;
    std::size_t correct = 0;
    for (std::size_t first = 0; first < order.size(); first += static_cast<std::size_t>(batch_size)) {
        const std::size_t count = std::min(static_cast<std::size_t>(batch_size), order.size() - first);
        TensorT<T> x = make_batch<T>(ds, order, first, count, false, nullptr);
        auto tr = forward(g, state, x, ExecMode::Eval);
        const auto pred = predict(tr, mode);
        const auto labels = batch_labels<T>(ds, order, first, count);
        for (std::size_t i = 0; i < count; ++i)
            if (pred[i] == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

template <typename T>
TrainOutput train_impl(const ArchGraph& g, const Dataset& train_raw, const Dataset* val_raw,
                       TrainConfig cfg, const std::string& run_dir) {
    g.validate();
    cfg.validate();
    if (train_raw.class_count != g.num_classes())
        fail(ErrorCode::InvalidArgument,
             "dataset has " + std::to_string(train_raw.class_count) + " classes but classifier expects " +
                 std::to_string(g.num_classes()));
    if (cfg.max_lr == 0.0) cfg.max_lr = max_lr_for_batch(cfg.batch_size);
    if (cfg.epochs == 0) {
        const int ipc = train_raw.ipc > 0 ? train_raw.ipc : std::max(1, train_raw.size() / train_raw.class_count);
        cfg.epochs = epochs_for_ipc(ipc);
    }

    // The loss is attached to the aggregated output: the sink must be the
    // Aggregate node (or the head itself when M = 1).
    const LayerSpec& sink = g.sink_layer();
    if (g.path_multiplicity > 1 && sink.kind != LayerKind::Aggregate)
        fail(ErrorCode::Validation, "multi-path graph must end in an Aggregate sink");

    const ChannelStats stats = compute_channel_stats(train_raw);
    const Dataset train = standardize(train_raw, stats);
    std::optional<Dataset> val;
    if (val_raw) val = standardize(*val_raw, stats);

    ModelStateT<T> state = init_state<T>(g, derive_seed(cfg.seed, "init"));
    OptStateT<T> opt;

    const std::size_t n = static_cast<std::size_t>(train.size());
    const std::size_t steps_per_epoch = (n + static_cast<std::size_t>(cfg.batch_size) - 1) /
                                        static_cast<std::size_t>(cfg.batch_size);
    const std::int64_t total_steps = static_cast<std::int64_t>(steps_per_epoch) * cfg.epochs;

    if (!run_dir.empty()) {
        std::filesystem::create_directories(run_dir);
        std::ofstream(run_dir + "/config.json") << train_config_to_json(cfg);
        nlohmann::ordered_json sj;
        sj["mean"] = stats.mean;
        sj["stddev"] = stats.stddev;
        std::ofstream(run_dir + "/stats.json") << sj.dump(2) << "\n";
    }

    TrainOutput out;
    out.stats = stats;
    std::int64_t step = 0;
    std::vector<int> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, "shuffle/epoch", static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        Rng aug_rng(derive_seed(cfg.seed, "augment/epoch", static_cast<std::uint64_t>(epoch)));

        double loss_sum = 0;
        std::size_t correct = 0;
        const double epoch_lr = cosine_lr(step, total_steps, cfg.max_lr);

        for (std::size_t first = 0; first < n; first += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t count = std::min(static_cast<std::size_t>(cfg.batch_size), n - first);
            TensorT<T> x = make_batch<T>(train, order, first, count, cfg.augment, &aug_rng);
            const auto labels = batch_labels<T>(train, order, first, count);

            auto tr = forward(g, state, x, ExecMode::Train);
            ops::LossResult<T> loss;
            std::map<std::string, TensorT<T>> seeds;
            if (cfg.aggregation == AggregationMode::Logits) {
                loss = ops::softmax_xent(tr.aggregated(), labels);
                seeds[tr.sink_id] = loss.grad;
            } else {
                loss = ops::prob_aggregate_xent(tr.path_logits(), tr.paths, labels);
                seeds[tr.head_id] = loss.grad;
            }
            if (!std::isfinite(static_cast<double>(loss.loss)))
                fail(ErrorCode::Numeric, "training diverged: non-finite loss at step " +
                                             std::to_string(step) + " (epoch " + std::to_string(epoch) + ")");

            auto grads = backward(g, state, tr, seeds);
            const double lr = cosine_lr(step, total_steps, cfg.max_lr);
            optimizer_step(g, state, grads, opt, cfg, lr);
            ++step;

            loss_sum += static_cast<double>(loss.loss) * static_cast<double>(count);
            const auto pred = predict(tr, cfg.aggregation);
            for (std::size_t i = 0; i < count; ++i)
                if (pred[i] == labels[i]) ++correct;
        }

        EpochRow row;
        row.epoch = epoch;
        row.lr = epoch_lr;
        row.train_loss = loss_sum / static_cast<double>(n);
        row.train_acc = static_cast<double>(correct) / static_cast<double>(n);
        if (val) row.val_acc = eval_accuracy_impl(g, state, *val, cfg.batch_size, cfg.aggregation);
        out.result.history.push_back(row);

        if (!run_dir.empty() && cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 &&
            epoch != cfg.epochs)
            save_checkpoint(run_dir + "/checkpoint_epoch_" + std::to_string(epoch) + ".mnck", g, state);
    }

    out.result.total_steps = step;
    out.result.final_train_acc = eval_accuracy_impl(g, state, train, cfg.batch_size, cfg.aggregation);
    if (val) out.result.final_val_acc = eval_accuracy_impl(g, state, *val, cfg.batch_size, cfg.aggregation);

    if (!run_dir.empty()) {
        std::ofstream(run_dir + "/history.csv") << history_to_csv(out.result.history);
        save_checkpoint(run_dir + "/checkpoint.mnck", g, state);
    }
    out.state = std::move(state);
    return out;
}

} // namespace

TrainOutput train_model(const ArchGraph& g, const Dataset& train, const Dataset* val,
                        const TrainConfig& cfg, const std::string& run_dir) {
    if (cfg.precision == Precision::F64) return train_impl<double>(g, train, val, cfg, run_dir);
    return train_impl<float>(g, train, val, cfg, run_dir);
}

double evaluate_accuracy(const ArchGraph& g, ModelStateF& state, const Dataset& ds, int batch_size,
                         AggregationMode mode) {
    return eval_accuracy_impl(g, state, ds, batch_size, mode);
}
double evaluate_accuracy(const ArchGraph& g, ModelStateD& state, const Dataset& ds, int batch_size,
                         AggregationMode mode) {
    return eval_accuracy_impl(g, state, ds, batch_size, mode);
}

std::string history_to_csv(const std::vector<EpochRow>& rows) {
    std::ostringstream os;
    os << "epoch,lr,train_loss,train_acc,val_acc\n";
    os.precision(8);
    for (const auto& r : rows) {
        os << r.epoch << ',' << r.lr << ',' << r.train_loss << ',' << r.train_acc << ',';
        if (r.val_acc >= 0) os << r.val_acc;
        os << '\n';
    }
    return os.str();
}

} // namespace mnlab
