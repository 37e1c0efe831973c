// Copyright 2026 the mnlab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Training protocol: decoupled-weight-decay adaptive optimizer (or
// momentum SGD), cosine annealing over total steps, batch-scaled maximum
// learning rate, IPC-scaled epoch count, loss on the aggregated output.

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "mnlab/arch.hpp"
#include "mnlab/data.hpp"
#include "mnlab/executor.hpp"

namespace mnlab {

enum class OptimizerKind { AdaptiveDecoupled, MomentumSGD };
enum class AggregationMode { Logits, Probs };
enum class Precision { F32, F64 };

struct TrainConfig {
    int batch_size = 128;
    double max_lr = 0.0;       // 0 = max_lr_for_batch(batch_size)
    double weight_decay = 5e-2;
    int epochs = 0;            // 0 = epochs_for_ipc(train ipc)
    std::uint64_t seed = 0;
    OptimizerKind optimizer = OptimizerKind::AdaptiveDecoupled;
    Precision precision = Precision::F32;
    bool augment = true;
    AggregationMode aggregation = AggregationMode::Logits;
    double momentum = 0.9; // MomentumSGD
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int checkpoint_every = 0; // extra periodic checkpoints; 0 = final only

    void validate() const;
};

TrainConfig train_config_from_json(const std::string& json_text);
std::string train_config_to_json(const TrainConfig& cfg);

/// max_lr = 5e-3 * batch/128.
double max_lr_for_batch(int batch_size);

/// 200 for ipc >= 100, else nearest integer of 200*(100/ipc).
int epochs_for_ipc(int ipc);

/// max_lr * (1 + cos(pi * step / total)) / 2; step must be in [0, total].
double cosine_lr(std::int64_t step, std::int64_t total_steps, double max_lr);

/// One decoupled-decay adaptive update on a flat parameter array.
/// step_num is 1-based (bias correction). decay = 0 disables the
/// multiplicative shrink for that tensor.
template <typename T>
void adamw_update(T* p, const T* g, T* m, T* v, std::size_t n, double lr, double decay, double beta1,
                  double beta2, double eps, std::int64_t step_num) {
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_num));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_num));
    for (std::size_t i = 0; i < n; ++i) {
        const double gi = static_cast<double>(g[i]);
        const double mi = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * gi;
        const double vi = beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        double pi = static_cast<double>(p[i]) * (1.0 - lr * decay);
        pi -= lr * mhat / (std::sqrt(vhat) + eps);
        p[i] = static_cast<T>(pi);
    }
}

template <typename T>
void sgd_update(T* p, const T* g, T* m, std::size_t n, double lr, double decay, double momentum) {
    for (std::size_t i = 0; i < n; ++i) {
        const double mi = momentum * static_cast<double>(m[i]) + static_cast<double>(g[i]);
        m[i] = static_cast<T>(mi);
        double pi = static_cast<double>(p[i]) * (1.0 - lr * decay);
        pi -= lr * mi;
        p[i] = static_cast<T>(pi);
    }
}

/// Optimizer moment buffers, shape-matching the trainable parameters.
template <typename T>
struct OptStateT {
    std::map<std::string, LayerParamsT<T>> m1, m2;
    std::int64_t step_count = 0;
};

/// Applies one optimizer step in place. Weight decay touches conv/dense
/// weight tensors only; biases and norm affine are excluded.
template <typename T>
void optimizer_step(const ArchGraph& g, ModelStateT<T>& state, const GradientsT<T>& grads,
                    OptStateT<T>& opt, const TrainConfig& cfg, double lr);

struct EpochRow {
    int epoch = 0;
    double lr = 0;
    double train_loss = 0;
    double train_acc = 0;
    double val_acc = -1; // -1 = not evaluated
};

struct TrainResult {
    std::vector<EpochRow> history;
    double final_train_acc = 0; // eval-mode pass over the train set
    double final_val_acc = -1;
    std::int64_t total_steps = 0;
};

struct TrainOutput {
    TrainResult result;
    std::variant<ModelStateF, ModelStateD> state;
    ChannelStats stats; // standardization constants (from the train split)
};

/// Trains on raw [0,1] datasets; standardization constants are computed
/// from the train split and reused for validation. If run_dir is
/// nonempty, writes config.json, history.csv and checkpoint.mnck there.
/// Throws Error{Numeric} naming the step if the loss goes non-finite.
TrainOutput train_model(const ArchGraph& g, const Dataset& train, const Dataset* val,
                        const TrainConfig& cfg, const std::string& run_dir);

/// Eval-mode accuracy over a standardized dataset.
double evaluate_accuracy(const ArchGraph& g, ModelStateF& state, const Dataset& ds, int batch_size,
                         AggregationMode mode);
double evaluate_accuracy(const ArchGraph& g, ModelStateD& state, const Dataset& ds, int batch_size,
                         AggregationMode mode);

std::string history_to_csv(const std::vector<EpochRow>& rows);

} // namespace mnlab
