#pragma once

#include <optional>
#include <string>

#include "pfsd/data.hpp"
#include "pfsd/losses.hpp"
#include "pfsd/metrics.hpp"
#include "pfsd/models.hpp"

namespace pfsd {

enum class DistillMode { none, pfs, gap, pfs_gap, post_softmax, hint, attention };

const char* to_string(DistillMode m);
DistillMode distill_mode_from_string(const std::string& s);
bool mode_needs_teacher(DistillMode m);

struct OptimConfig {
    double base_lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;

    void validate() const {
        if (base_lr <= 0) throw ConfigError("optim.base_lr must be > 0");
        if (momentum < 0 || momentum >= 1) throw ConfigError("optim.momentum must be in [0,1)");
        if (weight_decay < 0) throw ConfigError("optim.weight_decay must be >= 0");
    }
};

// base_lr * (1 - iter/total_iter)^0.9, recomputed every iteration.
double poly_lr(double base_lr, long iter, long total_iter);

struct TrainConfig {
    int epochs = 60;
    int batch_size = 8;
    LossConfig loss;
    DistillMode mode = DistillMode::none;
    uint64_t seed = 1;
    std::string dtype = "f64";  // f32 | f64
    std::string dataset_dir;
    std::string out_dir;
    std::string teacher_checkpoint;
    OptimConfig optim;
    SegNetSpec arch = SegNetSpec::student_default();

    void validate(bool is_distill) const;
};

inline TrainConfig default_teacher_config() {
    TrainConfig cfg;
    cfg.arch = SegNetSpec::teacher_default();
    cfg.mode = DistillMode::none;
    return cfg;
}

inline TrainConfig default_student_config() {
    TrainConfig cfg;
    cfg.arch = SegNetSpec::student_default();
    cfg.mode = DistillMode::pfs_gap;
    return cfg;
}

struct TrainResult {
    double best_val_miou = 0.0;
    int best_epoch = -1;
    double final_val_miou = 0.0;
    std::string checkpoint_path;
    std::string steps_csv_path;
    std::string epochs_csv_path;
    uint64_t teacher_hash_before = 0;
    uint64_t teacher_hash_after = 0;
};

// Plain hard-CE training of cfg.arch (the distillation terms are off).
TrainResult train_teacher(const TrainConfig& cfg);

// Frozen-teacher distillation per cfg.mode; mode none degenerates to
// train_teacher on the student architecture.
TrainResult distill(const TrainConfig& cfg);

MiouResult evaluate_checkpoint(const std::string& checkpoint_path, const std::string& dataset_dir,
                               const std::string& split, int batch_size = 8);

// ---------------------------------------------------------------------------
// Pieces shared with the tests.

// v <- momentum*v + grad + weight_decay*param ; param <- param - lr*v.
// Decay is skipped for parameters flagged decay=false (biases, gamma).
template <std::floating_point T>
void sgd_step(std::vector<NamedParam<T>>& params, const std::vector<Tensor<T>>& grads,
              std::vector<Tensor<T>>& velocity, double lr, double momentum, double weight_decay) {
    if (params.size() != grads.size() || params.size() != velocity.size())
        throw ShapeError("sgd_step: params/grads/velocity size mismatch");
    const T lr_t = static_cast<T>(lr);
    const T mom_t = static_cast<T>(momentum);
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& p = *params[i].tensor;
        Tensor<T>& v = velocity[i];
        const Tensor<T>& g = grads[i];
        if (!p.same_shape(g) || !p.same_shape(v))
            throw ShapeError("sgd_step: shape mismatch for " + params[i].name);
        const T wd_t = params[i].decay ? static_cast<T>(weight_decay) : T(0);
        for (size_t k = 0; k < p.numel(); ++k) {
            v[k] = mom_t * v[k] + g[k] + wd_t * p[k];
            p[k] -= lr_t * v[k];
        }
    }
}

template <std::floating_point T>
MiouResult evaluate_network(Network<T>& net, const Dataset& val, int batch_size,
                            int ignore_index = kIgnoreIndex) {
    ConfusionMatrix cm(net.spec().num_classes);
    const size_t n = val.samples.size();
    const size_t bs = std::min<size_t>(static_cast<size_t>(batch_size), n);
    for (size_t start = 0; start < n; start += bs) {
        std::vector<size_t> idx;
        for (size_t i = start; i < std::min(n, start + bs); ++i) idx.push_back(i);
        SegBatch<T> batch = load_batch<T>(val, idx, /*augment=*/false, 0);
        Tape<T> tape;
        auto out = net.forward(tape, batch.images, /*with_grad=*/false);
        cm.accumulate(argmax_channels(out.logits.value()), batch.labels, ignore_index);
    }
    return cm.miou();
}

}  // namespace pfsd
