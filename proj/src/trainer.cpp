#include "pfsd/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace pfsd {

const char* to_string(DistillMode m) {
    switch (m) {
        case DistillMode::none: return "none";
        case DistillMode::pfs: return "pfs";
        case DistillMode::gap: return "gap";
        case DistillMode::pfs_gap: return "pfs+gap";
        case DistillMode::post_softmax: return "post_softmax";
        case DistillMode::hint: return "hint";
        case DistillMode::attention: return "attention";
    }
    return "?";
}

DistillMode distill_mode_from_string(const std::string& s) {
    if (s == "none") return DistillMode::none;
    if (s == "pfs") return DistillMode::pfs;
    if (s == "gap") return DistillMode::gap;
    if (s == "pfs+gap") return DistillMode::pfs_gap;
    if (s == "post_softmax") return DistillMode::post_softmax;
    if (s == "hint") return DistillMode::hint;
    if (s == "attention") return DistillMode::attention;
    throw ConfigError("unknown distill mode '" + s + "'");
}

bool mode_needs_teacher(DistillMode m) { return m != DistillMode::none; }

double poly_lr(double base_lr, long iter, long total_iter) {
    if (total_iter <= 0) throw ConfigError("poly_lr: total_iter must be > 0");
    if (iter < 0 || iter > total_iter) throw ConfigError("poly_lr: iter out of range");
    return base_lr * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(total_iter), 0.9);
}

void TrainConfig::validate(bool is_distill) const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (dtype != "f32" && dtype != "f64") throw ConfigError("dtype must be f32 or f64");
    if (dataset_dir.empty()) throw ConfigError("dataset path missing");
    if (out_dir.empty()) throw ConfigError("output path missing");
    loss.validate();
    optim.validate();
    arch.validate();
    if (is_distill && mode_needs_teacher(mode) && teacher_checkpoint.empty())
        throw ConfigError("mode '" + std::string(to_string(mode)) + "' needs a teacher checkpoint");
    if ((mode == DistillMode::pfs || mode == DistillMode::pfs_gap) &&
        arch.pfs_variant == PfsVariant::none)
        throw ConfigError("pfs distillation needs a student with a pfs layer");
}

namespace {

std::string iso_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof(buf), "%FT%TZ", std::gmtime(&t));
    return buf;
}

// Per-step loss pieces; soft and pfs are the raw terms before mu / lambda.
struct StepLossValues {
    double hard = 0.0;
    double soft = 0.0;
    double pfs = 0.0;
    double total = 0.0;
};

template <std::floating_point T>
struct TeacherOutputs {
    Tensor<T> logits;
    Tensor<T> feat;
    Tensor<T> pfs_m;
    size_t fh = 0, fw = 0;
};

template <std::floating_point T>
struct StepLoss {
    Var<T> total;
    StepLossValues values;
};

template <std::floating_point T>
StepLoss<T> build_step_loss(Tape<T>& tape, ForwardResult<T>& student,
                            const TeacherOutputs<T>& teacher, const Tensor<uint8_t>& labels,
                            const TrainConfig& cfg, std::optional<Var<T>> adapter_w,
                            std::optional<Var<T>> adapter_b, const Conv2dLayer<T>* adapter) {
    StepLoss<T> out{};
    const LossConfig& lc = cfg.loss;
    switch (cfg.mode) {
        case DistillMode::none: {
            out.total = hard_ce(student.logits, labels, lc);
            out.values.hard = static_cast<double>(out.total.value().item());
            break;
        }
        case DistillMode::pfs: {
            Var<T> hard = hard_ce(student.logits, labels, lc);
            PfsMap<T> tm{tape.constant(teacher.pfs_m), teacher.fh, teacher.fw};
            Var<T> lp = pfs_loss(tm, *student.pfs);
            out.total = add(hard, scale(lp, static_cast<T>(lc.lambda)));
            out.values.hard = static_cast<double>(hard.value().item());
            out.values.pfs = static_cast<double>(lp.value().item());
            break;
        }
        case DistillMode::gap: {
            ClsLoss<T> cls = kd_pixel_loss(student.logits, teacher.logits, labels, lc);
            out.total = cls.total;
            out.values.hard = static_cast<double>(cls.hard.value().item());
            out.values.soft = static_cast<double>(cls.soft.value().item());
            break;
        }
        case DistillMode::pfs_gap: {
            PfsMap<T> tm{tape.constant(teacher.pfs_m), teacher.fh, teacher.fw};
            TotalLoss<T> tl =
                total_loss(student.logits, *student.pfs, teacher.logits, tm, labels, lc);
            out.total = tl.total;
            out.values.hard = static_cast<double>(tl.hard.value().item());
            out.values.soft = static_cast<double>(tl.soft->value().item());
            out.values.pfs = static_cast<double>(tl.pfs->value().item());
            break;
        }
        case DistillMode::post_softmax: {
            ClsLoss<T> cls = baseline_post_softmax(student.logits, teacher.logits, labels, lc);
            out.total = cls.total;
            out.values.hard = static_cast<double>(cls.hard.value().item());
            out.values.soft = static_cast<double>(cls.soft.value().item());
            break;
        }
        case DistillMode::hint: {
            Var<T> hard = hard_ce(student.logits, labels, lc);
            Var<T> hint = baseline_hint(student.feat, teacher.feat, *adapter_w, *adapter_b,
                                        *adapter);
            out.total = add(hard, scale(hint, static_cast<T>(lc.mu)));
            out.values.hard = static_cast<double>(hard.value().item());
            out.values.soft = static_cast<double>(hint.value().item());
            break;
        }
        case DistillMode::attention: {
            Var<T> hard = hard_ce(student.logits, labels, lc);
            Var<T> att = baseline_attention(student.feat, teacher.feat);
            out.total = add(hard, scale(att, static_cast<T>(lc.mu)));
            out.values.hard = static_cast<double>(hard.value().item());
            out.values.soft = static_cast<double>(att.value().item());
            break;
        }
    }
    out.values.total = static_cast<double>(out.total.value().item());

    // The logged columns must re-assemble into the optimized total.
    const double recon =
        out.values.hard + cfg.loss.mu * out.values.soft + cfg.loss.lambda * out.values.pfs;
    const double tol = cfg.dtype == "f64" ? 1e-9 : 1e-4 * std::max(1.0, std::fabs(recon));
    if (std::fabs(recon - out.values.total) > tol)
        throw NumericError("loss breakdown does not reconcile with the total");
    return out;
}

template <std::floating_point T>
TrainResult run_training(const TrainConfig& cfg, bool is_distill) {
    cfg.validate(is_distill);
    fs::create_directories(cfg.out_dir);

    Dataset train = load_split(cfg.dataset_dir, "train");
    Dataset val = load_split(cfg.dataset_dir, "val");
    if (train.spec.image_size % cfg.arch.output_stride() != 0)
        throw ConfigError("image size " + std::to_string(train.spec.image_size) +
                          " not divisible by output stride " +
                          std::to_string(cfg.arch.output_stride()));

    Network<T> net = Network<T>::build(cfg.arch, derive_seed(cfg.seed, 0xA11));

    std::optional<Network<T>> teacher;
    TrainResult result;
    const bool with_teacher = is_distill && mode_needs_teacher(cfg.mode);
    if (with_teacher) {
        teacher.emplace(load_checkpoint<T>(cfg.teacher_checkpoint));
        result.teacher_hash_before = param_hash(*teacher);
        if (teacher->spec().output_stride() != cfg.arch.output_stride())
            throw ConfigError("teacher/student output strides differ, features incompatible");
        if (teacher->spec().num_classes != cfg.arch.num_classes)
            throw ConfigError("teacher/student class counts differ");
        if ((cfg.mode == DistillMode::pfs || cfg.mode == DistillMode::pfs_gap) &&
            teacher->spec().pfs_variant == PfsVariant::none)
            throw ConfigError("pfs distillation needs a teacher with a pfs layer");
    }

    // Optimizer state covers the student and, in hint mode, the adapter.
    std::optional<Conv2dLayer<T>> adapter;
    if (with_teacher && cfg.mode == DistillMode::hint) {
        adapter.emplace(teacher->spec().feature_channels(), cfg.arch.feature_channels(), 1);
        Rng arng(derive_seed(cfg.seed, 0xADA));
        init_params(*adapter, arng);
    }
    auto gather_params = [&]() {
        std::vector<NamedParam<T>> ps = net.params();
        if (adapter) {
            ps.push_back({"adapter.weight", &adapter->weight, true});
            ps.push_back({"adapter.bias", &adapter->bias, false});
        }
        return ps;
    };
    std::vector<NamedParam<T>> params = gather_params();
    std::vector<Tensor<T>> velocity;
    for (const auto& p : params) velocity.emplace_back(p.tensor->shape());

    const size_t n_train = train.samples.size();
    const size_t batches_per_epoch =
        (n_train + static_cast<size_t>(cfg.batch_size) - 1) / static_cast<size_t>(cfg.batch_size);
    const long total_iters = static_cast<long>(batches_per_epoch) * cfg.epochs;

    result.steps_csv_path = (fs::path(cfg.out_dir) / "steps.csv").string();
    result.epochs_csv_path = (fs::path(cfg.out_dir) / "epochs.csv").string();
    result.checkpoint_path = (fs::path(cfg.out_dir) / "best.pfck").string();
    std::ofstream steps(result.steps_csv_path);
    std::ofstream epochs(result.epochs_csv_path);
    if (!steps || !epochs) throw IoError("cannot write logs under " + cfg.out_dir);
    steps << "# pfsdistill steps mode=" << to_string(cfg.mode) << " generated " << iso_now()
          << "\n";
    steps << "step,lr,L_hard,L_soft_weighted,L_pfs,L_total\n";
    epochs << "# pfsdistill epochs mode=" << to_string(cfg.mode) << " generated " << iso_now()
           << "\n";
    epochs << "epoch,train_loss,val_miou,val_pixel_acc,is_best\n";

    char row[256];
    long it = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const uint64_t epoch_seed = derive_seed(cfg.seed, 0xE60ULL + static_cast<uint64_t>(epoch));
        auto plan = batch_plan(n_train, static_cast<size_t>(cfg.batch_size), epoch_seed);
        double epoch_loss = 0.0;
        for (const auto& idx : plan) {
            SegBatch<T> batch = load_batch<T>(train, idx, /*augment=*/true, epoch_seed);

            TeacherOutputs<T> tout;
            if (with_teacher) {
                Tape<T> scratch;
                auto tf = teacher->forward(scratch, batch.images, /*with_grad=*/false);
                tout.logits = tf.logits.value();
                tout.feat = tf.feat.value();
                if (tf.pfs) {
                    tout.pfs_m = tf.pfs->m.value();
                    tout.fh = tf.pfs->h;
                    tout.fw = tf.pfs->w;
                }
            }

            Tape<T> tape;
            ForwardResult<T> sf = net.forward(tape, batch.images, /*with_grad=*/true);
            std::optional<Var<T>> aw, ab;
            if (adapter) {
                aw = tape.leaf(adapter->weight, true);
                ab = tape.leaf(adapter->bias, true);
            }
            StepLoss<T> loss = build_step_loss(tape, sf, tout, batch.labels, cfg, aw, ab,
                                               adapter ? &*adapter : nullptr);
            tape.backward(loss.total);

            std::vector<Tensor<T>> grads;
            grads.reserve(params.size());
            for (const auto& v : sf.param_vars) grads.push_back(v.grad());
            if (adapter) {
                grads.push_back(aw->grad());
                grads.push_back(ab->grad());
            }
            const double lr = poly_lr(cfg.optim.base_lr, it, total_iters);
            sgd_step(params, grads, velocity, lr, cfg.optim.momentum, cfg.optim.weight_decay);

            std::snprintf(row, sizeof(row), "%ld,%.17g,%.17g,%.17g,%.17g,%.17g\n", it, lr,
                          loss.values.hard, loss.values.soft, loss.values.pfs, loss.values.total);
            steps << row;
            epoch_loss += loss.values.total;
            ++it;
        }

        const MiouResult m = evaluate_network(net, val, cfg.batch_size);
        const bool is_best = m.mean_iou > result.best_val_miou || result.best_epoch < 0;
        if (is_best) {
            result.best_val_miou = m.mean_iou;
            result.best_epoch = epoch;
            save_checkpoint(net, result.checkpoint_path);
        }
        result.final_val_miou = m.mean_iou;
        std::snprintf(row, sizeof(row), "%d,%.17g,%.17g,%.17g,%d\n", epoch,
                      epoch_loss / static_cast<double>(plan.size()), m.mean_iou, m.pixel_acc,
                      is_best ? 1 : 0);
        epochs << row;
    }
    steps.flush();
    epochs.flush();
    if (!steps || !epochs) throw IoError("failed writing logs under " + cfg.out_dir);

    if (with_teacher) {
        result.teacher_hash_after = param_hash(*teacher);
        if (result.teacher_hash_after != result.teacher_hash_before)
            throw Error("teacher parameters changed during distillation");
    }
    return result;
}

TrainResult dispatch(const TrainConfig& cfg, bool is_distill) {
    if (cfg.dtype == "f32") return run_training<float>(cfg, is_distill);
    return run_training<double>(cfg, is_distill);
}

}  // namespace

TrainResult train_teacher(const TrainConfig& cfg) {
    TrainConfig c = cfg;
    c.mode = DistillMode::none;
    return dispatch(c, /*is_distill=*/false);
}

TrainResult distill(const TrainConfig& cfg) { return dispatch(cfg, /*is_distill=*/true); }

MiouResult evaluate_checkpoint(const std::string& checkpoint_path, const std::string& dataset_dir,
                               const std::string& split, int batch_size) {
    Network<double> net = load_checkpoint<double>(checkpoint_path);
    Dataset ds = load_split(dataset_dir, split);
    return evaluate_network(net, ds, batch_size);
}

}  // namespace pfsd
