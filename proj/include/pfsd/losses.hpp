#pragma once

#include <cstdio>
#include <optional>

#include "pfsd/autodiff.hpp"
#include "pfsd/nn_ops.hpp"
#include "pfsd/pfs.hpp"

namespace pfsd {

enum class PixelReduction { mean, sum };

struct LossConfig {
    double mu = 1.0;
    double lambda = 1e3;
    double temperature = 1.0;
    int ignore_index = 255;
    PixelReduction pixel_reduction = PixelReduction::mean;

    void validate() const {
        if (mu < 0) throw ConfigError("loss.mu must be >= 0");
        if (lambda < 0) throw ConfigError("loss.lambda must be >= 0");
        if (temperature <= 0) throw ConfigError("loss.temperature must be > 0");
    }
};

// Per-pixel weights gating the soft term; zero wherever the teacher is no
// better than the student on the ground-truth class, and at ignored pixels.
template <std::floating_point T>
struct GapWeights {
    Tensor<T> w;  // [B,H,W]
};

namespace loss_detail {

template <std::floating_point T>
void check_logits_labels(const Tensor<T>& logits, const Tensor<uint8_t>& labels,
                         const LossConfig& cfg) {
    if (logits.rank() != 4) throw ShapeError("expected logits [B,c,H,W]");
    if (labels.rank() != 3) throw ShapeError("expected labels [B,H,W]");
    if (labels.dim(0) != logits.dim(0) || labels.dim(1) != logits.dim(2) ||
        labels.dim(2) != logits.dim(3))
        throw ShapeError("labels " + shape_str(labels.shape()) + " do not match logits " +
                         shape_str(logits.shape()));
    const size_t c = logits.dim(1);
    for (size_t i = 0; i < labels.numel(); ++i) {
        const int v = labels[i];
        if (v != cfg.ignore_index && static_cast<size_t>(v) >= c)
            throw ShapeError("label value " + std::to_string(v) + " out of range for " +
                             std::to_string(c) + " classes");
    }
}

// log-softmax over the class axis for one pixel, written into lp.
template <std::floating_point T>
void pixel_log_softmax(const T* z, size_t c, size_t stride, T* lp) {
    T mx = z[0];
    for (size_t i = 1; i < c; ++i) mx = std::max(mx, z[i * stride]);
    T sum = 0;
    for (size_t i = 0; i < c; ++i) sum += std::exp(z[i * stride] - mx);
    const T lse = mx + std::log(sum);
    for (size_t i = 0; i < c; ++i) lp[i] = z[i * stride] - lse;
}

template <std::floating_point T>
size_t count_valid(const Tensor<uint8_t>& labels, int ignore_index) {
    size_t n = 0;
    for (size_t i = 0; i < labels.numel(); ++i)
        if (labels[i] != ignore_index) ++n;
    return n;
}

}  // namespace loss_detail

// Per-pixel class softmax of [B,c,H,W] (optionally temperature-scaled).
template <std::floating_point T>
Tensor<T> softmax_channels(const Tensor<T>& logits, T temperature = T(1)) {
    if (logits.rank() != 4) throw ShapeError("softmax_channels expects [B,c,H,W]");
    ensure_finite(logits, "softmax_channels input");
    const size_t b = logits.dim(0), c = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
    Tensor<T> p(logits.shape());
    std::vector<T> lp(c), scaled(c);
    for (size_t bi = 0; bi < b; ++bi) {
        const T* zb = logits.data() + bi * c * hw;
        T* pb = p.data() + bi * c * hw;
        for (size_t n = 0; n < hw; ++n) {
            for (size_t i = 0; i < c; ++i) scaled[i] = zb[i * hw + n] / temperature;
            loss_detail::pixel_log_softmax(scaled.data(), c, 1, lp.data());
            for (size_t i = 0; i < c; ++i) pb[i * hw + n] = std::exp(lp[i]);
        }
    }
    return p;
}

// Temperature-softened teacher distribution; a plain tensor, never taped.
template <std::floating_point T>
Tensor<T> soft_targets(const Tensor<T>& teacher_logits, T temperature) {
    if (temperature <= T(0)) throw ConfigError("temperature must be > 0");
    return softmax_channels(teacher_logits, temperature);
}

template <std::floating_point T>
GapWeights<T> gap_weights(const Tensor<T>& p_teacher, const Tensor<T>& p_student,
                          const Tensor<uint8_t>& labels, const LossConfig& cfg) {
    if (!p_teacher.same_shape(p_student))
        throw ShapeError("gap_weights distribution shapes differ");
    loss_detail::check_logits_labels(p_teacher, labels, cfg);
    const size_t b = p_teacher.dim(0), c = p_teacher.dim(1),
                 hw = p_teacher.dim(2) * p_teacher.dim(3);
    GapWeights<T> out{Tensor<T>({labels.dim(0), labels.dim(1), labels.dim(2)})};
    for (size_t bi = 0; bi < b; ++bi) {
        const T* pt = p_teacher.data() + bi * c * hw;
        const T* ps = p_student.data() + bi * c * hw;
        for (size_t n = 0; n < hw; ++n) {
            const uint8_t y = labels[bi * hw + n];
            if (y == cfg.ignore_index) continue;
            const T gap = pt[static_cast<size_t>(y) * hw + n] - ps[static_cast<size_t>(y) * hw + n];
            out.w[bi * hw + n] = gap > T(0) ? gap : T(0);
        }
    }
    return out;
}

// Pixel-wise cross entropy against hard labels. Recorded as a single fused op
// with the usual softmax-minus-onehot adjoint.
template <std::floating_point T>
Var<T> hard_ce(Var<T> logits, const Tensor<uint8_t>& labels, const LossConfig& cfg) {
    const Tensor<T>& z = logits.value();
    loss_detail::check_logits_labels(z, labels, cfg);
    const size_t b = z.dim(0), c = z.dim(1), hw = z.dim(2) * z.dim(3);
    const size_t valid = loss_detail::count_valid<T>(labels, cfg.ignore_index);
    if (valid == 0) std::fprintf(stderr, "warning: hard_ce saw no valid pixels\n");

    Tensor<T> probs(z.shape());
    T total = 0;
    std::vector<T> lp(c);
    for (size_t bi = 0; bi < b; ++bi) {
        const T* zb = z.data() + bi * c * hw;
        T* pb = probs.data() + bi * c * hw;
        for (size_t n = 0; n < hw; ++n) {
            loss_detail::pixel_log_softmax(zb + n, c, hw, lp.data());
            for (size_t i = 0; i < c; ++i) pb[i * hw + n] = std::exp(lp[i]);
            const uint8_t y = labels[bi * hw + n];
            if (y != cfg.ignore_index) total -= lp[y];
        }
    }
    const T norm = (cfg.pixel_reduction == PixelReduction::mean && valid > 0)
                       ? T(1) / static_cast<T>(valid)
                       : T(1);
    Tensor<uint8_t> labels_copy = labels;
    const int ignore = cfg.ignore_index;
    return logits.tape->record(
        Tensor<T>::scalar(total * norm), {logits.id},
        [probs, labels_copy, norm, ignore](Tape<T>& tp, int self) {
            const T g = tp.grad(self).item() * norm;
            const int p = tp.parents(self)[0];
            const size_t bs = probs.dim(0), cs = probs.dim(1),
                         hws = probs.dim(2) * probs.dim(3);
            Tensor<T> dz(probs.shape());
            for (size_t bi = 0; bi < bs; ++bi) {
                const T* pb = probs.data() + bi * cs * hws;
                T* db = dz.data() + bi * cs * hws;
                for (size_t n = 0; n < hws; ++n) {
                    const uint8_t y = labels_copy[bi * hws + n];
                    if (y == ignore) continue;
                    for (size_t i = 0; i < cs; ++i) {
                        T v = pb[i * hws + n];
                        if (i == y) v -= T(1);
                        db[i * hws + n] = v * g;
                    }
                }
            }
            tp.accumulate_grad(p, dz);
        });
}

// Weighted soft cross entropy: sum over valid pixels of w_n * H(target_n, p_n),
// reduced like hard_ce. Targets and weights are constants of the graph.
template <std::floating_point T>
Var<T> soft_ce_weighted(Var<T> logits, const Tensor<T>& target_probs, const Tensor<T>& w,
                        const Tensor<uint8_t>& labels, const LossConfig& cfg) {
    const Tensor<T>& z = logits.value();
    loss_detail::check_logits_labels(z, labels, cfg);
    if (!z.same_shape(target_probs))
        throw ShapeError("target distribution shape " + shape_str(target_probs.shape()) +
                         " != logits shape " + shape_str(z.shape()));
    if (w.rank() != 3 || w.dim(0) != z.dim(0) || w.dim(1) != z.dim(2) || w.dim(2) != z.dim(3))
        throw ShapeError("weight map shape " + shape_str(w.shape()) + " does not match logits");
    const size_t b = z.dim(0), c = z.dim(1), hw = z.dim(2) * z.dim(3);
    const size_t valid = loss_detail::count_valid<T>(labels, cfg.ignore_index);

    Tensor<T> probs(z.shape());
    T total = 0;
    std::vector<T> lp(c);
    for (size_t bi = 0; bi < b; ++bi) {
        const T* zb = z.data() + bi * c * hw;
        const T* tb = target_probs.data() + bi * c * hw;
        T* pb = probs.data() + bi * c * hw;
        for (size_t n = 0; n < hw; ++n) {
            loss_detail::pixel_log_softmax(zb + n, c, hw, lp.data());
            for (size_t i = 0; i < c; ++i) pb[i * hw + n] = std::exp(lp[i]);
            const uint8_t y = labels[bi * hw + n];
            if (y == cfg.ignore_index) continue;
            const T wn = w[bi * hw + n];
            if (wn == T(0)) continue;
            T h = 0;
            for (size_t i = 0; i < c; ++i) h -= tb[i * hw + n] * lp[i];
            total += wn * h;
        }
    }
    const T norm = (cfg.pixel_reduction == PixelReduction::mean && valid > 0)
                       ? T(1) / static_cast<T>(valid)
                       : T(1);
    Tensor<T> targets_copy = target_probs;
    Tensor<T> w_copy = w;
    Tensor<uint8_t> labels_copy = labels;
    const int ignore = cfg.ignore_index;
    return logits.tape->record(
        Tensor<T>::scalar(total * norm), {logits.id},
        [probs, targets_copy, w_copy, labels_copy, norm, ignore](Tape<T>& tp, int self) {
            const T g = tp.grad(self).item() * norm;
            const int p = tp.parents(self)[0];
            const size_t bs = probs.dim(0), cs = probs.dim(1),
                         hws = probs.dim(2) * probs.dim(3);
            Tensor<T> dz(probs.shape());
            for (size_t bi = 0; bi < bs; ++bi) {
                const T* pb = probs.data() + bi * cs * hws;
                const T* tb = targets_copy.data() + bi * cs * hws;
                T* db = dz.data() + bi * cs * hws;
                for (size_t n = 0; n < hws; ++n) {
                    const uint8_t y = labels_copy[bi * hws + n];
                    if (y == ignore) continue;
                    const T wn = w_copy[bi * hws + n];
                    if (wn == T(0)) continue;
                    for (size_t i = 0; i < cs; ++i)
                        db[i * hws + n] = wn * (pb[i * hws + n] - tb[i * hws + n]) * g;
                }
            }
            tp.accumulate_grad(p, dz);
        });
}

// L_cls and its pieces; `soft` is the w-weighted soft term before mu.
template <std::floating_point T>
struct ClsLoss {
    Var<T> total;
    Var<T> hard;
    Var<T> soft;
    Tensor<T> weights;  // the w_n actually used
};

// Knowledge-gap weighted pixel loss with caller-supplied weights. The weights
// are constants of the graph, which is also what makes this form checkable by
// finite differences.
template <std::floating_point T>
ClsLoss<T> kd_pixel_loss_with_weights(Var<T> student_logits, const Tensor<T>& teacher_probs,
                                      const Tensor<uint8_t>& labels, const Tensor<T>& w,
                                      const LossConfig& cfg) {
    Var<T> hard = hard_ce(student_logits, labels, cfg);
    Var<T> soft = soft_ce_weighted(student_logits, teacher_probs, w, labels, cfg);
    Var<T> total = add(hard, scale(soft, static_cast<T>(cfg.mu)));
    return {total, hard, soft, w};
}

// Full pixel loss: weights derived from the current teacher/student
// ground-truth-class probabilities, then treated as constants.
template <std::floating_point T>
ClsLoss<T> kd_pixel_loss(Var<T> student_logits, const Tensor<T>& teacher_logits,
                         const Tensor<uint8_t>& labels, const LossConfig& cfg) {
    if (!student_logits.value().same_shape(teacher_logits))
        throw ShapeError("teacher logits " + shape_str(teacher_logits.shape()) +
                         " != student logits " + shape_str(student_logits.value().shape()));
    Tensor<T> p_t = soft_targets(teacher_logits, static_cast<T>(cfg.temperature));
    Tensor<T> p_s = softmax_channels(student_logits.value());
    GapWeights<T> gw = gap_weights(p_t, p_s, labels, cfg);
    return kd_pixel_loss_with_weights(student_logits, p_t, labels, gw.w, cfg);
}

template <std::floating_point T>
struct TotalLoss {
    Var<T> total;
    Var<T> hard;
    std::optional<Var<T>> soft;  // before mu
    std::optional<Var<T>> pfs;   // before lambda
    Tensor<T> weights;
};

// L = L_cls + lambda * L_pfs.
template <std::floating_point T>
TotalLoss<T> total_loss(Var<T> student_logits, const PfsMap<T>& student_pfs,
                        const Tensor<T>& teacher_logits, const PfsMap<T>& teacher_pfs,
                        const Tensor<uint8_t>& labels, const LossConfig& cfg) {
    ClsLoss<T> cls = kd_pixel_loss(student_logits, teacher_logits, labels, cfg);
    Var<T> lp = pfs_loss(teacher_pfs, student_pfs);
    Var<T> total = add(cls.total, scale(lp, static_cast<T>(cfg.lambda)));
    return {total, cls.hard, cls.soft, lp, cls.weights};
}

// Unweighted soft mimic baseline: every valid pixel gets weight 1.
template <std::floating_point T>
ClsLoss<T> baseline_post_softmax(Var<T> student_logits, const Tensor<T>& teacher_logits,
                                 const Tensor<uint8_t>& labels, const LossConfig& cfg) {
    Tensor<T> p_t = soft_targets(teacher_logits, static_cast<T>(cfg.temperature));
    const Tensor<T>& z = student_logits.value();
    Tensor<T> ones = Tensor<T>::full({z.dim(0), z.dim(2), z.dim(3)}, T(1));
    return kd_pixel_loss_with_weights(student_logits, p_t, labels, ones, cfg);
}

// Feature mimicking through a learned 1x1 adapter, mean squared error.
template <std::floating_point T>
Var<T> baseline_hint(Var<T> student_feat, const Tensor<T>& teacher_feat, Var<T> adapter_weight,
                     Var<T> adapter_bias, const Conv2dLayer<T>& adapter) {
    const Tensor<T>& sf = student_feat.value();
    if (sf.rank() != 4 || teacher_feat.rank() != 4 || sf.dim(0) != teacher_feat.dim(0) ||
        sf.dim(2) != teacher_feat.dim(2) || sf.dim(3) != teacher_feat.dim(3))
        throw ShapeError("hint features spatially incompatible: " + shape_str(sf.shape()) +
                         " vs " + shape_str(teacher_feat.shape()));
    Var<T> adapted = conv2d(student_feat, adapter_weight, adapter_bias, adapter);
    if (!adapted.value().same_shape(teacher_feat))
        throw ShapeError("adapter output " + shape_str(adapted.value().shape()) +
                         " != teacher features " + shape_str(teacher_feat.shape()));
    Var<T> diff = sub(adapted, student_feat.tape->constant(teacher_feat));
    return mean_all(mul(diff, diff));
}

// Channel-mean attention map, flattened and L2-normalized per image.
template <std::floating_point T>
Tensor<T> attention_map(const Tensor<T>& feat) {
    if (feat.rank() != 4) throw ShapeError("attention_map expects [B,C,H,W]");
    const size_t b = feat.dim(0), c = feat.dim(1), hw = feat.dim(2) * feat.dim(3);
    Tensor<T> out({b, hw});
    for (size_t bi = 0; bi < b; ++bi) {
        T* row = out.data() + bi * hw;
        const T* fb = feat.data() + bi * c * hw;
        for (size_t ci = 0; ci < c; ++ci)
            for (size_t n = 0; n < hw; ++n) row[n] += fb[ci * hw + n];
        T ss = 0;
        for (size_t n = 0; n < hw; ++n) {
            row[n] /= static_cast<T>(c);
            ss += row[n] * row[n];
        }
        const T norm = std::sqrt(ss);
        if (norm > T(0))
            for (size_t n = 0; n < hw; ++n) row[n] /= norm;
        else
            for (size_t n = 0; n < hw; ++n) row[n] = T(0);
    }
    return out;
}

// Attention transfer: mean squared difference of normalized attention maps.
// Channel counts may differ; spatial dims must match.
template <std::floating_point T>
Var<T> baseline_attention(Var<T> student_feat, const Tensor<T>& teacher_feat) {
    const Tensor<T>& sf = student_feat.value();
    if (sf.rank() != 4 || teacher_feat.rank() != 4 || sf.dim(0) != teacher_feat.dim(0) ||
        sf.dim(2) != teacher_feat.dim(2) || sf.dim(3) != teacher_feat.dim(3))
        throw ShapeError("attention features spatially incompatible: " + shape_str(sf.shape()) +
                         " vs " + shape_str(teacher_feat.shape()));
    const size_t b = sf.dim(0), hw = sf.dim(2) * sf.dim(3);
    Var<T> mean_map = reduce_axis(student_feat, 1, Reduce::mean);  // [B,H,W]
    Var<T> flat = reshape(mean_map, {b, hw});
    Var<T> normed = l2_normalize_rows(flat);
    Var<T> target = student_feat.tape->constant(attention_map(teacher_feat));
    Var<T> diff = sub(normed, target);
    return mean_all(mul(diff, diff));
}

}  // namespace pfsd
