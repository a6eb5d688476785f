#pragma once

#include "pfsd/autodiff.hpp"
#include "pfsd/nn_ops.hpp"

namespace pfsd {

// Row-stochastic pairwise similarity map: entry (i,j) is how strongly feature
// location i attends to location j, with each row softmax-normalized.
template <std::floating_point T>
struct PfsMap {
    Var<T> m;  // [B, HW, HW]
    size_t h = 0;
    size_t w = 0;

    size_t locations() const { return h * w; }
};

// Learned 1x1 projections for the transformed variant; both map C channels
// down to max(1, C/8).
template <std::floating_point T>
struct CPfsTransforms {
    Conv2dLayer<T> w1;
    Conv2dLayer<T> w2;

    CPfsTransforms() = default;
    explicit CPfsTransforms(int channels)
        : w1(reduced_channels(channels), channels, 1), w2(reduced_channels(channels), channels, 1) {
        if (w1.out_channels() != w2.out_channels()) throw ShapeError("transform width mismatch");
    }

    static int reduced_channels(int c) { return std::max(1, c / 8); }

    void init(Rng& rng) {
        init_params(w1, rng);
        init_params(w2, rng);
    }
};

namespace pfs_detail {

// Shared tail: reshape two projected feature tensors into [B,HW,C] x [B,C,HW],
// take batched inner products, softmax each row.
template <std::floating_point T>
PfsMap<T> similarity_map(Var<T> f1, Var<T> f2) {
    const Shape& s = f1.value().shape();
    const size_t b = s[0], c = s[1], h = s[2], w = s[3];
    const size_t hw = h * w;
    Var<T> rows = transpose_last2(reshape(f1, {b, c, hw}));  // [B, HW, C]
    Var<T> cols = reshape(f2, {b, c, hw});                   // [B, C, HW]
    Var<T> logits = bmm(rows, cols);                         // [B, HW, HW]
    return PfsMap<T>{softmax_rows(logits), h, w};
}

}  // namespace pfs_detail

// Similarity map straight from the raw features.
template <std::floating_point T>
PfsMap<T> s_pfs(Var<T> f_in) {
    if (f_in.value().rank() != 4) throw ShapeError("s_pfs expects [B,C,H,W]");
    if (f_in.value().dim(2) * f_in.value().dim(3) == 0) throw ShapeError("s_pfs on empty map");
    return pfs_detail::similarity_map(f_in, f_in);
}

template <std::floating_point T>
PfsMap<T> c_pfs(Var<T> f_in, Var<T> w1_weight, Var<T> w1_bias, Var<T> w2_weight, Var<T> w2_bias,
                const CPfsTransforms<T>& t) {
    if (f_in.value().rank() != 4) throw ShapeError("c_pfs expects [B,C,H,W]");
    if (static_cast<int>(f_in.value().dim(1)) != t.w1.in_channels())
        throw ShapeError("c_pfs transform expects " + std::to_string(t.w1.in_channels()) +
                         " channels, got " + std::to_string(f_in.value().dim(1)));
    Var<T> f1 = conv2d(f_in, w1_weight, w1_bias, t.w1);
    Var<T> f2 = conv2d(f_in, w2_weight, w2_bias, t.w2);
    return pfs_detail::similarity_map(f1, f2);
}

// Mean over batch of the per-image row-wise L1 distance, divided by the
// number of locations.
template <std::floating_point T>
Var<T> pfs_loss(const PfsMap<T>& teacher, const PfsMap<T>& student) {
    const Shape& st = teacher.m.value().shape();
    const Shape& ss = student.m.value().shape();
    if (st != ss)
        throw ShapeError("pfs maps differ: " + shape_str(st) + " vs " + shape_str(ss) +
                         " (teacher/student feature resolutions are incompatible)");
    const size_t b = st[0], hw = st[1];
    Var<T> total = sum_all(abs(sub(teacher.m, student.m)));
    return scale(total, T(1) / (static_cast<T>(hw) * static_cast<T>(b)));
}

// Residual re-weighting of the features by their similarity map:
// out = f + gamma * (f M^T), with f viewed as [C, HW] per image.
template <std::floating_point T>
Var<T> augment(Var<T> f_in, const PfsMap<T>& map, Var<T> gamma) {
    const Shape& s = f_in.value().shape();
    if (s.size() != 4) throw ShapeError("augment expects [B,C,H,W]");
    const size_t b = s[0], c = s[1], h = s[2], w = s[3];
    if (map.h != h || map.w != w || map.m.value().dim(0) != b)
        throw ShapeError("augment map does not match features: " +
                         shape_str(map.m.value().shape()) + " vs " + shape_str(s));
    Var<T> flat = reshape(f_in, {b, c, h * w});
    Var<T> mixed = bmm(flat, transpose_last2(map.m));
    Var<T> out = add(flat, scale_var(mixed, gamma));
    return reshape(out, {b, c, h, w});
}

}  // namespace pfsd
