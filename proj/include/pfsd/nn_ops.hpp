#pragma once

#include "pfsd/autodiff.hpp"
#include "pfsd/rng.hpp"
#include "pfsd/tensor.hpp"

namespace pfsd {

// "Same" padding for odd kernels at stride 1; also the right choice for the
// stride-2 halving convs used by the backbones.
inline int same_padding(int kernel, int dilation) { return dilation * (kernel - 1) / 2; }

template <std::floating_point T>
struct Conv2dLayer {
    Tensor<T> weight;  // [C_out, C_in, k, k]
    Tensor<T> bias;    // [C_out]
    int stride = 1;
    int dilation = 1;
    int padding = 0;

    Conv2dLayer() = default;
    Conv2dLayer(int c_out, int c_in, int kernel, int stride_ = 1, int dilation_ = 1)
        : weight({static_cast<size_t>(c_out), static_cast<size_t>(c_in),
                  static_cast<size_t>(kernel), static_cast<size_t>(kernel)}),
          bias({static_cast<size_t>(c_out)}),
          stride(stride_),
          dilation(dilation_),
          padding(same_padding(kernel, dilation_)) {}

    int out_channels() const { return static_cast<int>(weight.dim(0)); }
    int in_channels() const { return static_cast<int>(weight.dim(1)); }
    int kernel() const { return static_cast<int>(weight.dim(2)); }
};

// Kaiming-style fan-in scaled uniform weights, zero bias.
template <std::floating_point T>
void init_params(Conv2dLayer<T>& layer, Rng& rng) {
    const double fan_in = static_cast<double>(layer.in_channels()) * layer.kernel() * layer.kernel();
    const double bound = std::sqrt(6.0 / fan_in);
    for (size_t i = 0; i < layer.weight.numel(); ++i)
        layer.weight[i] = static_cast<T>(rng.uniform(-bound, bound));
    for (size_t i = 0; i < layer.bias.numel(); ++i) layer.bias[i] = T(0);
}

inline size_t conv_out_extent(size_t in, int kernel, int stride, int dilation, int padding,
                              const char* what) {
    const long eff = static_cast<long>(dilation) * (kernel - 1) + 1;
    const long out = (static_cast<long>(in) + 2L * padding - eff) / stride + 1;
    if (out < 1)
        throw ShapeError(std::string(what) + ": degenerate output extent (input " +
                         std::to_string(in) + ", effective kernel " + std::to_string(eff) + ")");
    return static_cast<size_t>(out);
}

namespace detail {

// x image [C,H,W] -> cols [C*k*k, Ho*Wo], zero padded.
template <std::floating_point T>
void im2col(const T* x, size_t c_in, size_t h, size_t w, int kernel, int stride, int dilation,
            int padding, size_t ho, size_t wo, T* cols) {
    const size_t patch = static_cast<size_t>(kernel) * kernel;
    for (size_t ci = 0; ci < c_in; ++ci) {
        const T* img = x + ci * h * w;
        for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) {
                T* row = cols + (ci * patch + static_cast<size_t>(ky) * kernel + kx) * ho * wo;
                for (size_t oy = 0; oy < ho; ++oy) {
                    const long iy =
                        static_cast<long>(oy) * stride - padding + static_cast<long>(ky) * dilation;
                    if (iy < 0 || iy >= static_cast<long>(h)) {
                        for (size_t ox = 0; ox < wo; ++ox) row[oy * wo + ox] = T(0);
                        continue;
                    }
                    const T* src = img + static_cast<size_t>(iy) * w;
                    for (size_t ox = 0; ox < wo; ++ox) {
                        const long ix = static_cast<long>(ox) * stride - padding +
                                        static_cast<long>(kx) * dilation;
                        row[oy * wo + ox] =
                            (ix >= 0 && ix < static_cast<long>(w)) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

// Scatter-add of cols back into an image; adjoint of im2col.
template <std::floating_point T>
void col2im_acc(const T* cols, size_t c_in, size_t h, size_t w, int kernel, int stride,
                int dilation, int padding, size_t ho, size_t wo, T* x) {
    const size_t patch = static_cast<size_t>(kernel) * kernel;
    for (size_t ci = 0; ci < c_in; ++ci) {
        T* img = x + ci * h * w;
        for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) {
                const T* row = cols + (ci * patch + static_cast<size_t>(ky) * kernel + kx) * ho * wo;
                for (size_t oy = 0; oy < ho; ++oy) {
                    const long iy =
                        static_cast<long>(oy) * stride - padding + static_cast<long>(ky) * dilation;
                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                    T* dst = img + static_cast<size_t>(iy) * w;
                    for (size_t ox = 0; ox < wo; ++ox) {
                        const long ix = static_cast<long>(ox) * stride - padding +
                                        static_cast<long>(kx) * dilation;
                        if (ix >= 0 && ix < static_cast<long>(w)) dst[ix] += row[oy * wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// Cross-correlation (no kernel flip), zero padding, bias per output channel.
template <std::floating_point T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                         int stride, int dilation, int padding) {
    if (x.rank() != 4 || weight.rank() != 4)
        throw ShapeError("conv2d expects [B,C,H,W] input and [Co,Ci,k,k] weight");
    if (x.dim(1) != weight.dim(1))
        throw ShapeError("conv2d channel mismatch: input has " + std::to_string(x.dim(1)) +
                         ", weight expects " + std::to_string(weight.dim(1)));
    if (weight.dim(2) != weight.dim(3)) throw ShapeError("conv2d expects square kernels");
    if (bias.rank() != 1 || bias.dim(0) != weight.dim(0))
        throw ShapeError("conv2d bias shape mismatch");
    const size_t b = x.dim(0), c_in = x.dim(1), h = x.dim(2), w = x.dim(3);
    const size_t c_out = weight.dim(0);
    const int k = static_cast<int>(weight.dim(2));
    const size_t ho = conv_out_extent(h, k, stride, dilation, padding, "conv2d");
    const size_t wo = conv_out_extent(w, k, stride, dilation, padding, "conv2d");
    const size_t patch = c_in * static_cast<size_t>(k) * k;

    Tensor<T> y({b, c_out, ho, wo});
#if defined(_OPENMP)
#pragma omp parallel num_threads(detail::thread_count()) if (b > 1)
#endif
    {
        std::vector<T> cols(patch * ho * wo);
#if defined(_OPENMP)
#pragma omp for schedule(static)
#endif
        for (long bi = 0; bi < static_cast<long>(b); ++bi) {
            detail::im2col(x.data() + static_cast<size_t>(bi) * c_in * h * w, c_in, h, w, k, stride,
                           dilation, padding, ho, wo, cols.data());
            T* out = y.data() + static_cast<size_t>(bi) * c_out * ho * wo;
            gemm_nn_acc(out, weight.data(), cols.data(), c_out, patch, ho * wo);
            for (size_t co = 0; co < c_out; ++co) {
                const T bv = bias[co];
                T* orow = out + co * ho * wo;
                for (size_t i = 0; i < ho * wo; ++i) orow[i] += bv;
            }
        }
    }
    ensure_finite(y, "conv2d");
    return y;
}

// Recorded conv with gradients for input, weight and bias. im2col buffers are
// recomputed in the adjoint rather than cached on the tape.
template <std::floating_point T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, int stride, int dilation, int padding) {
    Tape<T>& t = ad_detail::tape_of(x, weight);
    Tensor<T> y = conv2d_forward(x.value(), weight.value(), bias.value(), stride, dilation, padding);
    return t.record(
        std::move(y), {x.id, weight.id, bias.id},
        [stride, dilation, padding](Tape<T>& tp, int self) {
            const Tensor<T>& g = tp.grad(self);
            const int px = tp.parents(self)[0], pw = tp.parents(self)[1], pb = tp.parents(self)[2];
            const Tensor<T>&xv = tp.value(px), &wv = tp.value(pw);
            const size_t b = xv.dim(0), c_in = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
            const size_t c_out = wv.dim(0);
            const int k = static_cast<int>(wv.dim(2));
            const size_t ho = g.dim(2), wo = g.dim(3);
            const size_t patch = c_in * static_cast<size_t>(k) * k;

            if (tp.requires_grad(pb)) {
                Tensor<T> db({c_out});
                for (size_t bi = 0; bi < b; ++bi)
                    for (size_t co = 0; co < c_out; ++co) {
                        const T* gr = g.data() + (bi * c_out + co) * ho * wo;
                        T acc = 0;
                        for (size_t i = 0; i < ho * wo; ++i) acc += gr[i];
                        db[co] += acc;
                    }
                tp.accumulate_grad(pb, db);
            }
            if (tp.requires_grad(pw)) {
                Tensor<T> dw(wv.shape());
                std::vector<T> cols(patch * ho * wo);
                for (size_t bi = 0; bi < b; ++bi) {
                    detail::im2col(xv.data() + bi * c_in * h * w, c_in, h, w, k, stride, dilation,
                                   padding, ho, wo, cols.data());
                    gemm_nt_acc(dw.data(), g.data() + bi * c_out * ho * wo, cols.data(), c_out,
                                ho * wo, patch);
                }
                tp.accumulate_grad(pw, dw);
            }
            if (tp.requires_grad(px)) {
                Tensor<T> dx(xv.shape());
#if defined(_OPENMP)
#pragma omp parallel num_threads(detail::thread_count()) if (b > 1)
#endif
                {
                    std::vector<T> dcols(patch * ho * wo);
#if defined(_OPENMP)
#pragma omp for schedule(static)
#endif
                    for (long bi = 0; bi < static_cast<long>(b); ++bi) {
                        std::fill(dcols.begin(), dcols.end(), T(0));
                        gemm_tn_acc(dcols.data(), wv.data(),
                                    g.data() + static_cast<size_t>(bi) * c_out * ho * wo, c_out,
                                    patch, ho * wo);
                        detail::col2im_acc(dcols.data(), c_in, h, w, k, stride, dilation, padding,
                                           ho, wo,
                                           dx.data() + static_cast<size_t>(bi) * c_in * h * w);
                    }
                }
                tp.accumulate_grad(px, dx);
            }
        });
}

template <std::floating_point T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, const Conv2dLayer<T>& layer) {
    return conv2d(x, weight, bias, layer.stride, layer.dilation, layer.padding);
}

// ---------------------------------------------------------------------------
// Bilinear upsampling, align-corners = false. Identity sizes return a bitwise
// copy, and out-of-range source coordinates clamp to the border.

namespace detail {

struct LerpCoeff {
    size_t lo, hi;
    double w_hi;  // weight of hi; lo gets 1 - w_hi
};

inline LerpCoeff lerp_coeff(size_t out_idx, size_t in_extent, size_t out_extent) {
    const double src =
        (static_cast<double>(out_idx) + 0.5) * static_cast<double>(in_extent) /
            static_cast<double>(out_extent) -
        0.5;
    double lo_f = std::floor(src);
    double frac = src - lo_f;
    long lo = static_cast<long>(lo_f);
    long hi = lo + 1;
    if (lo < 0) {
        lo = 0;
        hi = 0;
        frac = 0.0;
    }
    if (hi >= static_cast<long>(in_extent)) {
        hi = static_cast<long>(in_extent) - 1;
        if (lo > hi) lo = hi;
    }
    return {static_cast<size_t>(lo), static_cast<size_t>(hi), frac};
}

}  // namespace detail

template <std::floating_point T>
Tensor<T> upsample_bilinear_forward(const Tensor<T>& x, size_t out_h, size_t out_w) {
    if (x.rank() != 4) throw ShapeError("upsample expects [B,C,h,w]");
    const size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (out_h < h || out_w < w)
        throw ShapeError("upsample target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                         " smaller than source " + std::to_string(h) + "x" + std::to_string(w));
    if (out_h == h && out_w == w) return x;
    Tensor<T> y({b, c, out_h, out_w});
    std::vector<detail::LerpCoeff> ys(out_h), xs(out_w);
    for (size_t i = 0; i < out_h; ++i) ys[i] = detail::lerp_coeff(i, h, out_h);
    for (size_t j = 0; j < out_w; ++j) xs[j] = detail::lerp_coeff(j, w, out_w);
    for (size_t bc = 0; bc < b * c; ++bc) {
        const T* in = x.data() + bc * h * w;
        T* out = y.data() + bc * out_h * out_w;
        for (size_t oy = 0; oy < out_h; ++oy) {
            const auto& cy = ys[oy];
            const T* r0 = in + cy.lo * w;
            const T* r1 = in + cy.hi * w;
            const T wy = static_cast<T>(cy.w_hi);
            for (size_t ox = 0; ox < out_w; ++ox) {
                const auto& cx = xs[ox];
                const T wx = static_cast<T>(cx.w_hi);
                const T top = r0[cx.lo] * (T(1) - wx) + r0[cx.hi] * wx;
                const T bot = r1[cx.lo] * (T(1) - wx) + r1[cx.hi] * wx;
                out[oy * out_w + ox] = top * (T(1) - wy) + bot * wy;
            }
        }
    }
    ensure_finite(y, "upsample_bilinear");
    return y;
}

template <std::floating_point T>
Var<T> upsample_bilinear(Var<T> x, size_t out_h, size_t out_w) {
    Tensor<T> y = upsample_bilinear_forward(x.value(), out_h, out_w);
    return x.tape->record(std::move(y), {x.id}, [out_h, out_w](Tape<T>& tp, int self) {
        const Tensor<T>& g = tp.grad(self);
        const int p = tp.parents(self)[0];
        const Tensor<T>& xv = tp.value(p);
        const size_t b = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
        if (out_h == h && out_w == w) {
            tp.accumulate_grad(p, g);
            return;
        }
        Tensor<T> dx(xv.shape());
        std::vector<detail::LerpCoeff> ys(out_h), xs(out_w);
        for (size_t i = 0; i < out_h; ++i) ys[i] = detail::lerp_coeff(i, h, out_h);
        for (size_t j = 0; j < out_w; ++j) xs[j] = detail::lerp_coeff(j, w, out_w);
        for (size_t bc = 0; bc < b * c; ++bc) {
            const T* gr = g.data() + bc * out_h * out_w;
            T* dst = dx.data() + bc * h * w;
            for (size_t oy = 0; oy < out_h; ++oy) {
                const auto& cy = ys[oy];
                const T wy = static_cast<T>(cy.w_hi);
                for (size_t ox = 0; ox < out_w; ++ox) {
                    const auto& cx = xs[ox];
                    const T wx = static_cast<T>(cx.w_hi);
                    const T gv = gr[oy * out_w + ox];
                    dst[cy.lo * w + cx.lo] += gv * (T(1) - wy) * (T(1) - wx);
                    dst[cy.lo * w + cx.hi] += gv * (T(1) - wy) * wx;
                    dst[cy.hi * w + cx.lo] += gv * wy * (T(1) - wx);
                    dst[cy.hi * w + cx.hi] += gv * wy * wx;
                }
            }
        }
        tp.accumulate_grad(p, dx);
    });
}

}  // namespace pfsd
