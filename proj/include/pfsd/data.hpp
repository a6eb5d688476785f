#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pfsd/nn_ops.hpp"
#include "pfsd/rng.hpp"
#include "pfsd/tensor.hpp"

namespace pfsd {

// Synthetic shapes-on-gradient segmentation data. Class 0 is background;
// class k in 1..num_classes-1 draws shape kind (k-1) % 3 (disc, rectangle,
// triangle), so with the default 4 classes each kind is its own class.
struct DatasetSpec {
    int num_classes = 4;
    int image_size = 48;
    int min_shapes = 1;
    int max_shapes = 3;
    double noise_level = 0.08;
    int train_count = 500;
    int val_count = 100;
    uint64_t seed = 42;

    bool operator==(const DatasetSpec&) const = default;

    void validate() const {
        if (num_classes < 2 || num_classes > 255) throw ConfigError("num_classes must be in 2..255");
        if (image_size < 8) throw ConfigError("image_size must be >= 8");
        if (min_shapes < 1 || max_shapes < min_shapes)
            throw ConfigError("shape count range invalid");
        if (noise_level < 0 || noise_level > 1) throw ConfigError("noise_level must be in [0,1]");
        if (train_count < 1 || val_count < 1) throw ConfigError("split counts must be >= 1");
    }
};

void to_json(nlohmann::json& j, const DatasetSpec& s);
void from_json(const nlohmann::json& j, DatasetSpec& s);

struct Sample {
    Tensor<float> image;    // [3,S,S] in [0,1]
    Tensor<uint8_t> label;  // [S,S], class ids
};

inline constexpr int kIgnoreIndex = 255;

// Fully determined by (spec, sample_seed).
Sample make_sample(const DatasetSpec& spec, uint64_t sample_seed);

// Writes train/ and val/ splits plus manifest.json under dir.
void generate_dataset(const DatasetSpec& spec, const std::string& dir);

struct Dataset {
    DatasetSpec spec;
    std::vector<Sample> samples;
};

DatasetSpec load_manifest(const std::string& dir);
Dataset load_split(const std::string& dir, const std::string& split);

std::vector<std::vector<size_t>> batch_plan(size_t n, size_t batch_size, uint64_t epoch_seed);

template <std::floating_point T>
struct SegBatch {
    Tensor<T> images;        // [B,3,H,W]
    Tensor<uint8_t> labels;  // [B,H,W]
};

// ---------------------------------------------------------------------------
// Augmentation building blocks.

template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& x) {
    if (x.rank() < 2) throw ShapeError("flip_horizontal expects rank >= 2");
    const size_t w = x.dim(x.rank() - 1);
    const size_t rows = x.numel() / w;
    Tensor<T> y(x.shape());
    for (size_t r = 0; r < rows; ++r) {
        const T* in = x.data() + r * w;
        T* out = y.data() + r * w;
        for (size_t j = 0; j < w; ++j) out[j] = in[w - 1 - j];
    }
    return y;
}

// General bilinear resize (both up and down), align-corners = false.
template <std::floating_point T>
Tensor<T> resize_bilinear(const Tensor<T>& x, size_t out_h, size_t out_w) {
    if (x.rank() != 3) throw ShapeError("resize_bilinear expects [C,h,w]");
    const size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (out_h == h && out_w == w) return x;
    Tensor<T> y({c, out_h, out_w});
    std::vector<detail::LerpCoeff> ys(out_h), xs(out_w);
    for (size_t i = 0; i < out_h; ++i) ys[i] = detail::lerp_coeff(i, h, out_h);
    for (size_t j = 0; j < out_w; ++j) xs[j] = detail::lerp_coeff(j, w, out_w);
    for (size_t ci = 0; ci < c; ++ci) {
        const T* in = x.data() + ci * h * w;
        T* out = y.data() + ci * out_h * out_w;
        for (size_t oy = 0; oy < out_h; ++oy) {
            const auto& cy = ys[oy];
            const T wy = static_cast<T>(cy.w_hi);
            for (size_t ox = 0; ox < out_w; ++ox) {
                const auto& cx = xs[ox];
                const T wx = static_cast<T>(cx.w_hi);
                const T top = in[cy.lo * w + cx.lo] * (T(1) - wx) + in[cy.lo * w + cx.hi] * wx;
                const T bot = in[cy.hi * w + cx.lo] * (T(1) - wx) + in[cy.hi * w + cx.hi] * wx;
                out[oy * out_w + ox] = top * (T(1) - wy) + bot * wy;
            }
        }
    }
    return y;
}

inline Tensor<uint8_t> resize_nearest(const Tensor<uint8_t>& x, size_t out_h, size_t out_w) {
    if (x.rank() != 2) throw ShapeError("resize_nearest expects [h,w]");
    const size_t h = x.dim(0), w = x.dim(1);
    if (out_h == h && out_w == w) return x;
    Tensor<uint8_t> y({out_h, out_w});
    for (size_t oy = 0; oy < out_h; ++oy) {
        size_t sy = static_cast<size_t>(
            (static_cast<double>(oy) + 0.5) * static_cast<double>(h) / static_cast<double>(out_h));
        if (sy >= h) sy = h - 1;
        for (size_t ox = 0; ox < out_w; ++ox) {
            size_t sx = static_cast<size_t>((static_cast<double>(ox) + 0.5) *
                                            static_cast<double>(w) / static_cast<double>(out_w));
            if (sx >= w) sx = w - 1;
            y[oy * out_w + ox] = x[sy * w + sx];
        }
    }
    return y;
}

// Random horizontal flip then random rescale in [0.5, 1.5]. The result is
// put back on the original canvas: shrunk content is centered with image
// zeros and label 255 around it, grown content is center-cropped.
template <std::floating_point T>
std::pair<Tensor<T>, Tensor<uint8_t>> augment_sample(const Tensor<T>& image,
                                                     const Tensor<uint8_t>& label, Rng& rng) {
    if (image.rank() != 3 || label.rank() != 2 || image.dim(1) != label.dim(0) ||
        image.dim(2) != label.dim(1))
        throw ShapeError("augment_sample expects [C,H,W] image with matching [H,W] label");
    const size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);

    Tensor<T> img = rng.bernoulli(0.5) ? flip_horizontal(image) : image;
    Tensor<uint8_t> lbl = img.data() == image.data() ? label : flip_horizontal(label);
    const double s = rng.uniform(0.5, 1.5);
    const size_t sh = static_cast<size_t>(std::lround(s * static_cast<double>(h)));
    const size_t sw = static_cast<size_t>(std::lround(s * static_cast<double>(w)));
    Tensor<T> scaled_img = resize_bilinear(img, sh, sw);
    Tensor<uint8_t> scaled_lbl = resize_nearest(lbl, sh, sw);
    if (sh == h && sw == w) return {std::move(scaled_img), std::move(scaled_lbl)};

    Tensor<T> out_img({c, h, w});
    Tensor<uint8_t> out_lbl = Tensor<uint8_t>::full({h, w}, kIgnoreIndex);
    // Per-axis copy window: destination offset when padding, source offset
    // when cropping.
    const size_t copy_h = std::min(h, sh), copy_w = std::min(w, sw);
    const size_t dy = sh < h ? (h - sh) / 2 : 0, dx = sw < w ? (w - sw) / 2 : 0;
    const size_t sy = sh > h ? (sh - h) / 2 : 0, sx = sw > w ? (sw - w) / 2 : 0;
    for (size_t ci = 0; ci < c; ++ci)
        for (size_t y = 0; y < copy_h; ++y)
            for (size_t x = 0; x < copy_w; ++x)
                out_img.at(ci, dy + y, dx + x) = scaled_img.at(ci, sy + y, sx + x);
    for (size_t y = 0; y < copy_h; ++y)
        for (size_t x = 0; x < copy_w; ++x)
            out_lbl.at(dy + y, dx + x) = scaled_lbl.at(sy + y, sx + x);
    return {std::move(out_img), std::move(out_lbl)};
}

// Assembles a batch; augmentation seeds derive from (epoch_seed, sample
// index) so the result does not depend on batch composition.
template <std::floating_point T>
SegBatch<T> load_batch(const Dataset& ds, const std::vector<size_t>& indices, bool augment,
                       uint64_t epoch_seed) {
    if (indices.empty()) throw ConfigError("empty batch");
    const size_t s = static_cast<size_t>(ds.spec.image_size);
    SegBatch<T> batch{Tensor<T>({indices.size(), 3, s, s}), Tensor<uint8_t>({indices.size(), s, s})};
    for (size_t bi = 0; bi < indices.size(); ++bi) {
        const Sample& sample = ds.samples.at(indices[bi]);
        Tensor<T> img = cast<T>(sample.image);
        Tensor<uint8_t> lbl = sample.label;
        if (augment) {
            Rng rng(derive_seed(epoch_seed, indices[bi]));
            auto [ai, al] = augment_sample(img, lbl, rng);
            img = std::move(ai);
            lbl = std::move(al);
        }
        std::copy(img.data(), img.data() + img.numel(), batch.images.data() + bi * 3 * s * s);
        std::copy(lbl.data(), lbl.data() + lbl.numel(), batch.labels.data() + bi * s * s);
    }
    return batch;
}

}  // namespace pfsd
