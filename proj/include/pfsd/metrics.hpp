#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pfsd/tensor.hpp"

namespace pfsd {

struct MiouResult {
    std::vector<double> per_class_iou;  // NaN-free; invalid classes carry 0
    std::vector<bool> class_valid;      // false when a class has zero union
    double mean_iou = 0.0;
    double pixel_acc = 0.0;
    uint64_t evaluated_pixels = 0;
    bool valid = false;  // false when nothing was evaluated
};

// Row = ground truth, column = prediction; ignored pixels never counted.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes);

    void accumulate(const Tensor<uint8_t>& pred, const Tensor<uint8_t>& gt, int ignore_index);
    void merge(const ConfusionMatrix& other);

    uint64_t at(int gt, int pred) const;
    uint64_t total() const;
    int num_classes() const { return num_classes_; }

    MiouResult miou() const;

private:
    int num_classes_;
    std::vector<uint64_t> counts_;
};

// Argmax over the class axis of [B,c,H,W]; ties go to the lowest class index.
template <std::floating_point T>
Tensor<uint8_t> argmax_channels(const Tensor<T>& logits) {
    if (logits.rank() != 4) throw ShapeError("argmax_channels expects [B,c,H,W]");
    const size_t b = logits.dim(0), c = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
    if (c > 255) throw ShapeError("too many classes for u8 labels");
    Tensor<uint8_t> out({logits.dim(0), logits.dim(2), logits.dim(3)});
    for (size_t bi = 0; bi < b; ++bi) {
        const T* zb = logits.data() + bi * c * hw;
        uint8_t* ob = out.data() + bi * hw;
        for (size_t n = 0; n < hw; ++n) {
            size_t arg = 0;
            T best = zb[n];
            for (size_t i = 1; i < c; ++i) {
                const T v = zb[i * hw + n];
                if (v > best) {
                    best = v;
                    arg = i;
                }
            }
            ob[n] = static_cast<uint8_t>(arg);
        }
    }
    return out;
}

std::string miou_table(const MiouResult& r, const std::vector<std::string>& class_names = {});
std::string miou_csv(const MiouResult& r);

}  // namespace pfsd
