#include "pfsd/metrics.hpp"

#include <cstdio>
#include <sstream>

namespace pfsd {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : num_classes_(num_classes),
      counts_(static_cast<size_t>(num_classes) * static_cast<size_t>(num_classes), 0) {
    if (num_classes < 1) throw ConfigError("confusion matrix needs at least one class");
}

void ConfusionMatrix::accumulate(const Tensor<uint8_t>& pred, const Tensor<uint8_t>& gt,
                                 int ignore_index) {
    if (!pred.same_shape(gt))
        throw ShapeError("prediction shape " + shape_str(pred.shape()) + " != labels " +
                         shape_str(gt.shape()));
    const size_t c = static_cast<size_t>(num_classes_);
    for (size_t i = 0; i < pred.numel(); ++i) {
        const int g = gt[i];
        if (g == ignore_index) continue;
        const int p = pred[i];
        if (g >= num_classes_ || p >= num_classes_)
            throw ShapeError("class value out of range: gt=" + std::to_string(g) +
                             " pred=" + std::to_string(p));
        ++counts_[static_cast<size_t>(g) * c + static_cast<size_t>(p)];
    }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.num_classes_ != num_classes_) throw ShapeError("confusion matrix size mismatch");
    for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

uint64_t ConfusionMatrix::at(int gt, int pred) const {
    return counts_[static_cast<size_t>(gt) * static_cast<size_t>(num_classes_) +
                   static_cast<size_t>(pred)];
}

uint64_t ConfusionMatrix::total() const {
    uint64_t t = 0;
    for (uint64_t v : counts_) t += v;
    return t;
}

MiouResult ConfusionMatrix::miou() const {
    MiouResult r;
    r.evaluated_pixels = total();
    r.per_class_iou.assign(static_cast<size_t>(num_classes_), 0.0);
    r.class_valid.assign(static_cast<size_t>(num_classes_), false);
    if (r.evaluated_pixels == 0) return r;  // valid stays false

    uint64_t diag = 0;
    double iou_sum = 0.0;
    int counted = 0;
    for (int k = 0; k < num_classes_; ++k) {
        uint64_t row = 0, col = 0;
        for (int j = 0; j < num_classes_; ++j) {
            row += at(k, j);
            col += at(j, k);
        }
        const uint64_t inter = at(k, k);
        diag += inter;
        const uint64_t uni = row + col - inter;
        if (uni == 0) continue;  // class absent from both gt and pred
        const double iou = static_cast<double>(inter) / static_cast<double>(uni);
        r.per_class_iou[static_cast<size_t>(k)] = iou;
        r.class_valid[static_cast<size_t>(k)] = true;
        iou_sum += iou;
        ++counted;
    }
    if (counted == 0) return r;
    r.mean_iou = iou_sum / counted;
    r.pixel_acc = static_cast<double>(diag) / static_cast<double>(r.evaluated_pixels);
    r.valid = true;
    return r;
}

std::string miou_table(const MiouResult& r, const std::vector<std::string>& class_names) {
    std::ostringstream os;
    if (!r.valid) {
        os << "no evaluated pixels\n";
        return os.str();
    }
    char buf[128];
    for (size_t k = 0; k < r.per_class_iou.size(); ++k) {
        std::string name = k < class_names.size() ? class_names[k] : ("class " + std::to_string(k));
        if (r.class_valid[k])
            std::snprintf(buf, sizeof(buf), "  %-12s IoU %.4f\n", name.c_str(),
                          r.per_class_iou[k]);
        else
            std::snprintf(buf, sizeof(buf), "  %-12s (no pixels)\n", name.c_str());
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), "  mean IoU %.4f   pixel acc %.4f   pixels %llu\n", r.mean_iou,
                  r.pixel_acc, static_cast<unsigned long long>(r.evaluated_pixels));
    os << buf;
    return os.str();
}

std::string miou_csv(const MiouResult& r) {
    std::ostringstream os;
    os << "class,iou,valid\n";
    char buf[64];
    for (size_t k = 0; k < r.per_class_iou.size(); ++k) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%d\n", k, r.per_class_iou[k],
                      r.class_valid[k] ? 1 : 0);
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), "mean,%.17g,%d\n", r.mean_iou, r.valid ? 1 : 0);
    os << buf;
    std::snprintf(buf, sizeof(buf), "pixel_acc,%.17g,%d\n", r.pixel_acc, r.valid ? 1 : 0);
    os << buf;
    return os.str();
}

}  // namespace pfsd
