#include "pfsd/reference.hpp"

#include <cmath>

namespace pfsd::ref {

Tensor<double> matmul(const Tensor<double>& a, const Tensor<double>& b) {
    const size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<double> c({m, n});
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) {
            double acc = 0;
            for (size_t p = 0; p < k; ++p) acc += a.at(i, p) * b.at(p, j);
            c.at(i, j) = acc;
        }
    return c;
}

Tensor<double> conv2d(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b,
                      int stride, int dilation, int padding) {
    const size_t bs = x.dim(0), ci = x.dim(1), h = x.dim(2), ww = x.dim(3);
    const size_t co = w.dim(0);
    const int k = static_cast<int>(w.dim(2));
    const long eff = static_cast<long>(dilation) * (k - 1) + 1;
    const size_t ho = static_cast<size_t>((static_cast<long>(h) + 2L * padding - eff) / stride + 1);
    const size_t wo = static_cast<size_t>((static_cast<long>(ww) + 2L * padding - eff) / stride + 1);
    Tensor<double> y({bs, co, ho, wo});
    for (size_t bi = 0; bi < bs; ++bi)
        for (size_t oc = 0; oc < co; ++oc)
            for (size_t oy = 0; oy < ho; ++oy)
                for (size_t ox = 0; ox < wo; ++ox) {
                    double acc = b[oc];
                    for (size_t ic = 0; ic < ci; ++ic)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const long iy = static_cast<long>(oy) * stride - padding +
                                                static_cast<long>(ky) * dilation;
                                const long ix = static_cast<long>(ox) * stride - padding +
                                                static_cast<long>(kx) * dilation;
                                if (iy < 0 || iy >= static_cast<long>(h) || ix < 0 ||
                                    ix >= static_cast<long>(ww))
                                    continue;
                                acc += x.at(bi, ic, static_cast<size_t>(iy),
                                            static_cast<size_t>(ix)) *
                                       w.at(oc, ic, static_cast<size_t>(ky),
                                            static_cast<size_t>(kx));
                            }
                    y.at(bi, oc, oy, ox) = acc;
                }
    return y;
}

Tensor<double> softmax_rows(const Tensor<double>& x) {
    const size_t n = x.dim(x.rank() - 1);
    const size_t rows = x.numel() / n;
    Tensor<double> y(x.shape());
    for (size_t r = 0; r < rows; ++r) {
        double denom = 0;
        for (size_t j = 0; j < n; ++j) denom += std::exp(x[r * n + j]);
        for (size_t j = 0; j < n; ++j) y[r * n + j] = std::exp(x[r * n + j]) / denom;
    }
    return y;
}

Tensor<double> s_pfs(const Tensor<double>& f) {
    const size_t b = f.dim(0), c = f.dim(1), h = f.dim(2), w = f.dim(3);
    const size_t hw = h * w;
    Tensor<double> m({b, hw, hw});
    for (size_t bi = 0; bi < b; ++bi) {
        Tensor<double> s({hw, hw});
        for (size_t i = 0; i < hw; ++i)
            for (size_t j = 0; j < hw; ++j) {
                double dot = 0;
                for (size_t ci = 0; ci < c; ++ci)
                    dot += f.at(bi, ci, i / w, i % w) * f.at(bi, ci, j / w, j % w);
                s.at(i, j) = dot;
            }
        const Tensor<double> sm = softmax_rows(s);
        for (size_t i = 0; i < hw * hw; ++i) m[bi * hw * hw + i] = sm[i];
    }
    return m;
}

Tensor<double> c_pfs(const Tensor<double>& f, const Tensor<double>& w1, const Tensor<double>& b1,
                     const Tensor<double>& w2, const Tensor<double>& b2) {
    const Tensor<double> f1 = conv2d(f, w1, b1, 1, 1, 0);
    const Tensor<double> f2 = conv2d(f, w2, b2, 1, 1, 0);
    const size_t b = f.dim(0), ct = f1.dim(1), h = f.dim(2), w = f.dim(3);
    const size_t hw = h * w;
    Tensor<double> m({b, hw, hw});
    for (size_t bi = 0; bi < b; ++bi) {
        Tensor<double> s({hw, hw});
        for (size_t i = 0; i < hw; ++i)
            for (size_t j = 0; j < hw; ++j) {
                double dot = 0;
                for (size_t ci = 0; ci < ct; ++ci)
                    dot += f1.at(bi, ci, i / w, i % w) * f2.at(bi, ci, j / w, j % w);
                s.at(i, j) = dot;
            }
        const Tensor<double> sm = softmax_rows(s);
        for (size_t i = 0; i < hw * hw; ++i) m[bi * hw * hw + i] = sm[i];
    }
    return m;
}

double pfs_loss(const Tensor<double>& m_teacher, const Tensor<double>& m_student) {
    const size_t b = m_teacher.dim(0), hw = m_teacher.dim(1);
    double total = 0;
    for (size_t bi = 0; bi < b; ++bi) {
        double image_sum = 0;
        for (size_t i = 0; i < hw; ++i) {
            double row_l1 = 0;
            for (size_t j = 0; j < hw; ++j)
                row_l1 += std::fabs(m_teacher.at(bi, i, j) - m_student.at(bi, i, j));
            image_sum += row_l1;
        }
        total += image_sum / static_cast<double>(hw);
    }
    return total / static_cast<double>(b);
}

Tensor<double> augment(const Tensor<double>& f, const Tensor<double>& m, double gamma) {
    const size_t b = f.dim(0), c = f.dim(1), h = f.dim(2), w = f.dim(3);
    const size_t hw = h * w;
    Tensor<double> out(f.shape());
    for (size_t bi = 0; bi < b; ++bi)
        for (size_t ci = 0; ci < c; ++ci)
            for (size_t i = 0; i < hw; ++i) {
                double mixed = 0;
                for (size_t j = 0; j < hw; ++j)
                    mixed += f.at(bi, ci, j / w, j % w) * m.at(bi, i, j);
                out.at(bi, ci, i / w, i % w) = f.at(bi, ci, i / w, i % w) + gamma * mixed;
            }
    return out;
}

namespace {

// Per-pixel class probabilities, direct formula with temperature.
void pixel_probs(const Tensor<double>& logits, size_t bi, size_t n, double temperature,
                 std::vector<double>& out) {
    const size_t c = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
    double denom = 0;
    for (size_t i = 0; i < c; ++i) denom += std::exp(logits[bi * c * hw + i * hw + n] / temperature);
    for (size_t i = 0; i < c; ++i)
        out[i] = std::exp(logits[bi * c * hw + i * hw + n] / temperature) / denom;
}

}  // namespace

double hard_ce(const Tensor<double>& logits, const Tensor<uint8_t>& labels,
               const LossConfig& cfg) {
    const size_t b = logits.dim(0), c = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
    std::vector<double> p(c);
    double total = 0;
    size_t valid = 0;
    for (size_t bi = 0; bi < b; ++bi)
        for (size_t n = 0; n < hw; ++n) {
            const uint8_t y = labels[bi * hw + n];
            if (y == cfg.ignore_index) continue;
            ++valid;
            pixel_probs(logits, bi, n, 1.0, p);
            total -= std::log(p[y]);
        }
    if (cfg.pixel_reduction == PixelReduction::mean && valid > 0)
        total /= static_cast<double>(valid);
    return total;
}

double kd_pixel_loss(const Tensor<double>& student_logits, const Tensor<double>& teacher_logits,
                     const Tensor<uint8_t>& labels, const LossConfig& cfg) {
    const size_t b = student_logits.dim(0), c = student_logits.dim(1),
                 hw = student_logits.dim(2) * student_logits.dim(3);
    std::vector<double> ps(c), pt(c);
    double total = 0;
    size_t valid = 0;
    for (size_t bi = 0; bi < b; ++bi)
        for (size_t n = 0; n < hw; ++n) {
            const uint8_t y = labels[bi * hw + n];
            if (y == cfg.ignore_index) continue;
            ++valid;
            pixel_probs(student_logits, bi, n, 1.0, ps);
            pixel_probs(teacher_logits, bi, n, cfg.temperature, pt);
            const double w = std::max(0.0, pt[y] - ps[y]);
            double h_soft = 0;
            for (size_t i = 0; i < c; ++i) h_soft -= pt[i] * std::log(ps[i]);
            total += -std::log(ps[y]) + cfg.mu * w * h_soft;
        }
    if (cfg.pixel_reduction == PixelReduction::mean && valid > 0)
        total /= static_cast<double>(valid);
    return total;
}

double post_softmax_loss(const Tensor<double>& student_logits,
                         const Tensor<double>& teacher_logits, const Tensor<uint8_t>& labels,
                         const LossConfig& cfg) {
    const size_t b = student_logits.dim(0), c = student_logits.dim(1),
                 hw = student_logits.dim(2) * student_logits.dim(3);
    std::vector<double> ps(c), pt(c);
    double total = 0;
    size_t valid = 0;
    for (size_t bi = 0; bi < b; ++bi)
        for (size_t n = 0; n < hw; ++n) {
            const uint8_t y = labels[bi * hw + n];
            if (y == cfg.ignore_index) continue;
            ++valid;
            pixel_probs(student_logits, bi, n, 1.0, ps);
            pixel_probs(teacher_logits, bi, n, cfg.temperature, pt);
            double h_soft = 0;
            for (size_t i = 0; i < c; ++i) h_soft -= pt[i] * std::log(ps[i]);
            total += -std::log(ps[y]) + cfg.mu * h_soft;
        }
    if (cfg.pixel_reduction == PixelReduction::mean && valid > 0)
        total /= static_cast<double>(valid);
    return total;
}

double hint_loss(const Tensor<double>& student_feat, const Tensor<double>& teacher_feat,
                 const Tensor<double>& adapter_w, const Tensor<double>& adapter_b) {
    const Tensor<double> adapted = conv2d(student_feat, adapter_w, adapter_b, 1, 1, 0);
    double total = 0;
    for (size_t i = 0; i < adapted.numel(); ++i) {
        const double d = adapted[i] - teacher_feat[i];
        total += d * d;
    }
    return total / static_cast<double>(adapted.numel());
}

double attention_loss(const Tensor<double>& student_feat, const Tensor<double>& teacher_feat) {
    auto normalized_map = [](const Tensor<double>& f, size_t bi, std::vector<double>& out) {
        const size_t c = f.dim(1), hw = f.dim(2) * f.dim(3);
        out.assign(hw, 0.0);
        for (size_t ci = 0; ci < c; ++ci)
            for (size_t n = 0; n < hw; ++n) out[n] += f[bi * c * hw + ci * hw + n];
        double ss = 0;
        for (size_t n = 0; n < hw; ++n) {
            out[n] /= static_cast<double>(c);
            ss += out[n] * out[n];
        }
        const double norm = std::sqrt(ss);
        for (size_t n = 0; n < hw; ++n) out[n] = norm > 0 ? out[n] / norm : 0.0;
    };
    const size_t b = student_feat.dim(0), hw = student_feat.dim(2) * student_feat.dim(3);
    std::vector<double> ms, mt;
    double total = 0;
    for (size_t bi = 0; bi < b; ++bi) {
        normalized_map(student_feat, bi, ms);
        normalized_map(teacher_feat, bi, mt);
        for (size_t n = 0; n < hw; ++n) {
            const double d = ms[n] - mt[n];
            total += d * d;
        }
    }
    return total / static_cast<double>(b * hw);
}

}  // namespace pfsd::ref
