#include "pfsd/checks.hpp"

#include <chrono>
#include <cstdio>
#include <functional>

#include "pfsd/losses.hpp"
#include "pfsd/metrics.hpp"
#include "pfsd/nn_ops.hpp"
#include "pfsd/pfs.hpp"
#include "pfsd/reference.hpp"
#include "pfsd/rng.hpp"

namespace pfsd {

namespace {

Tensor<double> rand_tensor(Rng& rng, Shape shape, double lo = -2.0, double hi = 2.0) {
    Tensor<double> t(std::move(shape));
    for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Values bounded away from zero, for ops with a kink there.
Tensor<double> rand_tensor_nonzero(Rng& rng, Shape shape, double min_abs = 0.05) {
    Tensor<double> t(std::move(shape));
    for (size_t i = 0; i < t.numel(); ++i) {
        const double mag = rng.uniform(min_abs, 1.5);
        t[i] = rng.bernoulli(0.5) ? mag : -mag;
    }
    return t;
}

Tensor<uint8_t> rand_labels(Rng& rng, size_t b, size_t h, size_t w, int classes,
                            double ignore_frac, int ignore_index) {
    Tensor<uint8_t> t({b, h, w});
    for (size_t i = 0; i < t.numel(); ++i)
        t[i] = rng.bernoulli(ignore_frac)
                   ? static_cast<uint8_t>(ignore_index)
                   : static_cast<uint8_t>(rng.below(static_cast<uint64_t>(classes)));
    return t;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
    if (!a.same_shape(b)) throw ShapeError("oracle shape mismatch");
    double m = 0;
    for (size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

// ---------------------------------------------------------------------------
// Oracle suite.

struct OracleCase {
    const char* name;
    std::function<double(Rng&)> run;  // returns max abs error for one instance
};

std::vector<OracleCase> oracle_cases() {
    std::vector<OracleCase> cases;

    cases.push_back({"matmul", [](Rng& rng) {
        const size_t m = 1 + rng.below(32), k = 1 + rng.below(32), n = 1 + rng.below(32);
        Tensor<double> a = rand_tensor(rng, {m, k}), b = rand_tensor(rng, {k, n});
        return max_abs_diff(matmul(a, b), ref::matmul(a, b));
    }});

    cases.push_back({"conv2d", [](Rng& rng) {
        const size_t b = 1 + rng.below(2), ci = 1 + rng.below(8), co = 1 + rng.below(8);
        const size_t h = 3 + rng.below(4), w = 3 + rng.below(4);
        const int k = rng.bernoulli(0.5) ? 3 : 1;
        const int stride = rng.bernoulli(0.5) ? 2 : 1;
        const int dilation = k == 1 ? 1 : (1 << rng.below(3));  // 1, 2 or 4
        const int pad = same_padding(k, dilation);
        Tensor<double> x = rand_tensor(rng, {b, ci, h, w});
        Tensor<double> wt = rand_tensor(rng, {co, ci, static_cast<size_t>(k), static_cast<size_t>(k)});
        Tensor<double> bt = rand_tensor(rng, {co});
        return max_abs_diff(conv2d_forward(x, wt, bt, stride, dilation, pad),
                            ref::conv2d(x, wt, bt, stride, dilation, pad));
    }});

    cases.push_back({"s_pfs", [](Rng& rng) {
        const size_t b = 1 + rng.below(2), c = 1 + rng.below(8);
        const size_t h = 1 + rng.below(6), w = 1 + rng.below(6);
        Tensor<double> f = rand_tensor(rng, {b, c, h, w});
        Tape<double> tape;
        PfsMap<double> m = s_pfs(tape.constant(f));
        return max_abs_diff(m.m.value(), ref::s_pfs(f));
    }});

    cases.push_back({"c_pfs", [](Rng& rng) {
        const size_t b = 1 + rng.below(2), c = 1 + rng.below(8);
        const size_t h = 1 + rng.below(6), w = 1 + rng.below(6);
        Tensor<double> f = rand_tensor(rng, {b, c, h, w});
        CPfsTransforms<double> tr(static_cast<int>(c));
        Rng init = rng.fork(1);
        tr.init(init);
        for (size_t i = 0; i < tr.w1.weight.numel(); ++i) tr.w1.weight[i] = rng.uniform(-1, 1);
        for (size_t i = 0; i < tr.w2.weight.numel(); ++i) tr.w2.weight[i] = rng.uniform(-1, 1);
        for (size_t i = 0; i < tr.w1.bias.numel(); ++i) tr.w1.bias[i] = rng.uniform(-1, 1);
        for (size_t i = 0; i < tr.w2.bias.numel(); ++i) tr.w2.bias[i] = rng.uniform(-1, 1);
        Tape<double> tape;
        PfsMap<double> m =
            c_pfs(tape.constant(f), tape.constant(tr.w1.weight), tape.constant(tr.w1.bias),
                  tape.constant(tr.w2.weight), tape.constant(tr.w2.bias), tr);
        return max_abs_diff(m.m.value(),
                            ref::c_pfs(f, tr.w1.weight, tr.w1.bias, tr.w2.weight, tr.w2.bias));
    }});

    cases.push_back({"pfs_loss", [](Rng& rng) {
        const size_t b = 1 + rng.below(2), h = 1 + rng.below(6), w = 1 + rng.below(6);
        const size_t hw = h * w;
        Tensor<double> mt = ref::softmax_rows(rand_tensor(rng, {b, hw, hw}));
        Tensor<double> ms = ref::softmax_rows(rand_tensor(rng, {b, hw, hw}));
        Tape<double> tape;
        PfsMap<double> a{tape.constant(mt), h, w}, s{tape.constant(ms), h, w};
        const double got = pfs_loss(a, s).value().item();
        return std::fabs(got - ref::pfs_loss(mt, ms));
    }});

    cases.push_back({"augment", [](Rng& rng) {
        const size_t b = 1 + rng.below(2), c = 1 + rng.below(8);
        const size_t h = 1 + rng.below(6), w = 1 + rng.below(6);
        const size_t hw = h * w;
        Tensor<double> f = rand_tensor(rng, {b, c, h, w});
        Tensor<double> m = ref::softmax_rows(rand_tensor(rng, {b, hw, hw}));
        const double gamma = rng.uniform(-1.0, 1.0);
        Tape<double> tape;
        PfsMap<double> pm{tape.constant(m), h, w};
        Var<double> out = augment(tape.constant(f), pm, tape.constant(Tensor<double>::scalar(gamma)));
        return max_abs_diff(out.value(), ref::augment(f, m, gamma));
    }});

    cases.push_back({"hard_ce", [](Rng& rng) {
        const size_t b = 1 + rng.below(2), c = 2 + rng.below(4);
        const size_t h = 1 + rng.below(6), w = 1 + rng.below(6);
        LossConfig cfg;
        cfg.pixel_reduction = rng.bernoulli(0.5) ? PixelReduction::mean : PixelReduction::sum;
        Tensor<double> z = rand_tensor(rng, {b, c, h, w});
        Tensor<uint8_t> y = rand_labels(rng, b, h, w, static_cast<int>(c), 0.1, cfg.ignore_index);
        Tape<double> tape;
        const double got = hard_ce(tape.constant(z), y, cfg).value().item();
        return std::fabs(got - ref::hard_ce(z, y, cfg));
    }});

    cases.push_back({"kd_pixel_loss", [](Rng& rng) {
        const size_t b = 1 + rng.below(2), c = 2 + rng.below(4);
        const size_t h = 1 + rng.below(6), w = 1 + rng.below(6);
        LossConfig cfg;
        cfg.mu = rng.uniform(0.0, 2.0);
        cfg.temperature = rng.uniform(0.5, 3.0);
        Tensor<double> zs = rand_tensor(rng, {b, c, h, w});
        Tensor<double> zt = rand_tensor(rng, {b, c, h, w});
        Tensor<uint8_t> y = rand_labels(rng, b, h, w, static_cast<int>(c), 0.1, cfg.ignore_index);
        Tape<double> tape;
        const double got = kd_pixel_loss(tape.constant(zs), zt, y, cfg).total.value().item();
        return std::fabs(got - ref::kd_pixel_loss(zs, zt, y, cfg));
    }});

    cases.push_back({"post_softmax", [](Rng& rng) {
        const size_t b = 1 + rng.below(2), c = 2 + rng.below(4);
        const size_t h = 1 + rng.below(6), w = 1 + rng.below(6);
        LossConfig cfg;
        cfg.mu = rng.uniform(0.0, 2.0);
        Tensor<double> zs = rand_tensor(rng, {b, c, h, w});
        Tensor<double> zt = rand_tensor(rng, {b, c, h, w});
        Tensor<uint8_t> y = rand_labels(rng, b, h, w, static_cast<int>(c), 0.1, cfg.ignore_index);
        Tape<double> tape;
        const double got =
            baseline_post_softmax(tape.constant(zs), zt, y, cfg).total.value().item();
        return std::fabs(got - ref::post_softmax_loss(zs, zt, y, cfg));
    }});

    cases.push_back({"hint", [](Rng& rng) {
        const size_t b = 1 + rng.below(2), cs = 1 + rng.below(8), ct = 1 + rng.below(8);
        const size_t h = 1 + rng.below(6), w = 1 + rng.below(6);
        Tensor<double> sf = rand_tensor(rng, {b, cs, h, w});
        Tensor<double> tf = rand_tensor(rng, {b, ct, h, w});
        Conv2dLayer<double> adapter(static_cast<int>(ct), static_cast<int>(cs), 1);
        adapter.weight = rand_tensor(rng, adapter.weight.shape(), -1, 1);
        adapter.bias = rand_tensor(rng, adapter.bias.shape(), -1, 1);
        Tape<double> tape;
        const double got = baseline_hint(tape.constant(sf), tf, tape.constant(adapter.weight),
                                         tape.constant(adapter.bias), adapter)
                               .value()
                               .item();
        return std::fabs(got - ref::hint_loss(sf, tf, adapter.weight, adapter.bias));
    }});

    cases.push_back({"attention", [](Rng& rng) {
        const size_t b = 1 + rng.below(2), cs = 1 + rng.below(8), ct = 1 + rng.below(8);
        const size_t h = 1 + rng.below(6), w = 1 + rng.below(6);
        Tensor<double> sf = rand_tensor(rng, {b, cs, h, w});
        Tensor<double> tf = rand_tensor(rng, {b, ct, h, w});
        Tape<double> tape;
        const double got = baseline_attention(tape.constant(sf), tf).value().item();
        return std::fabs(got - ref::attention_loss(sf, tf));
    }});

    return cases;
}

// ---------------------------------------------------------------------------
// Gradcheck suite.

struct GradOutcome {
    std::string shape;
    double max_rel_err = 0.0;
};

using GradFn = std::function<GradOutcome(Rng&)>;

using VarFn =
    std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

GradOutcome run_case(VarFn f, std::vector<Tensor<double>> inputs, const Shape& report_shape) {
    GradCheckReport rep = gradcheck(f, std::move(inputs));
    return {shape_str(report_shape), rep.max_rel_err};
}

// Scalarize a tensor-valued op with a fixed random projection so every output
// coordinate influences the checked scalar.
Var<double> project(Tape<double>& t, Var<double> v, const Tensor<double>& r) {
    return sum_all(mul(v, t.constant(r)));
}

std::vector<std::pair<const char*, GradFn>> grad_cases() {
    std::vector<std::pair<const char*, GradFn>> cases;

    auto ew_shape = [](Rng& rng) {
        return Shape{2 + rng.below(3), 2 + rng.below(4)};
    };

    cases.emplace_back("add", [ew_shape](Rng& rng) {
        Shape s = ew_shape(rng);
        Tensor<double> r = rand_tensor(rng, s);
        return run_case(
            [r](Tape<double>& t, const std::vector<Var<double>>& v) {
                return project(t, add(v[0], v[1]), r);
            },
            {rand_tensor(rng, s), rand_tensor(rng, s)}, s);
    });

    cases.emplace_back("sub", [ew_shape](Rng& rng) {
        Shape s = ew_shape(rng);
        Tensor<double> r = rand_tensor(rng, s);
        return run_case(
            [r](Tape<double>& t, const std::vector<Var<double>>& v) {
                return project(t, sub(v[0], v[1]), r);
            },
            {rand_tensor(rng, s), rand_tensor(rng, s)}, s);
    });

    cases.emplace_back("mul", [ew_shape](Rng& rng) {
        Shape s = ew_shape(rng);
        Tensor<double> r = rand_tensor(rng, s);
        return run_case(
            [r](Tape<double>& t, const std::vector<Var<double>>& v) {
                return project(t, mul(v[0], v[1]), r);
            },
            {rand_tensor(rng, s), rand_tensor(rng, s)}, s);
    });

    cases.emplace_back("scale", [ew_shape](Rng& rng) {
        Shape s = ew_shape(rng);
        const double k = rng.uniform(-2, 2);
        Tensor<double> r = rand_tensor(rng, s);
        return run_case(
            [r, k](Tape<double>& t, const std::vector<Var<double>>& v) {
                return project(t, scale(v[0], k), r);
            },
            {rand_tensor(rng, s)}, s);
    });

    cases.emplace_back("scale_var", [ew_shape](Rng& rng) {
        Shape s = ew_shape(rng);
        Tensor<double> r = rand_tensor(rng, s);
        return run_case(
            [r](Tape<double>& t, const std::vector<Var<double>>& v) {
                return project(t, scale_var(v[0], v[1]), r);
            },
            {rand_tensor(rng, s), Tensor<double>::scalar(rng.uniform(-2, 2))}, s);
    });

    cases.emplace_back("abs", [ew_shape](Rng& rng) {
        Shape s = ew_shape(rng);
        Tensor<double> r = rand_tensor(rng, s);
        return run_case(
            [r](Tape<double>& t, const std::vector<Var<double>>& v) {
                return project(t, abs(v[0]), r);
            },
            {rand_tensor_nonzero(rng, s)}, s);
    });

    cases.emplace_back("exp", [ew_shape](Rng& rng) {
        Shape s = ew_shape(rng);
        Tensor<double> r = rand_tensor(rng, s);
        return run_case(
            [r](Tape<double>& t, const std::vector<Var<double>>& v) {
                return project(t, exp(v[0]), r);
            },
            {rand_tensor(rng, s, -1.5, 1.5)}, s);
    });

    cases.emplace_back("log", [ew_shape](Rng& rng) {
        Shape s = ew_shape(rng);
        Tensor<double> r = rand_tensor(rng, s);
        return run_case(
            [r](Tape<double>& t, const std::vector<Var<double>>& v) {
                return project(t, log(v[0]), r);
            },
            {rand_tensor(rng, s, 0.1, 2.5)}, s);
    });

    cases.emplace_back("relu", [ew_shape](Rng& rng) {
        Shape s = ew_shape(rng);
        Tensor<double> r = rand_tensor(rng, s);
        return run_case(
            [r](Tape<double>& t, const std::vector<Var<double>>& v) {
                return project(t, relu(v[0]), r);
            },
            {rand_tensor_nonzero(rng, s)}, s);
    });

    cases.emplace_back("reshape", [](Rng& rng) {
        const size_t m = 2 + rng.below(3), n = 2 + rng.below(3);
        Shape s{m, n};
        Tensor<double> r = rand_tensor(rng, {m * n});
        return run_case(
            [r, m, n](Tape<double>& t, const std::vector<Var<double>>& v) {
                return project(t, reshape(v[0], {m * n}), r);
            },
            {rand_tensor(rng, s)}, s);
    });

    cases.emplace_back("transpose_last2", [](Rng& rng) {
        Shape s{1 + rng.below(2), 2 + rng.below(3), 2 + rng.below(3)};
        Tensor<double> r = rand_tensor(rng, {s[0], s[2], s[1]});
        return run_case(
            [r](Tape<double>& t, const std::vector<Var<double>>& v) {
                return project(t, transpose_last2(v[0]), r);
            },
            {rand_tensor(rng, s)}, s);
    });

    cases.emplace_back("matmul", [](Rng& rng) {
        const size_t m = 1 + rng.below(4), k = 1 + rng.below(4), n = 1 + rng.below(4);
        Tensor<double> r = rand_tensor(rng, {m, n});
        return run_case(
            [r](Tape<double>& t, const std::vector<Var<double>>& v) {
                return project(t, matmul(v[0], v[1]), r);
            },
            {rand_tensor(rng, {m, k}), rand_tensor(rng, {k, n})}, {m, k, n});
    });

    cases.emplace_back("bmm", [](Rng& rng) {
        const size_t b = 1 + rng.below(2), m = 1 + rng.below(4), k = 1 + rng.below(4),
                     n = 1 + rng.below(4);
        Tensor<double> r = rand_tensor(rng, {b, m, n});
        return run_case(
            [r](Tape<double>& t, const std::vector<Var<double>>& v) {
                return project(t, bmm(v[0], v[1]), r);
            },
            {rand_tensor(rng, {b, m, k}), rand_tensor(rng, {b, k, n})}, {b, m, k, n});
    });

    cases.emplace_back("softmax_rows", [](Rng& rng) {
        Shape s{2 + rng.below(3), 2 + rng.below(4)};
        Tensor<double> r = rand_tensor(rng, s);
        return run_case(
            [r](Tape<double>& t, const std::vector<Var<double>>& v) {
                return project(t, softmax_rows(v[0]), r);
            },
            {rand_tensor(rng, s, -3, 3)}, s);
    });

    cases.emplace_back("sum_all", [ew_shape](Rng& rng) {
        Shape s = ew_shape(rng);
        return run_case(
            [](Tape<double>&, const std::vector<Var<double>>& v) { return sum_all(v[0]); },
            {rand_tensor(rng, s)}, s);
    });

    cases.emplace_back("mean_all", [ew_shape](Rng& rng) {
        Shape s = ew_shape(rng);
        return run_case(
            [](Tape<double>&, const std::vector<Var<double>>& v) { return mean_all(v[0]); },
            {rand_tensor(rng, s)}, s);
    });

    for (auto op : {Reduce::sum, Reduce::mean, Reduce::max}) {
        const char* name = op == Reduce::sum    ? "reduce_sum"
                           : op == Reduce::mean ? "reduce_mean"
                                                : "reduce_max";
        cases.emplace_back(name, [op](Rng& rng) {
            Shape s{2 + rng.below(2), 2 + rng.below(3), 2 + rng.below(3)};
            const size_t axis = rng.below(3);
            Tensor<double> x = rand_tensor(rng, s);
            if (op == Reduce::max) {
                // Keep a clear winner along the reduced axis.
                for (size_t i = 0; i < x.numel(); ++i)
                    x[i] = std::floor(x[i] * 50.0) * 0.04 + 0.37 * ((i * 2654435761u) % 97) / 97.0;
            }
            Shape out = s;
            out.erase(out.begin() + static_cast<long>(axis));
            Tensor<double> r = rand_tensor(rng, out);
            return run_case(
                [r, axis, op](Tape<double>& t, const std::vector<Var<double>>& v) {
                    return project(t, reduce_axis(v[0], axis, op), r);
                },
                {x}, s);
        });
    }

    cases.emplace_back("l2_normalize_rows", [](Rng& rng) {
        Shape s{2 + rng.below(2), 3 + rng.below(3)};
        Tensor<double> r = rand_tensor(rng, s);
        return run_case(
            [r](Tape<double>& t, const std::vector<Var<double>>& v) {
                return project(t, l2_normalize_rows(v[0]), r);
            },
            {rand_tensor_nonzero(rng, s, 0.2)}, s);
    });

    cases.emplace_back("conv2d", [](Rng& rng) {
        const size_t b = 1 + rng.below(2), ci = 1 + rng.below(3), co = 1 + rng.below(3);
        const size_t h = 4 + rng.below(3), w = 4 + rng.below(3);
        const int k = rng.bernoulli(0.3) ? 1 : 3;
        const int stride = rng.bernoulli(0.5) ? 2 : 1;
        const int dilation = k == 1 ? 1 : (rng.bernoulli(0.5) ? 2 : 1);
        const int pad = same_padding(k, dilation);
        const size_t ho = conv_out_extent(h, k, stride, dilation, pad, "gradcheck");
        const size_t wo = conv_out_extent(w, k, stride, dilation, pad, "gradcheck");
        Tensor<double> r = rand_tensor(rng, {b, co, ho, wo});
        return run_case(
            [r, stride, dilation, pad](Tape<double>& t, const std::vector<Var<double>>& v) {
                return project(t, conv2d(v[0], v[1], v[2], stride, dilation, pad), r);
            },
            {rand_tensor(rng, {b, ci, h, w}),
             rand_tensor(rng, {co, ci, static_cast<size_t>(k), static_cast<size_t>(k)}),
             rand_tensor(rng, {co})},
            {b, ci, h, w});
    });

    cases.emplace_back("upsample_bilinear", [](Rng& rng) {
        const size_t b = 1 + rng.below(2), c = 1 + rng.below(3);
        const size_t h = 2 + rng.below(3), w = 2 + rng.below(3);
        const size_t oh = h + rng.below(h + 1), ow = w + rng.below(w + 1);
        Tensor<double> r = rand_tensor(rng, {b, c, oh, ow});
        return run_case(
            [r, oh, ow](Tape<double>& t, const std::vector<Var<double>>& v) {
                return project(t, upsample_bilinear(v[0], oh, ow), r);
            },
            {rand_tensor(rng, {b, c, h, w})}, {b, c, h, w});
    });

    cases.emplace_back("s_pfs", [](Rng& rng) {
        const size_t b = 1 + rng.below(2), c = 1 + rng.below(4);
        const size_t h = 1 + rng.below(3), w = 2 + rng.below(2);
        Tensor<double> r = rand_tensor(rng, {b, h * w, h * w});
        return run_case(
            [r](Tape<double>& t, const std::vector<Var<double>>& v) {
                return project(t, s_pfs(v[0]).m, r);
            },
            {rand_tensor(rng, {b, c, h, w}, -1.5, 1.5)}, {b, c, h, w});
    });

    cases.emplace_back("augment", [](Rng& rng) {
        const size_t b = 1, c = 1 + rng.below(3);
        const size_t h = 1 + rng.below(3), w = 2 + rng.below(2);
        Tensor<double> r = rand_tensor(rng, {b, c, h, w});
        return run_case(
            [r, h, w](Tape<double>& t, const std::vector<Var<double>>& v) {
                PfsMap<double> m = s_pfs(v[0]);
                return project(t, augment(v[0], m, v[1]), r);
            },
            {rand_tensor(rng, {b, c, h, w}, -1.5, 1.5),
             Tensor<double>::scalar(rng.uniform(-0.5, 0.5))},
            {b, c, h, w});
    });

    // Losses. Teacher-side quantities are constants, as in training.
    cases.emplace_back("hard_ce", [](Rng& rng) {
        const size_t b = 1 + rng.below(2), c = 2 + rng.below(4);
        const size_t h = 2 + rng.below(4), w = 2 + rng.below(4);
        LossConfig cfg;
        cfg.pixel_reduction = rng.bernoulli(0.8) ? PixelReduction::mean : PixelReduction::sum;
        Tensor<uint8_t> y = rand_labels(rng, b, h, w, static_cast<int>(c), 0.1, cfg.ignore_index);
        return run_case(
            [y, cfg](Tape<double>&, const std::vector<Var<double>>& v) {
                return hard_ce(v[0], y, cfg);
            },
            {rand_tensor(rng, {b, c, h, w})}, {b, c, h, w});
    });

    cases.emplace_back("soft_mimic", [](Rng& rng) {
        const size_t b = 1 + rng.below(2), c = 2 + rng.below(4);
        const size_t h = 2 + rng.below(4), w = 2 + rng.below(4);
        LossConfig cfg;
        Tensor<double> zt = rand_tensor(rng, {b, c, h, w});
        Tensor<double> pt = soft_targets(zt, static_cast<double>(cfg.temperature));
        Tensor<double> w1 = Tensor<double>::full({b, h, w}, 1.0);
        Tensor<uint8_t> y = rand_labels(rng, b, h, w, static_cast<int>(c), 0.1, cfg.ignore_index);
        return run_case(
            [pt, w1, y, cfg](Tape<double>&, const std::vector<Var<double>>& v) {
                return soft_ce_weighted(v[0], pt, w1, y, cfg);
            },
            {rand_tensor(rng, {b, c, h, w})}, {b, c, h, w});
    });

    cases.emplace_back("kd_pixel_loss", [](Rng& rng) {
        const size_t b = 1 + rng.below(2), c = 2 + rng.below(4);
        const size_t h = 2 + rng.below(4), w = 2 + rng.below(4);
        LossConfig cfg;
        cfg.mu = rng.uniform(0.2, 2.0);
        Tensor<double> zt = rand_tensor(rng, {b, c, h, w});
        Tensor<double> pt = soft_targets(zt, static_cast<double>(cfg.temperature));
        Tensor<double> wmap = rand_tensor(rng, {b, h, w}, 0.0, 1.0);
        Tensor<uint8_t> y = rand_labels(rng, b, h, w, static_cast<int>(c), 0.1, cfg.ignore_index);
        return run_case(
            [pt, wmap, y, cfg](Tape<double>&, const std::vector<Var<double>>& v) {
                return kd_pixel_loss_with_weights(v[0], pt, y, wmap, cfg).total;
            },
            {rand_tensor(rng, {b, c, h, w})}, {b, c, h, w});
    });

    cases.emplace_back("pfs_loss", [](Rng& rng) {
        const size_t b = 1 + rng.below(2), c = 1 + rng.below(4);
        const size_t h = 1 + rng.below(3), w = 2 + rng.below(2);
        const size_t hw = h * w;
        Tensor<double> mt = ref::softmax_rows(rand_tensor(rng, {b, hw, hw}));
        return run_case(
            [mt, h, w](Tape<double>& t, const std::vector<Var<double>>& v) {
                PfsMap<double> teacher{t.constant(mt), h, w};
                return pfs_loss(teacher, s_pfs(v[0]));
            },
            {rand_tensor(rng, {b, c, h, w}, -1.5, 1.5)}, {b, c, h, w});
    });

    // Full objective through a miniature head: features -> similarity map ->
    // augmentation -> 1x1 classifier, pixel loss plus weighted pfs loss. The
    // gap weights are frozen inputs here; the weights are detached during
    // training, so a finite-difference check must hold them fixed too.
    cases.emplace_back("total_loss", [](Rng& rng) {
        const size_t b = 1, c = 2 + rng.below(2), classes = 2 + rng.below(2);
        const size_t h = 2 + rng.below(2), w = 2 + rng.below(2);
        const size_t hw = h * w;
        LossConfig cfg;
        cfg.mu = 1.0;
        cfg.lambda = rng.uniform(0.5, 4.0);
        Tensor<double> zt = rand_tensor(rng, {b, classes, h, w});
        Tensor<double> pt = soft_targets(zt, static_cast<double>(cfg.temperature));
        Tensor<double> wmap = rand_tensor(rng, {b, h, w}, 0.0, 1.0);
        Tensor<double> mt = ref::softmax_rows(rand_tensor(rng, {b, hw, hw}));
        Tensor<uint8_t> y =
            rand_labels(rng, b, h, w, static_cast<int>(classes), 0.1, cfg.ignore_index);
        return run_case(
            [pt, wmap, mt, y, cfg, h, w](Tape<double>& t, const std::vector<Var<double>>& v) {
                PfsMap<double> m = s_pfs(v[0]);
                Var<double> fo = augment(v[0], m, v[1]);
                Var<double> logits = conv2d(fo, v[2], v[3], 1, 1, 0);
                PfsMap<double> teacher{t.constant(mt), h, w};
                ClsLoss<double> cls = kd_pixel_loss_with_weights(logits, pt, y, wmap, cfg);
                Var<double> lp = pfs_loss(teacher, m);
                return add(cls.total, scale(lp, cfg.lambda));
            },
            {rand_tensor(rng, {b, c, h, w}, -1.5, 1.5),
             Tensor<double>::scalar(rng.uniform(-0.3, 0.3)),
             rand_tensor(rng, {classes, c, 1, 1}), rand_tensor(rng, {classes})},
            {b, c, h, w});
    });

    cases.emplace_back("hint", [](Rng& rng) {
        const size_t b = 1 + rng.below(2), cs = 1 + rng.below(3), ct = 1 + rng.below(3);
        const size_t h = 2 + rng.below(3), w = 2 + rng.below(3);
        Tensor<double> tf = rand_tensor(rng, {b, ct, h, w});
        Conv2dLayer<double> adapter(static_cast<int>(ct), static_cast<int>(cs), 1);
        return run_case(
            [tf, adapter](Tape<double>&, const std::vector<Var<double>>& v) {
                return baseline_hint(v[0], tf, v[1], v[2], adapter);
            },
            {rand_tensor(rng, {b, cs, h, w}),
             rand_tensor(rng, {ct, cs, 1, 1}), rand_tensor(rng, {ct})},
            {b, cs, h, w});
    });

    cases.emplace_back("attention", [](Rng& rng) {
        const size_t b = 1 + rng.below(2), cs = 1 + rng.below(3), ct = 1 + rng.below(3);
        const size_t h = 2 + rng.below(3), w = 2 + rng.below(3);
        Tensor<double> tf = rand_tensor(rng, {b, ct, h, w});
        return run_case(
            [tf](Tape<double>&, const std::vector<Var<double>>& v) {
                return baseline_attention(v[0], tf);
            },
            {rand_tensor(rng, {b, cs, h, w}, 0.2, 2.0)}, {b, cs, h, w});
    });

    // The two learned projections of the transformed variant get gradients.
    cases.emplace_back("c_pfs", [](Rng& rng) {
        const size_t b = 1, c = 2 + rng.below(3);
        const size_t h = 1 + rng.below(3), w = 2 + rng.below(2);
        CPfsTransforms<double> tr(static_cast<int>(c));
        const size_t ct = static_cast<size_t>(tr.w1.out_channels());
        Tensor<double> r = rand_tensor(rng, {b, h * w, h * w});
        return run_case(
            [r, tr](Tape<double>& t, const std::vector<Var<double>>& v) {
                return project(t, c_pfs(v[0], v[1], v[2], v[3], v[4], tr).m, r);
            },
            {rand_tensor(rng, {b, c, h, w}, -1.5, 1.5), rand_tensor(rng, {ct, c, 1, 1}),
             rand_tensor(rng, {ct}), rand_tensor(rng, {ct, c, 1, 1}), rand_tensor(rng, {ct})},
            {b, c, h, w});
    });

    return cases;
}

}  // namespace

SuiteResult run_oracle_suite(int instances_per_op, std::ostream& os, uint64_t seed) {
    const auto start = std::chrono::steady_clock::now();
    SuiteResult result;
    os << "op,instances,max_abs_err,pass\n";
    constexpr double kTol = 1e-10;
    char row[160];
    for (const auto& c : oracle_cases()) {
        Rng rng(derive_seed(seed, std::hash<std::string>{}(c.name)));
        double worst = 0;
        for (int i = 0; i < instances_per_op; ++i) worst = std::max(worst, c.run(rng));
        const bool ok = worst <= kTol;
        ++result.checks;
        if (!ok) ++result.failures;
        std::snprintf(row, sizeof(row), "%s,%d,%.3e,%d\n", c.name, instances_per_op, worst,
                      ok ? 1 : 0);
        os << row;
    }
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

SuiteResult run_gradcheck_suite(int configs_per_op, std::ostream& os, uint64_t seed) {
    const auto start = std::chrono::steady_clock::now();
    SuiteResult result;
    os << "op_name,shape,max_rel_err,pass\n";
    constexpr double kTol = 1e-4;
    char row[160];
    for (const auto& [name, fn] : grad_cases()) {
        Rng rng(derive_seed(seed, std::hash<std::string>{}(name)));
        for (int i = 0; i < configs_per_op; ++i) {
            const GradOutcome out = fn(rng);
            const bool ok = out.max_rel_err <= kTol;
            ++result.checks;
            if (!ok) ++result.failures;
            std::snprintf(row, sizeof(row), "%s,\"%s\",%.3e,%d\n", name, out.shape.c_str(),
                          out.max_rel_err, ok ? 1 : 0);
            os << row;
        }
    }
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

}  // namespace pfsd
