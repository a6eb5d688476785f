#pragma once

#include <deque>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "pfsd/tensor.hpp"

namespace pfsd {

template <std::floating_point T>
class Tape;

// Handle to a node on a tape. Cheap to copy; the tape owns the storage.
template <std::floating_point T>
struct Var {
    Tape<T>* tape = nullptr;
    int id = -1;

    const Tensor<T>& value() const { return tape->value(id); }
    const Tensor<T>& grad() const { return tape->grad(id); }
    bool requires_grad() const { return tape->requires_grad(id); }
};

// Append-only reverse-mode tape. Forward values are computed eagerly when an
// op is recorded; backward() replays the registered adjoints in reverse
// recording order, which is a valid topological order by construction.
template <std::floating_point T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, int self)>;

    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        std::vector<int> parents;
        BackwardFn backward;
        bool requires_grad = false;
    };

    Var<T> leaf(Tensor<T> value, bool requires_grad) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return {this, static_cast<int>(nodes_.size()) - 1};
    }

    Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

    // Core primitive: every op funnels through here. The adjoint runs only if
    // some parent needs a gradient, so constant subgraphs cost nothing extra.
    Var<T> record(Tensor<T> value, std::vector<int> parents, BackwardFn backward) {
        Node n;
        n.value = std::move(value);
        for (int p : parents) {
            check_id(p);
            n.requires_grad = n.requires_grad || nodes_[static_cast<size_t>(p)].requires_grad;
        }
        n.parents = std::move(parents);
        if (n.requires_grad) n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return {this, static_cast<int>(nodes_.size()) - 1};
    }

    // Seeds d(loss)/d(loss) = 1 and runs every adjoint once, newest first.
    // Grads are reset on entry, so repeated calls give identical results and
    // nodes unreachable from the loss keep zero gradients.
    void backward(Var<T> loss) {
        check_id(loss.id);
        if (loss.value().rank() != 0)
            throw ShapeError("backward needs a rank-0 loss, got " +
                             shape_str(loss.value().shape()));
        for (auto& n : nodes_)
            n.grad = n.requires_grad ? Tensor<T>(n.value.shape()) : Tensor<T>();
        if (!nodes_[static_cast<size_t>(loss.id)].requires_grad) return;
        nodes_[static_cast<size_t>(loss.id)].grad[0] = T(1);
        for (int i = loss.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.requires_grad && n.backward) n.backward(*this, i);
        }
    }

    const Tensor<T>& value(int id) const {
        check_id(id);
        return nodes_[static_cast<size_t>(id)].value;
    }

    const Tensor<T>& grad(int id) const {
        check_id(id);
        return nodes_[static_cast<size_t>(id)].grad;
    }

    bool requires_grad(int id) const {
        check_id(id);
        return nodes_[static_cast<size_t>(id)].requires_grad;
    }

    const std::vector<int>& parents(int id) const {
        check_id(id);
        return nodes_[static_cast<size_t>(id)].parents;
    }

    // Accumulates into a parent's gradient buffer; no-op for constants.
    void accumulate_grad(int id, const Tensor<T>& g) {
        check_id(id);
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.requires_grad) return;
        if (!n.grad.same_shape(n.value))
            throw ShapeError("gradient buffer not initialized; accumulate outside backward?");
        if (!g.same_shape(n.value))
            throw ShapeError("gradient shape " + shape_str(g.shape()) + " != value shape " +
                             shape_str(n.value.shape()));
        for (size_t i = 0; i < g.numel(); ++i) n.grad[i] += g[i];
    }

    size_t size() const { return nodes_.size(); }

private:
    void check_id(int id) const {
        if (id < 0 || static_cast<size_t>(id) >= nodes_.size())
            throw Error("invalid tape node id " + std::to_string(id));
    }

    std::deque<Node> nodes_;  // stable references across record() calls
};

// ---------------------------------------------------------------------------
// Recorded ops. Adjoints read parent values straight from the tape, so no
// forward tensors are copied into closures.

namespace ad_detail {

template <std::floating_point T>
Tape<T>& tape_of(Var<T> a, Var<T> b) {
    if (a.tape != b.tape || a.tape == nullptr) throw Error("vars from different tapes");
    return *a.tape;
}

}  // namespace ad_detail

template <std::floating_point T>
Var<T> add(Var<T> a, Var<T> b) {
    Tape<T>& t = ad_detail::tape_of(a, b);
    return t.record(add(a.value(), b.value()), {a.id, b.id}, [](Tape<T>& tp, int self) {
        const Tensor<T>& g = tp.grad(self);
        tp.accumulate_grad(tp.parents(self)[0], g);
        tp.accumulate_grad(tp.parents(self)[1], g);
    });
}

template <std::floating_point T>
Var<T> sub(Var<T> a, Var<T> b) {
    Tape<T>& t = ad_detail::tape_of(a, b);
    return t.record(sub(a.value(), b.value()), {a.id, b.id}, [](Tape<T>& tp, int self) {
        const Tensor<T>& g = tp.grad(self);
        tp.accumulate_grad(tp.parents(self)[0], g);
        Tensor<T> neg(g.shape());
        for (size_t i = 0; i < g.numel(); ++i) neg[i] = -g[i];
        tp.accumulate_grad(tp.parents(self)[1], neg);
    });
}

template <std::floating_point T>
Var<T> mul(Var<T> a, Var<T> b) {
    Tape<T>& t = ad_detail::tape_of(a, b);
    return t.record(mul(a.value(), b.value()), {a.id, b.id}, [](Tape<T>& tp, int self) {
        const Tensor<T>& g = tp.grad(self);
        const int pa = tp.parents(self)[0], pb = tp.parents(self)[1];
        const Tensor<T>&va = tp.value(pa), &vb = tp.value(pb);
        Tensor<T> da(g.shape()), db(g.shape());
        for (size_t i = 0; i < g.numel(); ++i) {
            da[i] = g[i] * vb[i];
            db[i] = g[i] * va[i];
        }
        tp.accumulate_grad(pa, da);
        tp.accumulate_grad(pb, db);
    });
}

template <std::floating_point T>
Var<T> scale(Var<T> a, T s) {
    return a.tape->record(scale(a.value(), s), {a.id}, [s](Tape<T>& tp, int self) {
        tp.accumulate_grad(tp.parents(self)[0], scale(tp.grad(self), s));
    });
}

// Multiply by a rank-0 variable (used for the learnable residual scale).
template <std::floating_point T>
Var<T> scale_var(Var<T> a, Var<T> s) {
    Tape<T>& t = ad_detail::tape_of(a, s);
    if (s.value().rank() != 0) throw ShapeError("scale_var expects a rank-0 scalar");
    const T sv = s.value().item();
    return t.record(scale(a.value(), sv), {a.id, s.id}, [](Tape<T>& tp, int self) {
        const Tensor<T>& g = tp.grad(self);
        const int pa = tp.parents(self)[0], ps = tp.parents(self)[1];
        const T sv2 = tp.value(ps).item();
        tp.accumulate_grad(pa, scale(g, sv2));
        const Tensor<T>& va = tp.value(pa);
        T ds = 0;
        for (size_t i = 0; i < g.numel(); ++i) ds += g[i] * va[i];
        tp.accumulate_grad(ps, Tensor<T>::scalar(ds));
    });
}

// Subgradient at 0 is taken as 0.
template <std::floating_point T>
Var<T> abs(Var<T> a) {
    return a.tape->record(abs(a.value()), {a.id}, [](Tape<T>& tp, int self) {
        const Tensor<T>& g = tp.grad(self);
        const Tensor<T>& x = tp.value(tp.parents(self)[0]);
        Tensor<T> dx(g.shape());
        for (size_t i = 0; i < g.numel(); ++i)
            dx[i] = x[i] > T(0) ? g[i] : (x[i] < T(0) ? -g[i] : T(0));
        tp.accumulate_grad(tp.parents(self)[0], dx);
    });
}

template <std::floating_point T>
Var<T> exp(Var<T> a) {
    return a.tape->record(exp(a.value()), {a.id}, [](Tape<T>& tp, int self) {
        const Tensor<T>& g = tp.grad(self);
        const Tensor<T>& y = tp.value(self);
        Tensor<T> dx(g.shape());
        for (size_t i = 0; i < g.numel(); ++i) dx[i] = g[i] * y[i];
        tp.accumulate_grad(tp.parents(self)[0], dx);
    });
}

template <std::floating_point T>
Var<T> log(Var<T> a) {
    return a.tape->record(log(a.value()), {a.id}, [](Tape<T>& tp, int self) {
        const Tensor<T>& g = tp.grad(self);
        const Tensor<T>& x = tp.value(tp.parents(self)[0]);
        Tensor<T> dx(g.shape());
        for (size_t i = 0; i < g.numel(); ++i) dx[i] = g[i] / x[i];
        tp.accumulate_grad(tp.parents(self)[0], dx);
    });
}

template <std::floating_point T>
Var<T> relu(Var<T> a) {
    return a.tape->record(max0(a.value()), {a.id}, [](Tape<T>& tp, int self) {
        const Tensor<T>& g = tp.grad(self);
        const Tensor<T>& x = tp.value(tp.parents(self)[0]);
        Tensor<T> dx(g.shape());
        for (size_t i = 0; i < g.numel(); ++i) dx[i] = x[i] > T(0) ? g[i] : T(0);
        tp.accumulate_grad(tp.parents(self)[0], dx);
    });
}

template <std::floating_point T>
Var<T> reshape(Var<T> a, Shape shape) {
    return a.tape->record(reshape(a.value(), std::move(shape)), {a.id},
                          [](Tape<T>& tp, int self) {
                              const int p = tp.parents(self)[0];
                              tp.accumulate_grad(p, reshape(tp.grad(self), tp.value(p).shape()));
                          });
}

template <std::floating_point T>
Var<T> transpose_last2(Var<T> a) {
    return a.tape->record(transpose_last2(a.value()), {a.id}, [](Tape<T>& tp, int self) {
        tp.accumulate_grad(tp.parents(self)[0], transpose_last2(tp.grad(self)));
    });
}

template <std::floating_point T>
Var<T> matmul(Var<T> a, Var<T> b) {
    Tape<T>& t = ad_detail::tape_of(a, b);
    return t.record(matmul(a.value(), b.value()), {a.id, b.id}, [](Tape<T>& tp, int self) {
        const Tensor<T>& g = tp.grad(self);
        const int pa = tp.parents(self)[0], pb = tp.parents(self)[1];
        const Tensor<T>&va = tp.value(pa), &vb = tp.value(pb);
        const size_t m = va.dim(0), k = va.dim(1), n = vb.dim(1);
        if (tp.requires_grad(pa)) {
            Tensor<T> da({m, k});
            gemm_nt_acc(da.data(), g.data(), vb.data(), m, n, k);
            tp.accumulate_grad(pa, da);
        }
        if (tp.requires_grad(pb)) {
            Tensor<T> db({k, n});
            gemm_tn_acc(db.data(), va.data(), g.data(), m, k, n);
            tp.accumulate_grad(pb, db);
        }
    });
}

template <std::floating_point T>
Var<T> bmm(Var<T> a, Var<T> b) {
    Tape<T>& t = ad_detail::tape_of(a, b);
    return t.record(bmm(a.value(), b.value()), {a.id, b.id}, [](Tape<T>& tp, int self) {
        const Tensor<T>& g = tp.grad(self);
        const int pa = tp.parents(self)[0], pb = tp.parents(self)[1];
        const Tensor<T>&va = tp.value(pa), &vb = tp.value(pb);
        const size_t bs = va.dim(0), m = va.dim(1), k = va.dim(2), n = vb.dim(2);
        if (tp.requires_grad(pa)) {
            Tensor<T> da(va.shape());
            for (size_t i = 0; i < bs; ++i)
                gemm_nt_acc(da.data() + i * m * k, g.data() + i * m * n, vb.data() + i * k * n, m,
                            n, k);
            tp.accumulate_grad(pa, da);
        }
        if (tp.requires_grad(pb)) {
            Tensor<T> db(vb.shape());
            for (size_t i = 0; i < bs; ++i)
                gemm_tn_acc(db.data() + i * k * n, va.data() + i * m * k, g.data() + i * m * n, m,
                            k, n);
            tp.accumulate_grad(pb, db);
        }
    });
}

template <std::floating_point T>
Var<T> softmax_rows(Var<T> a) {
    return a.tape->record(softmax_rows(a.value()), {a.id}, [](Tape<T>& tp, int self) {
        const Tensor<T>& g = tp.grad(self);
        const Tensor<T>& y = tp.value(self);
        const size_t n = y.dim(y.rank() - 1);
        const size_t rows = y.numel() / n;
        Tensor<T> dx(y.shape());
        for (size_t r = 0; r < rows; ++r) {
            const T* yr = y.data() + r * n;
            const T* gr = g.data() + r * n;
            T* dr = dx.data() + r * n;
            T dot = 0;
            for (size_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
            for (size_t j = 0; j < n; ++j) dr[j] = yr[j] * (gr[j] - dot);
        }
        tp.accumulate_grad(tp.parents(self)[0], dx);
    });
}

template <std::floating_point T>
Var<T> sum_all(Var<T> a) {
    return a.tape->record(Tensor<T>::scalar(sum_all(a.value())), {a.id},
                          [](Tape<T>& tp, int self) {
                              const T g = tp.grad(self).item();
                              const int p = tp.parents(self)[0];
                              tp.accumulate_grad(p, Tensor<T>::full(tp.value(p).shape(), g));
                          });
}

template <std::floating_point T>
Var<T> mean_all(Var<T> a) {
    return a.tape->record(Tensor<T>::scalar(mean_all(a.value())), {a.id},
                          [](Tape<T>& tp, int self) {
                              const int p = tp.parents(self)[0];
                              const T g =
                                  tp.grad(self).item() / static_cast<T>(tp.value(p).numel());
                              tp.accumulate_grad(p, Tensor<T>::full(tp.value(p).shape(), g));
                          });
}

template <std::floating_point T>
Var<T> reduce_axis(Var<T> a, size_t axis, Reduce op) {
    return a.tape->record(
        reduce_axis(a.value(), axis, op), {a.id}, [axis, op](Tape<T>& tp, int self) {
            const Tensor<T>& g = tp.grad(self);
            const int p = tp.parents(self)[0];
            const Tensor<T>& x = tp.value(p);
            const size_t extent = x.dim(axis);
            size_t outer = 1, inner = 1;
            for (size_t d = 0; d < axis; ++d) outer *= x.dim(d);
            for (size_t d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
            Tensor<T> dx(x.shape());
            for (size_t o = 0; o < outer; ++o) {
                const T* gr = g.data() + o * inner;
                T* base = dx.data() + o * extent * inner;
                for (size_t i = 0; i < inner; ++i) {
                    switch (op) {
                        case Reduce::sum:
                            for (size_t e = 0; e < extent; ++e) base[e * inner + i] = gr[i];
                            break;
                        case Reduce::mean:
                            for (size_t e = 0; e < extent; ++e)
                                base[e * inner + i] = gr[i] / static_cast<T>(extent);
                            break;
                        case Reduce::max: {
                            // Grad routes to the first occurrence of the max.
                            const T* xb = x.data() + o * extent * inner;
                            size_t arg = 0;
                            T best = xb[i];
                            for (size_t e = 1; e < extent; ++e)
                                if (xb[e * inner + i] > best) {
                                    best = xb[e * inner + i];
                                    arg = e;
                                }
                            base[arg * inner + i] = gr[i];
                            break;
                        }
                    }
                }
            }
            tp.accumulate_grad(p, dx);
        });
}

// Rows scaled to unit L2 norm; all-zero rows stay zero.
template <std::floating_point T>
Var<T> l2_normalize_rows(Var<T> a) {
    const Tensor<T>& x = a.value();
    if (x.rank() != 2) throw ShapeError("l2_normalize_rows expects rank 2");
    const size_t m = x.dim(0), n = x.dim(1);
    Tensor<T> y(x.shape());
    for (size_t i = 0; i < m; ++i) {
        const T* xr = x.data() + i * n;
        T* yr = y.data() + i * n;
        T ss = 0;
        for (size_t j = 0; j < n; ++j) ss += xr[j] * xr[j];
        const T norm = std::sqrt(ss);
        const T inv = norm > T(0) ? T(1) / norm : T(0);
        for (size_t j = 0; j < n; ++j) yr[j] = xr[j] * inv;
    }
    ensure_finite(y, "l2_normalize_rows");
    return a.tape->record(std::move(y), {a.id}, [](Tape<T>& tp, int self) {
        const Tensor<T>& g = tp.grad(self);
        const int p = tp.parents(self)[0];
        const Tensor<T>& x = tp.value(p);
        const size_t m = x.dim(0), n = x.dim(1);
        Tensor<T> dx(x.shape());
        for (size_t i = 0; i < m; ++i) {
            const T* xr = x.data() + i * n;
            const T* gr = g.data() + i * n;
            T* dr = dx.data() + i * n;
            T ss = 0, xg = 0;
            for (size_t j = 0; j < n; ++j) {
                ss += xr[j] * xr[j];
                xg += xr[j] * gr[j];
            }
            const T norm = std::sqrt(ss);
            if (norm > T(0)) {
                const T inv = T(1) / norm;
                const T inv3 = inv * inv * inv;
                for (size_t j = 0; j < n; ++j) dr[j] = gr[j] * inv - xr[j] * xg * inv3;
            }
        }
        tp.accumulate_grad(p, dx);
    });
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checker.

struct GradCheckEntry {
    size_t input_index = 0;
    double max_rel_err = 0.0;
    size_t worst_coord = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> per_input;
    double max_rel_err = 0.0;
    bool pass = false;
};

// Central differences (f(x+h)-f(x-h))/2h against tape gradients, coordinate
// by coordinate. The relative-error denominator is floored so exactly-zero
// gradients compare against finite-difference noise sensibly.
template <typename F>
GradCheckReport gradcheck(F&& f, std::vector<Tensor<double>> inputs, double h = 1e-5,
                          double tol = 1e-4) {
    auto eval = [&](const std::vector<Tensor<double>>& xs) -> double {
        Tape<double> tape;
        std::vector<Var<double>> vars;
        vars.reserve(xs.size());
        for (const auto& x : xs) vars.push_back(tape.leaf(x, false));
        Var<double> out = f(tape, vars);
        if (out.value().rank() != 0) throw ShapeError("gradcheck function must return a scalar");
        return out.value().item();
    };

    // Analytic gradients at the unperturbed point.
    Tape<double> tape;
    std::vector<Var<double>> vars;
    vars.reserve(inputs.size());
    for (const auto& x : inputs) vars.push_back(tape.leaf(x, true));
    Var<double> out = f(tape, vars);
    if (out.value().rank() != 0) throw ShapeError("gradcheck function must return a scalar");
    tape.backward(out);

    GradCheckReport report;
    report.pass = true;
    for (size_t vi = 0; vi < inputs.size(); ++vi) {
        GradCheckEntry entry;
        entry.input_index = vi;
        const Tensor<double>& analytic = vars[vi].grad();
        for (size_t c = 0; c < inputs[vi].numel(); ++c) {
            const double keep = inputs[vi][c];
            inputs[vi][c] = keep + h;
            const double fp = eval(inputs);
            inputs[vi][c] = keep - h;
            const double fm = eval(inputs);
            inputs[vi][c] = keep;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[c];
            // The floor keeps finite-difference roundoff (about 1e-11 at
            // h = 1e-5) from registering as relative error on zero gradients.
            const double denom = std::max(std::fabs(a) + std::fabs(numeric), 1e-4);
            const double rel = std::fabs(a - numeric) / denom;
            if (rel > entry.max_rel_err) {
                entry.max_rel_err = rel;
                entry.worst_coord = c;
                entry.analytic = a;
                entry.numeric = numeric;
            }
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.per_input.push_back(entry);
    }
    report.pass = report.max_rel_err <= tol;
    return report;
}

}  // namespace pfsd
