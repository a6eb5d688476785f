#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "pfsd/error.hpp"

#if defined(_OPENMP)
#include <omp.h>
#include <sched.h>
#endif

namespace pfsd {

using Shape = std::vector<size_t>;

inline size_t numel_of(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

template <typename T>
struct dtype_traits;
template <>
struct dtype_traits<float> {
    static constexpr uint8_t code = 0;
    static constexpr const char* name = "f32";
};
template <>
struct dtype_traits<double> {
    static constexpr uint8_t code = 1;
    static constexpr const char* name = "f64";
};
template <>
struct dtype_traits<uint8_t> {
    static constexpr uint8_t code = 2;
    static constexpr const char* name = "u8";
};

namespace detail {

// Worker count for the parallel kernels, capped by the CPUs this process may
// actually use (affinity mask), not the machine total.
inline int thread_count() {
#if defined(_OPENMP)
    static const int n = [] {
        cpu_set_t mask;
        int cpus = 0;
        if (sched_getaffinity(0, sizeof(mask), &mask) == 0) cpus = CPU_COUNT(&mask);
        if (cpus <= 0) cpus = 1;
        if (const char* env = std::getenv("PFSD_THREADS")) {
            int v = std::atoi(env);
            if (v > 0) cpus = v;
        }
        return cpus;
    }();
    return n;
#else
    return 1;
#endif
}

}  // namespace detail

// Dense row-major tensor. Rank 0 holds exactly one scalar. Instantiated for
// float and double (math) and uint8_t (label/image storage, no math kernels).
template <typename T>
class Tensor {
public:
    Tensor() : shape_{}, data_(1, T{}) {}

    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(numel_of(shape_), T{}) {}

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != numel_of(shape_))
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }

    static Tensor scalar(T v) {
        Tensor t;
        t.data_[0] = v;
        return t;
    }

    static Tensor full(Shape shape, T v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    size_t rank() const { return shape_.size(); }
    const Shape& shape() const { return shape_; }
    size_t dim(size_t i) const { return shape_.at(i); }
    size_t numel() const { return data_.size(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](size_t i) { return data_[i]; }
    const T& operator[](size_t i) const { return data_[i]; }

    T item() const {
        if (numel() != 1)
            throw ShapeError("item() on tensor with " + std::to_string(numel()) + " elements");
        return data_[0];
    }

    template <typename... Ix>
    T& at(Ix... ix) {
        return data_[offset_of(ix...)];
    }
    template <typename... Ix>
    const T& at(Ix... ix) const {
        return data_[offset_of(ix...)];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

private:
    template <typename... Ix>
    size_t offset_of(Ix... ix) const {
        constexpr size_t n = sizeof...(Ix);
        if (n != shape_.size()) throw ShapeError("index rank mismatch");
        const size_t idx[] = {static_cast<size_t>(ix)...};
        size_t off = 0;
        for (size_t d = 0; d < n; ++d) off = off * shape_[d] + idx[d];
        return off;
    }

    Shape shape_;
    std::vector<T> data_;
};

template <typename T>
void ensure_finite(const Tensor<T>& t, const char* what) {
    if constexpr (std::floating_point<T>) {
        for (size_t i = 0; i < t.numel(); ++i) {
            if (!std::isfinite(t[i]))
                throw NumericError(std::string("non-finite value in ") + what);
        }
    }
}

// ---------------------------------------------------------------------------
// Raw GEMM helpers. All of them accumulate into c (caller zeroes first) and
// keep a fixed per-element summation order so parallel runs are bit-identical
// to sequential ones.

template <std::floating_point T>
void gemm_nn_acc(T* c, const T* a, const T* b, size_t m, size_t k, size_t n) {
#if defined(_OPENMP)
#pragma omp parallel for num_threads(detail::thread_count()) schedule(static) \
    if (m * n * k > 32768)
#endif
    for (long i = 0; i < static_cast<long>(m); ++i) {
        T* crow = c + static_cast<size_t>(i) * n;
        const T* arow = a + static_cast<size_t>(i) * k;
        for (size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = b + p * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m,k] += a[m,n] * b[k,n]^T
template <std::floating_point T>
void gemm_nt_acc(T* c, const T* a, const T* b, size_t m, size_t n, size_t k) {
#if defined(_OPENMP)
#pragma omp parallel for num_threads(detail::thread_count()) schedule(static) \
    if (m * n * k > 32768)
#endif
    for (long i = 0; i < static_cast<long>(m); ++i) {
        const T* arow = a + static_cast<size_t>(i) * n;
        T* crow = c + static_cast<size_t>(i) * k;
        for (size_t p = 0; p < k; ++p) {
            const T* brow = b + p * n;
            T acc = 0;
            for (size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
            crow[p] += acc;
        }
    }
}

// c[k,n] += a[m,k]^T * b[m,n]
template <std::floating_point T>
void gemm_tn_acc(T* c, const T* a, const T* b, size_t m, size_t k, size_t n) {
#if defined(_OPENMP)
#pragma omp parallel for num_threads(detail::thread_count()) schedule(static) \
    if (m * n * k > 32768)
#endif
    for (long p = 0; p < static_cast<long>(k); ++p) {
        T* crow = c + static_cast<size_t>(p) * n;
        for (size_t i = 0; i < m; ++i) {
            const T av = a[i * k + static_cast<size_t>(p)];
            const T* brow = b + i * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Public kernels.

template <std::floating_point T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul expects rank-2 inputs, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    if (a.dim(1) != b.dim(0))
        throw ShapeError("matmul inner extents differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    Tensor<T> c({a.dim(0), b.dim(1)});
    gemm_nn_acc(c.data(), a.data(), b.data(), a.dim(0), a.dim(1), b.dim(1));
    ensure_finite(c, "matmul");
    return c;
}

// Batched matmul: [B,m,k] x [B,k,n] -> [B,m,n].
template <std::floating_point T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
        throw ShapeError("bmm shape mismatch: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const size_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    Tensor<T> c({bs, m, n});
#if defined(_OPENMP)
#pragma omp parallel for num_threads(detail::thread_count()) schedule(static)
#endif
    for (long r = 0; r < static_cast<long>(bs * m); ++r) {
        const size_t bi = static_cast<size_t>(r) / m, i = static_cast<size_t>(r) % m;
        const T* arow = a.data() + (bi * m + i) * k;
        const T* bmat = b.data() + bi * k * n;
        T* crow = c.data() + (bi * m + i) * n;
        for (size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = bmat + p * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    ensure_finite(c, "bmm");
    return c;
}

// Softmax over the last axis; leading axes are treated as rows. Row max is
// subtracted before exponentiation.
template <std::floating_point T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    if (x.rank() < 1) throw ShapeError("softmax_rows needs rank >= 1");
    ensure_finite(x, "softmax_rows input");
    const size_t n = x.dim(x.rank() - 1);
    if (n == 0) throw ShapeError("softmax_rows on zero-length rows");
    const size_t rows = x.numel() / n;
    Tensor<T> y(x.shape());
#if defined(_OPENMP)
#pragma omp parallel for num_threads(detail::thread_count()) schedule(static) \
    if (rows * n > 16384)
#endif
    for (long r = 0; r < static_cast<long>(rows); ++r) {
        const T* in = x.data() + static_cast<size_t>(r) * n;
        T* out = y.data() + static_cast<size_t>(r) * n;
        T mx = in[0];
        for (size_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
        T sum = 0;
        for (size_t j = 0; j < n; ++j) {
            out[j] = std::exp(in[j] - mx);
            sum += out[j];
        }
        const T inv = T(1) / sum;
        for (size_t j = 0; j < n; ++j) out[j] *= inv;
    }
    return y;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel_of(shape) != x.numel())
        throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                         " changes element count");
    return Tensor<T>(std::move(shape), x.vec());
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& x) {
    if (x.rank() != 2) throw ShapeError("transpose2d expects rank 2");
    const size_t m = x.dim(0), n = x.dim(1);
    Tensor<T> y({n, m});
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) y[j * m + i] = x[i * n + j];
    return y;
}

// Swap the last two axes of a rank >= 2 tensor (materialized copy).
template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
    if (x.rank() < 2) throw ShapeError("transpose_last2 expects rank >= 2");
    Shape s = x.shape();
    const size_t n = s[s.size() - 1], m = s[s.size() - 2];
    std::swap(s[s.size() - 1], s[s.size() - 2]);
    const size_t outer = x.numel() / (m * n);
    Tensor<T> y(std::move(s));
    for (size_t o = 0; o < outer; ++o) {
        const T* in = x.data() + o * m * n;
        T* out = y.data() + o * m * n;
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
    }
    return y;
}

namespace detail {

template <typename T, typename F>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, F&& f, const char* what) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(what) + " shape mismatch: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    Tensor<T> c(a.shape());
    for (size_t i = 0; i < a.numel(); ++i) c[i] = f(a[i], b[i]);
    ensure_finite(c, what);
    return c;
}

template <typename T, typename F>
Tensor<T> map(const Tensor<T>& a, F&& f, const char* what) {
    Tensor<T> c(a.shape());
    for (size_t i = 0; i < a.numel(); ++i) c[i] = f(a[i]);
    ensure_finite(c, what);
    return c;
}

}  // namespace detail

template <std::floating_point T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::zip(a, b, [](T x, T y) { return x + y; }, "add");
}
template <std::floating_point T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::zip(a, b, [](T x, T y) { return x - y; }, "sub");
}
template <std::floating_point T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::zip(a, b, [](T x, T y) { return x * y; }, "mul");
}
template <std::floating_point T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    return detail::map(a, [s](T x) { return x * s; }, "scale");
}
template <std::floating_point T>
Tensor<T> abs(const Tensor<T>& a) {
    return detail::map(a, [](T x) { return std::fabs(x); }, "abs");
}
template <std::floating_point T>
Tensor<T> exp(const Tensor<T>& a) {
    return detail::map(a, [](T x) { return std::exp(x); }, "exp");
}
template <std::floating_point T>
Tensor<T> log(const Tensor<T>& a) {
    return detail::map(a, [](T x) { return std::log(x); }, "log");
}
template <std::floating_point T>
Tensor<T> max0(const Tensor<T>& a) {
    return detail::map(a, [](T x) { return x > T(0) ? x : T(0); }, "max0");
}

enum class Reduce { sum, mean, max };

// Reduce one axis away; the result drops that axis (rank-0 when none remain).
template <std::floating_point T>
Tensor<T> reduce_axis(const Tensor<T>& x, size_t axis, Reduce op) {
    if (axis >= x.rank()) throw ShapeError("reduce axis " + std::to_string(axis) +
                                           " out of range for " + shape_str(x.shape()));
    const size_t extent = x.dim(axis);
    if (extent == 0) throw ShapeError("reduce over empty axis");
    size_t outer = 1, inner = 1;
    for (size_t d = 0; d < axis; ++d) outer *= x.dim(d);
    for (size_t d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
    Shape out_shape;
    for (size_t d = 0; d < x.rank(); ++d)
        if (d != axis) out_shape.push_back(x.dim(d));
    Tensor<T> y(std::move(out_shape));
    for (size_t o = 0; o < outer; ++o) {
        const T* base = x.data() + o * extent * inner;
        T* out = y.data() + o * inner;
        for (size_t i = 0; i < inner; ++i) {
            T acc = base[i];
            for (size_t e = 1; e < extent; ++e) {
                const T v = base[e * inner + i];
                acc = (op == Reduce::max) ? std::max(acc, v) : acc + v;
            }
            if (op == Reduce::mean) acc /= static_cast<T>(extent);
            out[i] = acc;
        }
    }
    ensure_finite(y, "reduce");
    return y;
}

template <std::floating_point T>
T sum_all(const Tensor<T>& x) {
    T acc = 0;
    for (size_t i = 0; i < x.numel(); ++i) acc += x[i];
    if (!std::isfinite(acc)) throw NumericError("non-finite value in sum");
    return acc;
}

template <std::floating_point T>
T mean_all(const Tensor<T>& x) {
    if (x.numel() == 0) throw ShapeError("mean of empty tensor");
    return sum_all(x) / static_cast<T>(x.numel());
}

template <typename U, typename T>
Tensor<U> cast(const Tensor<T>& x) {
    Tensor<U> y(x.shape());
    for (size_t i = 0; i < x.numel(); ++i) y[i] = static_cast<U>(x[i]);
    return y;
}

}  // namespace pfsd
