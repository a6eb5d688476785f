#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "pfsd/rng.hpp"
#include "pfsd/tensor.hpp"
#include "pfsd/tensor_io.hpp"

using namespace pfsd;

namespace {

Tensor<double> rand_tensor(Rng& rng, Shape s, double lo = -2, double hi = 2) {
    Tensor<double> t(std::move(s));
    for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("matmul identity") {
    Tensor<double> eye({2, 2}, {1, 0, 0, 1});
    Tensor<double> x({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor<double> y = matmul(eye, x);
    for (size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("matmul rank-1 outer product") {
    Tensor<double> col({2, 1}, {1, 3});
    Tensor<double> row({1, 2}, {1, 3});
    Tensor<double> y = matmul(col, row);
    CHECK(y.at(0, 0) == 1.0);
    CHECK(y.at(0, 1) == 3.0);
    CHECK(y.at(1, 0) == 3.0);
    CHECK(y.at(1, 1) == 9.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
    Rng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        const size_t m = 1 + rng.below(32), k = 1 + rng.below(32), n = 1 + rng.below(32);
        Tensor<double> a = rand_tensor(rng, {m, k});
        Tensor<double> b = rand_tensor(rng, {k, n});
        Tensor<double> fast = matmul(a, b);
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) {
                double acc = 0;
                for (size_t p = 0; p < k; ++p) acc += a.at(i, p) * b.at(p, j);
                CHECK(std::fabs(fast.at(i, j) - acc) <= 1e-12);
            }
    }
}

TEST_CASE("matmul f32 matches oracle to relative 1e-4") {
    Rng rng(22);
    for (int trial = 0; trial < 20; ++trial) {
        const size_t m = 1 + rng.below(32), k = 1 + rng.below(32), n = 1 + rng.below(32);
        Tensor<float> a({m, k}), b({k, n});
        for (size_t i = 0; i < a.numel(); ++i) a[i] = static_cast<float>(rng.uniform(-2, 2));
        for (size_t i = 0; i < b.numel(); ++i) b[i] = static_cast<float>(rng.uniform(-2, 2));
        Tensor<float> fast = matmul(a, b);
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) {
                double acc = 0;
                for (size_t p = 0; p < k; ++p)
                    acc += static_cast<double>(a.at(i, p)) * static_cast<double>(b.at(p, j));
                CHECK(std::fabs(fast.at(i, j) - acc) <= 1e-4 * std::max(1.0, std::fabs(acc)));
            }
    }
}

TEST_CASE("matmul shape mismatch") {
    Tensor<double> a({2, 3}), b({2, 3});
    CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("softmax_rows basics") {
    Tensor<double> x({2, 2}, {0, 0, 1, 3});
    Tensor<double> y = softmax_rows(x);
    CHECK(y.at(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(y.at(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
    const double e1 = std::exp(1.0), e3 = std::exp(3.0);
    CHECK(y.at(1, 0) == doctest::Approx(e1 / (e1 + e3)).epsilon(1e-12));
    CHECK(y.at(1, 1) == doctest::Approx(e3 / (e1 + e3)).epsilon(1e-12));
    CHECK(y.at(1, 0) == doctest::Approx(0.1192).epsilon(1e-3));
    CHECK(y.at(1, 1) == doctest::Approx(0.8808).epsilon(1e-3));
}

TEST_CASE("softmax_rows shift invariance") {
    Tensor<double> big({1, 2}, {1000, 1001});
    Tensor<double> small({1, 2}, {0, 1});
    Tensor<double> yb = softmax_rows(big), ys = softmax_rows(small);
    CHECK(yb.at(0, 0) == doctest::Approx(ys.at(0, 0)).epsilon(1e-12));
    CHECK(yb.at(0, 1) == doctest::Approx(ys.at(0, 1)).epsilon(1e-12));
}

TEST_CASE("softmax_rows rows sum to one, entries in (0,1), shift invariant") {
    Rng rng(23);
    for (int trial = 0; trial < 200; ++trial) {
        const size_t m = 1 + rng.below(6), n = 1 + rng.below(8);
        Tensor<double> x = rand_tensor(rng, {m, n}, -3, 3);
        Tensor<double> y = softmax_rows(x);
        for (size_t i = 0; i < m; ++i) {
            double sum = 0;
            for (size_t j = 0; j < n; ++j) {
                CHECK(y.at(i, j) > 0.0);
                CHECK(y.at(i, j) <= 1.0);
                sum += y.at(i, j);
            }
            CHECK(std::fabs(sum - 1.0) <= 1e-6);
        }
        const double c = rng.uniform(-5, 5);
        Tensor<double> shifted = x;
        for (size_t j = 0; j < n; ++j) shifted.at(0, j) += c;
        Tensor<double> ys = softmax_rows(shifted);
        for (size_t j = 0; j < n; ++j)
            CHECK(std::fabs(ys.at(0, j) - y.at(0, j)) <= 1e-12);
    }
}

TEST_CASE("softmax_rows rejects non-finite input") {
    Tensor<double> x({1, 2}, {1.0, std::numeric_limits<double>::infinity()});
    CHECK_THROWS_AS(softmax_rows(x), NumericError);
}

TEST_CASE("reshape keeps row-major order") {
    Tensor<double> x({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor<double> y = reshape(x, {3, 2});
    CHECK(y.at(0, 0) == 1);
    CHECK(y.at(0, 1) == 2);
    CHECK(y.at(1, 0) == 3);
    CHECK(y.at(2, 1) == 6);
    CHECK_THROWS_AS(reshape(x, {4, 2}), ShapeError);
}

TEST_CASE("transpose2d") {
    Tensor<double> x({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor<double> y = transpose2d(x);
    CHECK(y.shape() == Shape{3, 2});
    CHECK(y.at(0, 1) == 4);
    CHECK(y.at(2, 0) == 3);
}

TEST_CASE("elementwise max0") {
    Tensor<double> x({2}, {-2.0, 3.5});
    Tensor<double> y = max0(x);
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 3.5);
}

TEST_CASE("sum of ones") {
    Tensor<double> x = Tensor<double>::full({4, 5}, 1.0);
    CHECK(sum_all(x) == 20.0);
}

TEST_CASE("reduce_axis") {
    Tensor<double> x({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor<double> s0 = reduce_axis(x, 0, Reduce::sum);
    CHECK(s0.shape() == Shape{3});
    CHECK(s0[0] == 5);
    CHECK(s0[2] == 9);
    Tensor<double> m1 = reduce_axis(x, 1, Reduce::mean);
    CHECK(m1[0] == doctest::Approx(2.0));
    CHECK(m1[1] == doctest::Approx(5.0));
    Tensor<double> mx = reduce_axis(x, 1, Reduce::max);
    CHECK(mx[0] == 3);
    CHECK(mx[1] == 6);
    CHECK_THROWS_AS(reduce_axis(x, 2, Reduce::sum), ShapeError);
}

TEST_CASE("tensor file round trip is bitwise for all dtypes and ranks 0-4") {
    Rng rng(31);
    const std::string path = tmp_path("pfsd_roundtrip.pfst");
    for (size_t rank = 0; rank <= 4; ++rank) {
        Shape shape;
        for (size_t d = 0; d < rank; ++d) shape.push_back(1 + rng.below(5));

        Tensor<double> td(shape);
        for (size_t i = 0; i < td.numel(); ++i) td[i] = rng.uniform(-1e6, 1e6);
        save_tensor(td, path);
        Tensor<double> rd = load_tensor<double>(path);
        CHECK(rd.shape() == td.shape());
        for (size_t i = 0; i < td.numel(); ++i)
            CHECK(std::memcmp(&rd[i], &td[i], sizeof(double)) == 0);

        Tensor<float> tf(shape);
        for (size_t i = 0; i < tf.numel(); ++i) tf[i] = static_cast<float>(rng.uniform(-1e3, 1e3));
        save_tensor(tf, path);
        Tensor<float> rf = load_tensor<float>(path);
        for (size_t i = 0; i < tf.numel(); ++i)
            CHECK(std::memcmp(&rf[i], &tf[i], sizeof(float)) == 0);

        Tensor<uint8_t> tu(shape);
        for (size_t i = 0; i < tu.numel(); ++i) tu[i] = static_cast<uint8_t>(rng.below(256));
        save_tensor(tu, path);
        Tensor<uint8_t> ru = load_tensor<uint8_t>(path);
        for (size_t i = 0; i < tu.numel(); ++i) CHECK(ru[i] == tu[i]);
    }
    std::filesystem::remove(path);
}

TEST_CASE("tensor file rejects bad magic") {
    const std::string path = tmp_path("pfsd_badmagic.pfst");
    {
        std::ofstream os(path, std::ios::binary);
        os << "XXXX" << '\x01' << '\x00' << '\x00';
    }
    CHECK_THROWS_AS(load_tensor<double>(path), FormatError);
    std::filesystem::remove(path);
}

TEST_CASE("tensor file rejects unsupported dtype code") {
    const std::string path = tmp_path("pfsd_baddtype.pfst");
    {
        std::ofstream os(path, std::ios::binary);
        os << "PFST" << '\x01' << '\x09' << '\x00';
    }
    CHECK_THROWS_AS(load_tensor<double>(path), FormatError);
    std::filesystem::remove(path);
}

TEST_CASE("tensor file rejects dtype mismatch and truncation") {
    const std::string path = tmp_path("pfsd_mismatch.pfst");
    Tensor<float> t({2, 2}, {1, 2, 3, 4});
    save_tensor(t, path);
    CHECK_THROWS_AS(load_tensor<double>(path), FormatError);
    CHECK(peek_tensor_dtype(path) == dtype_traits<float>::code);

    // Truncate the payload.
    std::filesystem::resize_file(path, 10);
    CHECK_THROWS_AS(load_tensor<float>(path), FormatError);
    std::filesystem::remove(path);
}

TEST_CASE("rank-0 tensors hold one scalar") {
    Tensor<double> s = Tensor<double>::scalar(4.25);
    CHECK(s.rank() == 0);
    CHECK(s.numel() == 1);
    CHECK(s.item() == 4.25);
}
