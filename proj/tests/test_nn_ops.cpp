#include <doctest.h>

#include <cmath>
#include <cstring>

#include "pfsd/nn_ops.hpp"
#include "pfsd/reference.hpp"
#include "pfsd/rng.hpp"

using namespace pfsd;

namespace {

Tensor<double> rand_tensor(Rng& rng, Shape s, double lo = -2, double hi = 2) {
    Tensor<double> t(std::move(s));
    for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("1x1 conv with unit weight and zero bias is the identity") {
    Rng rng(41);
    Tensor<double> x = rand_tensor(rng, {1, 1, 4, 5});
    Tensor<double> w({1, 1, 1, 1}, {1.0});
    Tensor<double> b({1}, {0.0});
    Tensor<double> y = conv2d_forward(x, w, b, 1, 1, 0);
    CHECK(y.shape() == x.shape());
    for (size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("3x3 all-ones kernel on all-ones 5x5 input is a box sum") {
    Tensor<double> x = Tensor<double>::full({1, 1, 5, 5}, 1.0);
    Tensor<double> w = Tensor<double>::full({1, 1, 3, 3}, 1.0);
    Tensor<double> b({1}, {0.0});
    Tensor<double> y = conv2d_forward(x, w, b, 1, 1, 1);
    CHECK(y.at(0u, 0u, 2u, 2u) == 9.0);
    CHECK(y.at(0u, 0u, 0u, 0u) == 4.0);
    CHECK(y.at(0u, 0u, 0u, 4u) == 4.0);
    CHECK(y.at(0u, 0u, 0u, 2u) == 6.0);
}

TEST_CASE("conv2d matches the nested-loop oracle for all used configs") {
    Rng rng(42);
    for (int stride : {1, 2})
        for (int dilation : {1, 2, 4})
            for (int k : {1, 3}) {
                if (k == 1 && dilation > 1) continue;
                for (int trial = 0; trial < 8; ++trial) {
                    const size_t bsz = 1 + rng.below(2), ci = 1 + rng.below(4),
                                 co = 1 + rng.below(4);
                    const size_t h = 5 + rng.below(6), w = 5 + rng.below(6);
                    const int pad = same_padding(k, dilation);
                    Tensor<double> x = rand_tensor(rng, {bsz, ci, h, w});
                    Tensor<double> wt = rand_tensor(
                        rng, {co, ci, static_cast<size_t>(k), static_cast<size_t>(k)});
                    Tensor<double> bt = rand_tensor(rng, {co});
                    Tensor<double> fast = conv2d_forward(x, wt, bt, stride, dilation, pad);
                    Tensor<double> slow = ref::conv2d(x, wt, bt, stride, dilation, pad);
                    REQUIRE(fast.shape() == slow.shape());
                    for (size_t i = 0; i < fast.numel(); ++i)
                        CHECK(std::fabs(fast[i] - slow[i]) <= 1e-12);
                }
            }
}

TEST_CASE("conv2d rejects channel mismatch and degenerate outputs") {
    Tensor<double> x({1, 2, 4, 4});
    Tensor<double> w({3, 3, 3, 3});
    Tensor<double> b({3});
    CHECK_THROWS_AS(conv2d_forward(x, w, b, 1, 1, 1), ShapeError);
    Tensor<double> w2({3, 2, 3, 3});
    CHECK_THROWS_AS(conv2d_forward(x, w2, b, 1, 4, 0), ShapeError);
}

TEST_CASE("conv2d and upsample pass gradcheck") {
    Rng rng(43);
    {
        Tensor<double> r = rand_tensor(rng, {1, 2, 3, 3});
        auto report = gradcheck(
            [&](Tape<double>& t, const std::vector<Var<double>>& v) {
                return sum_all(mul(conv2d(v[0], v[1], v[2], 2, 2, 2), t.constant(r)));
            },
            {rand_tensor(rng, {1, 2, 5, 5}), rand_tensor(rng, {2, 2, 3, 3}),
             rand_tensor(rng, {2})});
        CHECK(report.pass);
    }
    {
        Tensor<double> r = rand_tensor(rng, {1, 2, 6, 7});
        auto report = gradcheck(
            [&](Tape<double>& t, const std::vector<Var<double>>& v) {
                return sum_all(mul(upsample_bilinear(v[0], 6, 7), t.constant(r)));
            },
            {rand_tensor(rng, {1, 2, 3, 3})});
        CHECK(report.pass);
    }
}

TEST_CASE("upsampling a constant map stays constant") {
    Tensor<double> x = Tensor<double>::full({1, 2, 3, 3}, 0.75);
    Tensor<double> y = upsample_bilinear_forward(x, 7, 9);
    for (size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("upsampling 1x1 replicates the value") {
    Tensor<double> x({1, 1, 1, 1}, {3.25});
    Tensor<double> y = upsample_bilinear_forward(x, 4, 6);
    for (size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == 3.25);
}

TEST_CASE("upsampling 2x2 to 4x4 matches hand-computed weights") {
    // align-corners=false: output centers at src coords -0.25, 0.25, 0.75,
    // 1.25, so the interior rows mix 3:1 and the borders clamp.
    Tensor<double> x({1, 1, 2, 2}, {0.0, 1.0, 2.0, 3.0});
    Tensor<double> y = upsample_bilinear_forward(x, 4, 4);
    CHECK(y.at(0u, 0u, 0u, 0u) == doctest::Approx(0.0));
    CHECK(y.at(0u, 0u, 0u, 1u) == doctest::Approx(0.25));
    CHECK(y.at(0u, 0u, 0u, 2u) == doctest::Approx(0.75));
    CHECK(y.at(0u, 0u, 0u, 3u) == doctest::Approx(1.0));
    CHECK(y.at(0u, 0u, 1u, 0u) == doctest::Approx(0.5));
    CHECK(y.at(0u, 0u, 1u, 1u) == doctest::Approx(0.75));
    CHECK(y.at(0u, 0u, 2u, 2u) == doctest::Approx(2.25));
    CHECK(y.at(0u, 0u, 3u, 3u) == doctest::Approx(3.0));
}

TEST_CASE("upsample with target equal to source is bit-exact") {
    Rng rng(44);
    Tensor<double> x = rand_tensor(rng, {2, 3, 5, 4});
    Tensor<double> y = upsample_bilinear_forward(x, 5, 4);
    CHECK(std::memcmp(x.data(), y.data(), x.numel() * sizeof(double)) == 0);
}

TEST_CASE("upsample rejects shrinking") {
    Tensor<double> x({1, 1, 4, 4});
    CHECK_THROWS_AS(upsample_bilinear_forward(x, 3, 4), ShapeError);
}

TEST_CASE("init_params is deterministic and fan-in bounded") {
    Conv2dLayer<double> a(8, 4, 3), b(8, 4, 3);
    Rng r1(77), r2(77), r3(78);
    init_params(a, r1);
    init_params(b, r2);
    CHECK(std::memcmp(a.weight.data(), b.weight.data(), a.weight.numel() * sizeof(double)) == 0);

    const double bound = std::sqrt(6.0 / (4 * 3 * 3));
    for (size_t i = 0; i < a.weight.numel(); ++i) {
        CHECK(std::fabs(a.weight[i]) <= bound);
    }
    for (size_t i = 0; i < a.bias.numel(); ++i) CHECK(a.bias[i] == 0.0);

    Conv2dLayer<double> c(8, 4, 3);
    init_params(c, r3);
    bool differs = false;
    for (size_t i = 0; i < a.weight.numel(); ++i) differs |= a.weight[i] != c.weight[i];
    CHECK(differs);
}
