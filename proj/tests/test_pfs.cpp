#include <doctest.h>

#include <cmath>
#include <cstring>

#include "pfsd/pfs.hpp"
#include "pfsd/reference.hpp"
#include "pfsd/rng.hpp"

using namespace pfsd;

namespace {

Tensor<double> rand_tensor(Rng& rng, Shape s, double lo = -2, double hi = 2) {
    Tensor<double> t(std::move(s));
    for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

template <typename T>
void check_row_stochastic(const Tensor<T>& m, double tol) {
    const size_t b = m.dim(0), hw = m.dim(1);
    for (size_t bi = 0; bi < b; ++bi)
        for (size_t i = 0; i < hw; ++i) {
            double sum = 0;
            for (size_t j = 0; j < hw; ++j) {
                const double v = static_cast<double>(m.at(bi, i, j));
                CHECK(v > 0.0);
                CHECK(v < 1.0 + tol);
                sum += v;
            }
            CHECK(std::fabs(sum - 1.0) <= tol);
        }
}

}  // namespace

TEST_CASE("constant features give a uniform similarity map") {
    Tape<double> tape;
    Tensor<double> f = Tensor<double>::full({1, 3, 2, 3}, 0.7);
    PfsMap<double> m = s_pfs(tape.constant(f));
    const double uniform = 1.0 / 6.0;
    for (size_t i = 0; i < m.m.value().numel(); ++i)
        CHECK(m.m.value()[i] == doctest::Approx(uniform).epsilon(1e-12));
}

TEST_CASE("two-location example: logits are the Gram matrix") {
    Tape<double> tape;
    Tensor<double> f({1, 1, 1, 2}, {1.0, 3.0});
    PfsMap<double> m = s_pfs(tape.constant(f));
    // S = [[1,3],[3,9]], softmaxed per row.
    const Tensor<double>& mv = m.m.value();
    CHECK(mv.at(0u, 0u, 0u) == doctest::Approx(0.1192).epsilon(1e-3));
    CHECK(mv.at(0u, 0u, 1u) == doctest::Approx(0.8808).epsilon(1e-3));
    CHECK(mv.at(0u, 1u, 0u) == doctest::Approx(0.00247).epsilon(1e-2));
    CHECK(mv.at(0u, 1u, 1u) == doctest::Approx(0.99753).epsilon(1e-4));
}

TEST_CASE("s_pfs matches the brute-force oracle") {
    Rng rng(51);
    for (int trial = 0; trial < 50; ++trial) {
        const size_t b = 1 + rng.below(2), c = 1 + rng.below(8);
        const size_t h = 1 + rng.below(6), w = 1 + rng.below(6);
        Tensor<double> f = rand_tensor(rng, {b, c, h, w});
        Tape<double> tape;
        const Tensor<double>& fast = s_pfs(tape.constant(f)).m.value();
        const Tensor<double> slow = ref::s_pfs(f);
        for (size_t i = 0; i < fast.numel(); ++i) CHECK(std::fabs(fast[i] - slow[i]) <= 1e-10);
    }
}

TEST_CASE("pfs maps are row stochastic in both precisions") {
    Rng rng(52);
    for (int trial = 0; trial < 500; ++trial) {
        const size_t b = 1 + rng.below(2), c = 1 + rng.below(6);
        const size_t h = 1 + rng.below(4), w = 1 + rng.below(4);
        Tensor<double> fd = rand_tensor(rng, {b, c, h, w}, -3, 3);
        {
            Tape<double> tape;
            check_row_stochastic(s_pfs(tape.constant(fd)).m.value(), 1e-6);
        }
        {
            Tensor<float> ff = cast<float>(fd);
            Tape<float> tape;
            check_row_stochastic(s_pfs(tape.constant(ff)).m.value(), 1e-6);
        }
    }
}

TEST_CASE("c_pfs with identity transforms reduces to s_pfs") {
    Rng rng(53);
    const size_t c = 4;
    Tensor<double> f = rand_tensor(rng, {1, c, 3, 2});
    CPfsTransforms<double> t;
    t.w1 = Conv2dLayer<double>(static_cast<int>(c), static_cast<int>(c), 1);
    t.w2 = Conv2dLayer<double>(static_cast<int>(c), static_cast<int>(c), 1);
    for (size_t i = 0; i < c; ++i) t.w1.weight.at(i, i, 0u, 0u) = 1.0;
    for (size_t i = 0; i < c; ++i) t.w2.weight.at(i, i, 0u, 0u) = 1.0;
    Tape<double> tape;
    Var<double> fv = tape.constant(f);
    const Tensor<double>& with_id =
        c_pfs(fv, tape.constant(t.w1.weight), tape.constant(t.w1.bias),
              tape.constant(t.w2.weight), tape.constant(t.w2.bias), t)
            .m.value();
    const Tensor<double>& plain = s_pfs(fv).m.value();
    for (size_t i = 0; i < plain.numel(); ++i)
        CHECK(with_id[i] == doctest::Approx(plain[i]).epsilon(1e-12));
}

TEST_CASE("c_pfs with zero transforms gives the uniform map") {
    Rng rng(54);
    Tensor<double> f = rand_tensor(rng, {1, 8, 2, 2});
    CPfsTransforms<double> t(8);  // weights default to zero
    Tape<double> tape;
    const Tensor<double>& m =
        c_pfs(tape.constant(f), tape.constant(t.w1.weight), tape.constant(t.w1.bias),
              tape.constant(t.w2.weight), tape.constant(t.w2.bias), t)
            .m.value();
    for (size_t i = 0; i < m.numel(); ++i) CHECK(m[i] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("c_pfs rejects channel mismatch") {
    Tape<double> tape;
    Tensor<double> f({1, 6, 2, 2});
    CPfsTransforms<double> t(8);
    CHECK_THROWS_AS(c_pfs(tape.constant(f), tape.constant(t.w1.weight), tape.constant(t.w1.bias),
                          tape.constant(t.w2.weight), tape.constant(t.w2.bias), t),
                    ShapeError);
}

TEST_CASE("pfs_loss of identical maps is zero") {
    Rng rng(55);
    Tensor<double> f = rand_tensor(rng, {2, 3, 2, 2});
    Tape<double> tape;
    PfsMap<double> a = s_pfs(tape.constant(f));
    PfsMap<double> b = s_pfs(tape.constant(f));
    CHECK(pfs_loss(a, b).value().item() == 0.0);
}

TEST_CASE("pfs_loss hand-evaluated two-location case") {
    Tape<double> tape;
    Tensor<double> mt({1, 2, 2}, {0.5, 0.5, 0.5, 0.5});
    Tensor<double> ms({1, 2, 2}, {1.0, 0.0, 1.0, 0.0});
    PfsMap<double> a{tape.constant(mt), 1, 2}, b{tape.constant(ms), 1, 2};
    CHECK(pfs_loss(a, b).value().item() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("pfs_loss is symmetric, non-negative, zero only at equality") {
    Rng rng(56);
    for (int trial = 0; trial < 50; ++trial) {
        const size_t b = 1 + rng.below(2), hw = 2 + rng.below(5);
        Tensor<double> mt = ref::softmax_rows(rand_tensor(rng, {b, hw, hw}));
        Tensor<double> ms = ref::softmax_rows(rand_tensor(rng, {b, hw, hw}));
        Tape<double> tape;
        PfsMap<double> x{tape.constant(mt), 1, hw}, y{tape.constant(ms), 1, hw};
        const double xy = pfs_loss(x, y).value().item();
        const double yx = pfs_loss(y, x).value().item();
        CHECK(xy == yx);
        CHECK(xy >= 0.0);
        CHECK(xy > 0.0);  // random maps differ
        CHECK(std::fabs(xy - ref::pfs_loss(mt, ms)) <= 1e-12);
    }
}

TEST_CASE("pfs_loss rejects mismatched map shapes") {
    Tape<double> tape;
    PfsMap<double> a{tape.constant(Tensor<double>({1, 4, 4})), 2, 2};
    PfsMap<double> b{tape.constant(Tensor<double>({1, 9, 9})), 3, 3};
    CHECK_THROWS_AS(pfs_loss(a, b), ShapeError);
}

TEST_CASE("augment with gamma zero is a bitwise identity") {
    Rng rng(57);
    Tensor<double> f = rand_tensor(rng, {2, 4, 3, 3});
    Tape<double> tape;
    Var<double> fv = tape.constant(f);
    PfsMap<double> m = s_pfs(fv);
    Var<double> out = augment(fv, m, tape.constant(Tensor<double>::scalar(0.0)));
    CHECK(std::memcmp(out.value().data(), f.data(), f.numel() * sizeof(double)) == 0);
}

TEST_CASE("augment of constant features scales by one plus gamma") {
    Tape<double> tape;
    Tensor<double> f = Tensor<double>::full({1, 2, 2, 2}, 1.5);
    Var<double> fv = tape.constant(f);
    PfsMap<double> m = s_pfs(fv);  // any row-stochastic map fixes a constant field
    const double gamma = 0.3;
    Var<double> out = augment(fv, m, tape.constant(Tensor<double>::scalar(gamma)));
    for (size_t i = 0; i < out.value().numel(); ++i)
        CHECK(out.value()[i] == doctest::Approx(1.5 * (1 + gamma)).epsilon(1e-12));
}

TEST_CASE("augment matches the loop oracle") {
    Rng rng(58);
    for (int trial = 0; trial < 30; ++trial) {
        const size_t b = 1 + rng.below(2), c = 1 + rng.below(6);
        const size_t h = 1 + rng.below(4), w = 1 + rng.below(4);
        Tensor<double> f = rand_tensor(rng, {b, c, h, w});
        Tensor<double> mv = ref::softmax_rows(rand_tensor(rng, {b, h * w, h * w}));
        const double gamma = rng.uniform(-1, 1);
        Tape<double> tape;
        PfsMap<double> m{tape.constant(mv), h, w};
        Var<double> out =
            augment(tape.constant(f), m, tape.constant(Tensor<double>::scalar(gamma)));
        const Tensor<double> slow = ref::augment(f, mv, gamma);
        for (size_t i = 0; i < slow.numel(); ++i)
            CHECK(std::fabs(out.value()[i] - slow[i]) <= 1e-12);
    }
}

TEST_CASE("s_pfs is invariant to channel permutation") {
    Rng rng(59);
    const size_t c = 5;
    Tensor<double> f = rand_tensor(rng, {1, c, 3, 2});
    std::vector<size_t> perm = {3, 0, 4, 1, 2};
    Tensor<double> g({1, c, 3, 2});
    for (size_t ci = 0; ci < c; ++ci)
        for (size_t i = 0; i < 6; ++i) g[perm[ci] * 6 + i] = f[ci * 6 + i];
    Tape<double> tape;
    const Tensor<double>& mf = s_pfs(tape.constant(f)).m.value();
    const Tensor<double>& mg = s_pfs(tape.constant(g)).m.value();
    for (size_t i = 0; i < mf.numel(); ++i) CHECK(std::fabs(mf[i] - mg[i]) <= 1e-12);
}

TEST_CASE("s_pfs is invariant to zero channel padding") {
    Rng rng(60);
    Tensor<double> f = rand_tensor(rng, {1, 16, 3, 3});
    Tensor<double> padded({1, 32, 3, 3});
    std::copy(f.data(), f.data() + f.numel(), padded.data());
    Tape<double> tape;
    const Tensor<double>& a = s_pfs(tape.constant(f)).m.value();
    const Tensor<double>& b = s_pfs(tape.constant(padded)).m.value();
    REQUIRE(a.shape() == b.shape());
    for (size_t i = 0; i < a.numel(); ++i) CHECK(std::fabs(a[i] - b[i]) <= 1e-12);
}

TEST_CASE("gradcheck: gamma and the c_pfs transforms get correct grads") {
    Rng rng(61);
    Tensor<double> f = rand_tensor(rng, {1, 4, 2, 2}, -1, 1);
    CPfsTransforms<double> t(4);
    const size_t ct = static_cast<size_t>(t.w1.out_channels());
    Tensor<double> r = rand_tensor(rng, {1, 4, 2, 2});
    auto report = gradcheck(
        [&](Tape<double>& tp, const std::vector<Var<double>>& v) {
            PfsMap<double> m = c_pfs(v[0], v[1], v[2], v[3], v[4], t);
            Var<double> out = augment(v[0], m, v[5]);
            return sum_all(mul(out, tp.constant(r)));
        },
        {f, rand_tensor(rng, {ct, 4, 1, 1}), rand_tensor(rng, {ct}),
         rand_tensor(rng, {ct, 4, 1, 1}), rand_tensor(rng, {ct}),
         Tensor<double>::scalar(0.2)});
    CHECK(report.pass);
}
