#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "pfsd/models.hpp"
#include "pfsd/rng.hpp"

using namespace pfsd;

namespace {

Tensor<double> rand_image(Rng& rng, size_t b, size_t s) {
    Tensor<double> t({b, 3, s, s});
    for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(0, 1);
    return t;
}

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("build is deterministic in the seed") {
    Network<double> a = Network<double>::build(SegNetSpec::teacher_default(), 99);
    Network<double> b = Network<double>::build(SegNetSpec::teacher_default(), 99);
    Network<double> c = Network<double>::build(SegNetSpec::teacher_default(), 100);
    CHECK(param_hash(a) == param_hash(b));
    CHECK(param_hash(a) != param_hash(c));
}

TEST_CASE("teacher default has more parameters than student default") {
    Network<double> t = Network<double>::build(SegNetSpec::teacher_default(), 1);
    Network<double> s = Network<double>::build(SegNetSpec::student_default(), 1);
    CHECK(t.param_count() > s.param_count());
}

TEST_CASE("forward shapes on a 48x48 batch") {
    Network<double> t = Network<double>::build(SegNetSpec::teacher_default(), 3);
    Rng rng(90);
    Tensor<double> images = rand_image(rng, 2, 48);
    Tape<double> tape;
    auto out = t.forward(tape, images, false);
    CHECK(out.logits.value().shape() == Shape{2, 4, 48, 48});
    CHECK(out.feat.value().shape() == Shape{2, 32, 12, 12});
    REQUIRE(out.pfs.has_value());
    CHECK(out.pfs->m.value().shape() == Shape{2, 144, 144});
}

TEST_CASE("forward pfs rows sum to one") {
    Network<double> s = Network<double>::build(SegNetSpec::student_default(), 4);
    Rng rng(91);
    Tensor<double> images = rand_image(rng, 1, 24);
    Tape<double> tape;
    auto out = s.forward(tape, images, false);
    const Tensor<double>& m = out.pfs->m.value();
    const size_t hw = m.dim(1);
    for (size_t i = 0; i < hw; ++i) {
        double sum = 0;
        for (size_t j = 0; j < hw; ++j) sum += m.at(0u, i, j);
        CHECK(std::fabs(sum - 1.0) <= 1e-6);
    }
}

TEST_CASE("forward rejects inputs not divisible by the output stride") {
    Network<double> s = Network<double>::build(SegNetSpec::student_default(), 5);
    Tensor<double> images({1, 3, 30, 30});
    Tape<double> tape;
    CHECK_THROWS_AS(s.forward(tape, images, false), ShapeError);
}

TEST_CASE("zero gamma makes the pfs network match the plain network bitwise") {
    SegNetSpec with_pfs = SegNetSpec::student_default();
    SegNetSpec plain = with_pfs;
    plain.pfs_variant = PfsVariant::none;
    Network<double> a = Network<double>::build(with_pfs, 7);
    Network<double> b = Network<double>::build(plain, 8);
    // Same conv weights in both; gamma stays at its zero init.
    auto pa = a.params();
    auto pb = b.params();
    for (auto& p : pb) {
        for (auto& q : pa)
            if (q.name == p.name) *p.tensor = *q.tensor;
    }
    Rng rng(92);
    Tensor<double> images = rand_image(rng, 1, 24);
    Tape<double> ta, tb;
    auto oa = a.forward(ta, images, false);
    auto ob = b.forward(tb, images, false);
    CHECK(std::memcmp(oa.logits.value().data(), ob.logits.value().data(),
                      oa.logits.value().numel() * sizeof(double)) == 0);
}

TEST_CASE("forward is bitwise deterministic") {
    Network<double> t = Network<double>::build(SegNetSpec::teacher_default(), 9);
    Rng rng(93);
    Tensor<double> images = rand_image(rng, 2, 24);
    Tape<double> t1, t2;
    auto o1 = t.forward(t1, images, false);
    auto o2 = t.forward(t2, images, false);
    CHECK(std::memcmp(o1.logits.value().data(), o2.logits.value().data(),
                      o1.logits.value().numel() * sizeof(double)) == 0);
    CHECK(std::memcmp(o1.pfs->m.value().data(), o2.pfs->m.value().data(),
                      o1.pfs->m.value().numel() * sizeof(double)) == 0);
}

TEST_CASE("checkpoint round trip reproduces forward outputs bitwise") {
    const std::string path = tmp_path("pfsd_ckpt_roundtrip.pfck");
    Network<double> t = Network<double>::build(SegNetSpec::teacher_default(), 10);
    save_checkpoint(t, path);
    Network<double> loaded = load_checkpoint<double>(path);
    CHECK(param_hash(t) == param_hash(loaded));
    CHECK(loaded.spec() == t.spec());

    Rng rng(94);
    Tensor<double> images = rand_image(rng, 1, 24);
    Tape<double> t1, t2;
    auto o1 = t.forward(t1, images, false);
    auto o2 = loaded.forward(t2, images, false);
    CHECK(std::memcmp(o1.logits.value().data(), o2.logits.value().data(),
                      o1.logits.value().numel() * sizeof(double)) == 0);
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint loads convert dtype when asked") {
    const std::string path = tmp_path("pfsd_ckpt_f64.pfck");
    Network<double> t = Network<double>::build(SegNetSpec::student_default(), 11);
    save_checkpoint(t, path);
    Network<float> loaded = load_checkpoint<float>(path);
    auto pd = t.params();
    auto pf = loaded.params();
    REQUIRE(pd.size() == pf.size());
    for (size_t i = 0; i < pd.size(); ++i)
        for (size_t k = 0; k < pd[i].tensor->numel(); ++k)
            CHECK((*pf[i].tensor)[k] == static_cast<float>((*pd[i].tensor)[k]));
    std::filesystem::remove(path);
}

TEST_CASE("truncated checkpoint is rejected") {
    const std::string path = tmp_path("pfsd_ckpt_trunc.pfck");
    Network<double> t = Network<double>::build(SegNetSpec::student_default(), 12);
    save_checkpoint(t, path);
    std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
    CHECK_THROWS_AS(load_checkpoint<double>(path), FormatError);
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint with the wrong magic is rejected") {
    const std::string path = tmp_path("pfsd_ckpt_magic.pfck");
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOPE" << '\x01';
    }
    CHECK_THROWS_AS(load_checkpoint<double>(path), FormatError);
    std::filesystem::remove(path);
}

TEST_CASE("student checkpoint does not load under the teacher spec") {
    const std::string path = tmp_path("pfsd_ckpt_spec.pfck");
    Network<double> s = Network<double>::build(SegNetSpec::student_default(), 13);
    save_checkpoint(s, path);
    const SegNetSpec teacher = SegNetSpec::teacher_default();
    CHECK_THROWS_AS(load_checkpoint<double>(path, &teacher), FormatError);
    std::filesystem::remove(path);
}

TEST_CASE("end-to-end finite differences through the student network") {
    Network<double> student = Network<double>::build(SegNetSpec::student_default(), 14);
    Network<double> teacher = Network<double>::build(SegNetSpec::teacher_default(), 15);
    Rng rng(95);
    Tensor<double> images = rand_image(rng, 1, 16);
    Tensor<uint8_t> labels({1, 16, 16});
    for (size_t i = 0; i < labels.numel(); ++i) labels[i] = static_cast<uint8_t>(rng.below(4));
    LossConfig cfg;
    cfg.lambda = 10.0;  // keeps both terms visible at this scale

    // Frozen teacher targets and frozen gap weights.
    Tensor<double> t_logits, t_map;
    size_t fh = 0, fw = 0;
    {
        Tape<double> tt;
        auto tf = teacher.forward(tt, images, false);
        t_logits = tf.logits.value();
        t_map = tf.pfs->m.value();
        fh = tf.pfs->h;
        fw = tf.pfs->w;
    }
    Tensor<double> pt = soft_targets(t_logits, 1.0);
    Tensor<double> w0;
    {
        Tape<double> ts;
        auto sf = student.forward(ts, images, false);
        w0 = gap_weights(pt, softmax_channels(sf.logits.value()), labels, cfg).w;
    }

    auto eval_loss = [&](bool with_grad, std::vector<Var<double>>* pvars,
                         Tape<double>* tape_out) {
        Tape<double> local;
        Tape<double>& tape = tape_out ? *tape_out : local;
        auto sf = student.forward(tape, images, with_grad);
        ClsLoss<double> cls = kd_pixel_loss_with_weights(sf.logits, pt, labels, w0, cfg);
        PfsMap<double> tm{tape.constant(t_map), fh, fw};
        Var<double> lp = pfs_loss(tm, *sf.pfs);
        Var<double> total = add(cls.total, scale(lp, cfg.lambda));
        if (pvars) *pvars = sf.param_vars;
        if (with_grad) tape.backward(total);
        return total.value().item();
    };

    Tape<double> tape;
    std::vector<Var<double>> pvars;
    eval_loss(true, &pvars, &tape);

    auto params = student.params();
    REQUIRE(params.size() == pvars.size());
    const double h = 1e-5;
    double max_rel = 0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor<double>& p = *params[pi].tensor;
        const Tensor<double>& analytic = pvars[pi].grad();
        // Every 7th coordinate; full coverage is minutes, this is seconds.
        for (size_t k = 0; k < p.numel(); k += 7) {
            const double keep = p[k];
            p[k] = keep + h;
            const double fp = eval_loss(false, nullptr, nullptr);
            p[k] = keep - h;
            const double fm = eval_loss(false, nullptr, nullptr);
            p[k] = keep;
            const double numeric = (fp - fm) / (2 * h);
            const double rel = std::fabs(analytic[k] - numeric) /
                               std::max(std::fabs(analytic[k]) + std::fabs(numeric), 1e-4);
            max_rel = std::max(max_rel, rel);
        }
    }
    CHECK(max_rel <= 1e-4);
}
