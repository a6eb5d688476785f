#include "pfsd/data.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pfsd/tensor_io.hpp"

namespace fs = std::filesystem;

namespace pfsd {

void to_json(nlohmann::json& j, const DatasetSpec& s) {
    j = nlohmann::json{{"num_classes", s.num_classes}, {"image_size", s.image_size},
                       {"shapes", {s.min_shapes, s.max_shapes}}, {"noise_level", s.noise_level},
                       {"train_count", s.train_count},         {"val_count", s.val_count},
                       {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, DatasetSpec& s) {
    static const std::vector<std::string> known = {"num_classes", "image_size",  "shapes",
                                                   "noise_level", "train_count", "val_count",
                                                   "seed"};
    for (const auto& [key, _] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw ConfigError("unknown key '" + key + "' in dataset spec");
    }
    DatasetSpec d;
    s.num_classes = j.value("num_classes", d.num_classes);
    s.image_size = j.value("image_size", d.image_size);
    if (j.contains("shapes")) {
        auto v = j.at("shapes").get<std::vector<int>>();
        if (v.size() != 2) throw ConfigError("'shapes' must be [min,max]");
        s.min_shapes = v[0];
        s.max_shapes = v[1];
    }
    s.noise_level = j.value("noise_level", d.noise_level);
    s.train_count = j.value("train_count", d.train_count);
    s.val_count = j.value("val_count", d.val_count);
    s.seed = j.value("seed", d.seed);
    s.validate();
}

namespace {

struct ShapeGeom {
    int kind = 0;  // 0 disc, 1 rectangle, 2 triangle
    uint8_t cls = 1;
    float color[3] = {0, 0, 0};
    // disc / triangle center and size; rectangle uses half extents + rotation
    double cx = 0, cy = 0, r = 0, half_w = 0, half_h = 0, rot = 0;
    double vx[3] = {0, 0, 0}, vy[3] = {0, 0, 0};  // triangle vertices

    bool contains(double px, double py) const {
        switch (kind) {
            case 0: {
                const double dx = px - cx, dy = py - cy;
                return dx * dx + dy * dy <= r * r;
            }
            case 1: {
                const double dx = px - cx, dy = py - cy;
                const double u = dx * std::cos(rot) + dy * std::sin(rot);
                const double v = -dx * std::sin(rot) + dy * std::cos(rot);
                return std::fabs(u) <= half_w && std::fabs(v) <= half_h;
            }
            default: {
                // Same-side sign tests against the three edges.
                double sgn[3];
                for (int e = 0; e < 3; ++e) {
                    const int f = (e + 1) % 3;
                    sgn[e] = (vx[f] - vx[e]) * (py - vy[e]) - (vy[f] - vy[e]) * (px - vx[e]);
                }
                const bool has_neg = sgn[0] < 0 || sgn[1] < 0 || sgn[2] < 0;
                const bool has_pos = sgn[0] > 0 || sgn[1] > 0 || sgn[2] > 0;
                return !(has_neg && has_pos);
            }
        }
    }
};

ShapeGeom random_shape(const DatasetSpec& spec, Rng& rng) {
    const double s = spec.image_size;
    ShapeGeom g;
    g.cls = static_cast<uint8_t>(1 + rng.below(static_cast<uint64_t>(spec.num_classes - 1)));
    g.kind = (g.cls - 1) % 3;
    for (float& c : g.color) c = static_cast<float>(rng.uniform(0.45, 0.95));
    g.cx = rng.uniform(0.2, 0.8) * s;
    g.cy = rng.uniform(0.2, 0.8) * s;
    switch (g.kind) {
        case 0:
            g.r = rng.uniform(0.10, 0.26) * s;
            break;
        case 1:
            g.half_w = rng.uniform(0.08, 0.22) * s;
            g.half_h = rng.uniform(0.08, 0.22) * s;
            g.rot = rng.uniform(0.0, 3.14159265358979323846);
            break;
        default: {
            const double radius = rng.uniform(0.14, 0.30) * s;
            const double base = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
            for (int v = 0; v < 3; ++v) {
                const double ang = base + v * 2.0943951023931953 + rng.uniform(-0.35, 0.35);
                const double rr = radius * rng.uniform(0.8, 1.2);
                g.vx[v] = g.cx + rr * std::cos(ang);
                g.vy[v] = g.cy + rr * std::sin(ang);
            }
            break;
        }
    }
    return g;
}

Sample rasterize_attempt(const DatasetSpec& spec, Rng rng) {
    const size_t s = static_cast<size_t>(spec.image_size);
    Sample out{Tensor<float>({3, s, s}), Tensor<uint8_t>({s, s})};

    // Background: linear gradient between two dark colors plus uniform noise.
    float c0[3], c1[3];
    for (int c = 0; c < 3; ++c) c0[c] = static_cast<float>(rng.uniform(0.05, 0.55));
    for (int c = 0; c < 3; ++c) c1[c] = static_cast<float>(rng.uniform(0.05, 0.55));
    const double ang = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const double gx = std::cos(ang), gy = std::sin(ang);
    const double span = (std::fabs(gx) + std::fabs(gy)) * static_cast<double>(s);
    const double lo = std::min(0.0, gx) * s + std::min(0.0, gy) * s;
    for (size_t y = 0; y < s; ++y) {
        for (size_t x = 0; x < s; ++x) {
            const double proj = (x + 0.5) * gx + (y + 0.5) * gy;
            const double t = span > 0 ? (proj - lo) / span : 0.5;
            for (int c = 0; c < 3; ++c) {
                double v = c0[c] + t * (c1[c] - c0[c]);
                v += rng.uniform(-spec.noise_level, spec.noise_level);
                out.image.at(static_cast<size_t>(c), y, x) =
                    static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    }

    const int n_shapes = rng.uniform_int(spec.min_shapes, spec.max_shapes);
    for (int i = 0; i < n_shapes; ++i) {
        const ShapeGeom g = random_shape(spec, rng);
        for (size_t y = 0; y < s; ++y)
            for (size_t x = 0; x < s; ++x)
                if (g.contains(x + 0.5, y + 0.5)) {
                    out.label.at(y, x) = g.cls;
                    for (size_t c = 0; c < 3; ++c) out.image.at(c, y, x) = g.color[c];
                }
    }
    return out;
}

std::string sample_base(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%05d", index);
    return buf;
}

}  // namespace

Sample make_sample(const DatasetSpec& spec, uint64_t sample_seed) {
    spec.validate();
    Rng root(sample_seed);
    for (uint64_t attempt = 0; attempt < 16; ++attempt) {
        Sample s = rasterize_attempt(spec, root.fork(attempt));
        // Background must survive somewhere, otherwise hard CE can lose a class.
        for (size_t i = 0; i < s.label.numel(); ++i)
            if (s.label[i] == 0) return s;
    }
    throw Error("sample generation failed to keep any background pixel");
}

void generate_dataset(const DatasetSpec& spec, const std::string& dir) {
    spec.validate();
    fs::create_directories(fs::path(dir) / "train");
    fs::create_directories(fs::path(dir) / "val");
    auto write_split = [&](const std::string& split, int count, uint64_t tag) {
        for (int i = 0; i < count; ++i) {
            const Sample s = make_sample(spec, derive_seed(spec.seed, tag + static_cast<uint64_t>(i)));
            const fs::path base = fs::path(dir) / split / sample_base(i);
            save_tensor(s.image, base.string() + ".img.pfst");
            save_tensor(s.label, base.string() + ".lbl.pfst");
        }
    };
    // Disjoint seed streams for the two splits.
    write_split("train", spec.train_count, 0);
    write_split("val", spec.val_count, 1ULL << 40);

    nlohmann::json manifest;
    manifest["spec"] = spec;
    manifest["format"] = 1;
    std::ofstream os(fs::path(dir) / "manifest.json");
    if (!os) throw IoError("cannot write manifest in " + dir);
    os << manifest.dump(2) << "\n";
}

DatasetSpec load_manifest(const std::string& dir) {
    std::ifstream is(fs::path(dir) / "manifest.json");
    if (!is) throw IoError("cannot read manifest.json in " + dir);
    nlohmann::json j;
    try {
        is >> j;
        return j.at("spec").get<DatasetSpec>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad manifest in " + dir + ": " + e.what());
    }
}

Dataset load_split(const std::string& dir, const std::string& split) {
    Dataset ds;
    ds.spec = load_manifest(dir);
    const int count = split == "train" ? ds.spec.train_count
                      : split == "val" ? ds.spec.val_count
                                       : throw ConfigError("unknown split '" + split + "'");
    ds.samples.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        const fs::path base = fs::path(dir) / split / sample_base(i);
        Sample s{load_tensor<float>(base.string() + ".img.pfst"),
                 load_tensor<uint8_t>(base.string() + ".lbl.pfst")};
        if (s.image.rank() != 3 || s.label.rank() != 2)
            throw FormatError("unexpected tensor ranks in " + base.string());
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

std::vector<std::vector<size_t>> batch_plan(size_t n, size_t batch_size, uint64_t epoch_seed) {
    if (batch_size < 1 || batch_size > n)
        throw ConfigError("batch size must be in 1.." + std::to_string(n));
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(epoch_seed);
    for (size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    std::vector<std::vector<size_t>> plan;
    for (size_t start = 0; start < n; start += batch_size) {
        const size_t end = std::min(n, start + batch_size);
        plan.emplace_back(order.begin() + static_cast<long>(start),
                          order.begin() + static_cast<long>(end));
    }
    return plan;
}

}  // namespace pfsd
