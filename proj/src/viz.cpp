#include "pfsd/viz.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace pfsd {

void write_pgm_scaled(const std::string& path, const Tensor<double>& map) {
    if (map.rank() != 2) throw ShapeError("write_pgm_scaled expects [H,W]");
    const size_t h = map.dim(0), w = map.dim(1);
    double lo = map[0], hi = map[0];
    for (size_t i = 0; i < map.numel(); ++i) {
        lo = std::min(lo, map[i]);
        hi = std::max(hi, map[i]);
    }
    const double span = hi - lo;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path);
    os << "P5\n" << w << " " << h << "\n255\n";
    for (size_t i = 0; i < map.numel(); ++i) {
        const double t = span > 0 ? (map[i] - lo) / span : 0.0;
        os.put(static_cast<char>(std::lround(255.0 * t)));
    }
    if (!os) throw IoError("write failed: " + path);

    std::ofstream scale(path + ".scale.txt");
    if (!scale) throw IoError("cannot write " + path + ".scale.txt");
    char buf[96];
    std::snprintf(buf, sizeof(buf), "min %.17g\nmax %.17g\n", lo, hi);
    scale << buf;
}

void write_ppm_marked(const std::string& path, const Tensor<float>& image, int px, int py) {
    if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("write_ppm_marked expects [3,H,W]");
    const size_t h = image.dim(1), w = image.dim(2);
    std::vector<unsigned char> rgb(3 * h * w);
    for (size_t y = 0; y < h; ++y)
        for (size_t x = 0; x < w; ++x)
            for (size_t c = 0; c < 3; ++c) {
                const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
                rgb[(y * w + x) * 3 + c] = static_cast<unsigned char>(std::lround(255.0f * v));
            }
    auto mark = [&](long x, long y) {
        if (x < 0 || y < 0 || x >= static_cast<long>(w) || y >= static_cast<long>(h)) return;
        unsigned char* p = &rgb[(static_cast<size_t>(y) * w + static_cast<size_t>(x)) * 3];
        p[0] = 255;
        p[1] = 0;
        p[2] = 0;
    };
    for (int arm = -3; arm <= 3; ++arm) {
        mark(px + arm, py);
        mark(px, py + arm);
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path);
    os << "P6\n" << w << " " << h << "\n255\n";
    os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (!os) throw IoError("write failed: " + path);
}

void write_csv_matrix(const std::string& path, const Tensor<double>& m) {
    if (m.rank() != 2) throw ShapeError("write_csv_matrix expects [H,W]");
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path);
    char buf[48];
    for (size_t i = 0; i < m.dim(0); ++i) {
        for (size_t j = 0; j < m.dim(1); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", m.at(i, j));
            os << (j ? "," : "") << buf;
        }
        os << "\n";
    }
    if (!os) throw IoError("write failed: " + path);
}

PfsProbe compute_pfs_map(Network<double>& net, const Tensor<float>& image) {
    if (image.rank() != 3) throw ShapeError("compute_pfs_map expects [3,H,W]");
    if (net.spec().pfs_variant == PfsVariant::none)
        throw ConfigError("network has no pfs layer to probe");
    Tensor<double> batch({1, image.dim(0), image.dim(1), image.dim(2)});
    for (size_t i = 0; i < image.numel(); ++i) batch[i] = static_cast<double>(image[i]);
    Tape<double> tape;
    auto out = net.forward(tape, batch, /*with_grad=*/false);
    const PfsMap<double>& m = *out.pfs;
    const size_t hw = m.locations();
    Tensor<double> single = reshape(m.m.value(), {hw, hw});
    return {std::move(single), m.h, m.w};
}

PfsDumpFiles pfs_dump(Network<double>& net, const Tensor<float>& image,
                      const std::vector<std::pair<int, int>>& pixels, const std::string& out_dir,
                      const std::string& prefix) {
    if (pixels.empty()) throw ConfigError("pfs-dump needs at least one pixel");
    const long h = static_cast<long>(image.dim(1)), w = static_cast<long>(image.dim(2));
    const int os = net.spec().output_stride();
    PfsProbe probe = compute_pfs_map(net, image);
    fs::create_directories(out_dir);

    PfsDumpFiles files;
    for (const auto& [px, py] : pixels) {
        if (px < 0 || py < 0 || px >= w || py >= h)
            throw ConfigError("pixel (" + std::to_string(px) + "," + std::to_string(py) +
                              ") outside image " + std::to_string(w) + "x" + std::to_string(h));
        const size_t fx = static_cast<size_t>(px / os), fy = static_cast<size_t>(py / os);
        const size_t cell = fy * probe.fw + fx;
        Tensor<double> row({probe.fh, probe.fw});
        for (size_t i = 0; i < probe.fh * probe.fw; ++i) row[i] = probe.m.at(cell, i);

        const std::string base =
            (fs::path(out_dir) / (prefix + "_x" + std::to_string(px) + "_y" + std::to_string(py)))
                .string();
        write_pgm_scaled(base + ".pgm", row);
        write_csv_matrix(base + ".csv", row);
        write_ppm_marked(base + ".ppm", image, px, py);
        files.heatmaps.push_back(base + ".pgm");
        files.csvs.push_back(base + ".csv");
        files.marked_inputs.push_back(base + ".ppm");
    }
    return files;
}

}  // namespace pfsd
