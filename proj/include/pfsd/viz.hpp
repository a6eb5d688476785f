#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pfsd/models.hpp"

namespace pfsd {

// 8-bit PGM (P5) with per-map min-max scaling; the scale constants go to a
// sidecar "<path>.scale.txt" so raw values stay recoverable.
void write_pgm_scaled(const std::string& path, const Tensor<double>& map);

// 8-bit PPM (P6) of an RGB image in [0,1], with a red cross at (px, py).
void write_ppm_marked(const std::string& path, const Tensor<float>& image, int px, int py);

void write_csv_matrix(const std::string& path, const Tensor<double>& m);

struct PfsProbe {
    Tensor<double> m;  // [HW, HW] for a single image
    size_t fh = 0, fw = 0;
};

// Similarity map of one [3,H,W] image through a checkpointed network.
PfsProbe compute_pfs_map(Network<double>& net, const Tensor<float>& image);

struct PfsDumpFiles {
    std::vector<std::string> heatmaps;
    std::vector<std::string> csvs;
    std::vector<std::string> marked_inputs;
};

// For each input pixel (px,py): the PFS row of its feature cell as a PGM
// heatmap and a CSV, plus the input annotated with the query pixel.
PfsDumpFiles pfs_dump(Network<double>& net, const Tensor<float>& image,
                      const std::vector<std::pair<int, int>>& pixels, const std::string& out_dir,
                      const std::string& prefix);

}  // namespace pfsd
