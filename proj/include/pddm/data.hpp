#pragma once

// Synthetic scene generation, sparse sampling simulators, depth metrics,
// and the DMAP / CSV / PPM / PGM file formats.

#include "pddm/binning.hpp"
#include "pddm/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace pddm {

struct SceneSpec {
  int width = 64;
  int height = 48;
  DepthRange range{0.5, 10.0, DepthRange::Kind::dataset_absolute};
  int n_planes = 1;    // tilted background planes
  int n_boxes = 3;     // axis-aligned front-facing rectangles
  int n_spheres = 2;   // shaded discs with spherical depth profile
  bool texture = true; // add deterministic texture to the image
  uint64_t seed = 0;

  void validate() const;
};

struct Scene {
  Image image;
  DenseDepthMap gt;
};

// Fully valid ground truth within the spec's range; the image is shaded from
// depth plus primitive-dependent color so depth is recoverable from it.
Scene synth_scene(const SceneSpec& spec);

// n distinct valid pixels, uniform without replacement.
SparseDepthSamples sample_random(const DenseDepthMap& gt, int n, uint64_t seed);

// Valid pixels at rows/columns that are multiples of stride.
SparseDepthSamples sample_grid(const DenseDepthMap& gt, int stride);

enum class BiasMode { top, middle, bottom };

// p_ij proportional to 1 / (D[i,j]^alpha + 1), row-dependent D per mode;
// n draws without replacement via sequential renormalization.
SparseDepthSamples sample_biased(const DenseDepthMap& gt, int n, BiasMode mode, double alpha,
                                 uint64_t seed);

// Row-marginal probabilities of the biased sampler for a single draw.
std::vector<double> biased_row_marginals(const DenseDepthMap& gt, BiasMode mode, double alpha);

// Each sample corrupted with probability p_corrupt by N(0, sigma); depths
// clamped to stay positive.
SparseDepthSamples add_noise(const SparseDepthSamples& samples, double sigma, double p_corrupt,
                             uint64_t seed);

// Rasterize samples onto the grid (0 = missing); duplicate hits keep the last value.
DenseDepthMap rasterize(const SparseDepthSamples& samples);

struct MetricReport {
  double abs_rel = 0, rmse = 0, mae = 0, log10 = 0, rmse_log = 0, sq_rel = 0;
  double delta1 = 0, delta2 = 0, delta3 = 0;  // thresholds 1.25, 1.25^2, 1.25^3
  double irmse = 0, imae = 0;                 // on inverse depth, 1/m
  int n_valid = 0;
  int n_excluded = 0;  // nonpositive predictions excluded from log/inverse metrics
};

MetricReport compute_metrics(const DenseDepthMap& pred, const DenseDepthMap& gt);

// --- file formats ---
// DMAP: "DMAP", version u8=1, width u32le, height u32le, float32le row-major depths.
void write_dmap(const std::string& path, const DenseDepthMap& map);
DenseDepthMap read_dmap(const std::string& path);

// CSV with exact header "u,v,d"; depth printed with 9 significant digits.
void write_sparse_csv(const std::string& path, const SparseDepthSamples& samples);
SparseDepthSamples read_sparse_csv(const std::string& path);

void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);
// 16-bit PGM scaled to the map's max depth; the scale factor is written to
// path + ".scale.txt".
void write_depth_pgm(const std::string& path, const DenseDepthMap& map);

}  // namespace pddm
