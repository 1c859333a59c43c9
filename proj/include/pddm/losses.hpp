#pragma once

// Pixel-wise depth losses, the bi-directional Chamfer bin regularizer, and
// the multi-scale supervision combination.

#include "pddm/modulating.hpp"
#include "pddm/numerics.hpp"
#include "pddm/types.hpp"

#include <cstdint>
#include <vector>

namespace pddm {

struct LossWeights {
  std::vector<double> omega;  // per stage, 0.5^(L-l)
  double beta = 0.1;

  static LossWeights make(int stages, double beta = 0.1);
};

// Mean |gt - pred|^rho over valid gt pixels; rho in {1, 2}.
double depth_loss(const DenseDepthMap& pred, const DenseDepthMap& gt, int rho);

// Bi-directional Chamfer between the center set and the multiset of valid gt
// depths. cap > 0 subsamples at most cap gt pixels (seeded); cap <= 0 is exact.
double chamfer_bins(const std::vector<double>& centers, const DenseDepthMap& gt,
                    int cap = 0, uint64_t seed = 0);

// Average of valid pixels per factor x factor cell; empty cells are invalid.
DenseDepthMap downsample_gt(const DenseDepthMap& gt, int factor);

// Nearest-neighbor upsampling by an integer factor; used to score coarse-stage
// predictions against the full-resolution ground truth.
DenseDepthMap upsample_nearest(const DenseDepthMap& d, int factor);

// --- differentiable versions used for training ---

// pred: [h*w, 1] at the gt map's resolution.
Tensor depth_loss_t(const Tensor& pred, const DenseDepthMap& gt, int rho);

// Gradient flows to the nearest center only (hard-min assignment).
Tensor chamfer_bins_t(const Tensor& centers, const DenseDepthMap& gt, int cap = 0,
                      uint64_t seed = 0);

// sum_l omega_l * (L1 + L2 + beta * chamfer), gt downsampled per stage.
Tensor multi_scale_loss_t(const ForwardResult& result, const DenseDepthMap& gt,
                          const LossWeights& weights, int chamfer_cap = 2048,
                          uint64_t chamfer_seed = 0);

}  // namespace pddm
