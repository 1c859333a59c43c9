#pragma once

// Depth-category math: normalized bin widths, bin centers, boundary
// categories, probability-weighted depth reconstruction, and the UD/SID
// hand-crafted discretization baselines.

#include "pddm/numerics.hpp"
#include "pddm/types.hpp"

#include <optional>
#include <utility>
#include <vector>

namespace pddm {

inline constexpr double kWidthEps = 1e-3;

struct DepthRange {
  enum class Kind { dataset_absolute, scene_relative };
  double d_min = 0.0;
  double d_max = 0.0;
  Kind kind = Kind::dataset_absolute;

  double span() const { return d_max - d_min; }
  bool contains(const DepthRange& other) const {
    return d_min <= other.d_min && other.d_max <= d_max;
  }
};

void validate_range(const DepthRange& r);

struct BinPartition {
  std::vector<double> widths;  // normalized, all positive, sums to 1
  DepthRange range;
  // Centers of the two extra categories pinned at the dataset range ends.
  std::optional<std::pair<double, double>> boundary;

  int categories() const {
    return static_cast<int>(widths.size()) + (boundary ? 2 : 0);
  }
};

// Per-pixel categorical distribution over depth categories.
struct ProbabilityVolume {
  int width = 0;
  int height = 0;
  int categories = 0;
  int stage = 0;
  Eigen::VectorXd p;  // row-major h*w*categories

  double at(int v, int u, int c) const { return p[(v * width + u) * categories + c]; }
};

// c(b_i) = d_min + (d_max - d_min) * (b_i/2 + sum_{j<i} b_j); boundary
// categories, when present, are prepended/appended at the dataset range ends.
std::vector<double> bin_centers(const BinPartition& part);

// out_i = (relu(raw_i) + eps) / sum_j (relu(raw_j) + eps), eps = 1e-3.
std::vector<double> normalize_widths(const std::vector<double>& raw);

DenseDepthMap depth_from_probs(const ProbabilityVolume& probs, const std::vector<double>& centers);

BinPartition uniform_discretization(int n, const DepthRange& range);

// Log-uniform interval edges; shifts the range by +1 when d_min <= 0.
// Returns the (possibly shifted) partition; widths are strictly increasing.
BinPartition sid_discretization(int n, const DepthRange& range);

// [min valid depth, max valid depth] of the samples; errors when fewer than
// two distinct depths exist.
DepthRange relative_range(const SparseDepthSamples& sparse);

BinPartition add_boundary_bins(const BinPartition& part, const DepthRange& dataset);

// --- differentiable counterparts used inside the model forward pass ---

// raw: 1-D tensor of m raw widths -> normalized widths (same shape).
Tensor normalize_widths_t(const Tensor& raw);

// widths: [m] normalized -> interior centers [m] via the cumulative-sum map.
Tensor centers_from_widths_t(const Tensor& widths, const DepthRange& range);

// centers: [m] -> [m+2] with constant boundary centers at the dataset ends.
Tensor append_boundary_t(const Tensor& centers, const DepthRange& dataset);

// probs: [n, m]; centers: [m] -> per-pixel expectation [n, 1].
Tensor depth_from_probs_t(const Tensor& probs, const Tensor& centers);

}  // namespace pddm
