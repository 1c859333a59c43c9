#include "pddm/binning.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pddm {

void validate_range(const DepthRange& r) {
  if (!(r.d_min >= 0.0) || !(r.d_min < r.d_max))
    throw std::invalid_argument("invalid depth range [" + std::to_string(r.d_min) + ", " +
                                std::to_string(r.d_max) + "]");
}

static void validate_partition(const BinPartition& part) {
  validate_range(part.range);
  if (part.widths.empty()) throw std::invalid_argument("bin partition has no widths");
  double sum = 0.0;
  for (double w : part.widths) {
    if (!(w > 0.0)) throw std::invalid_argument("bin partition has a non-positive width");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw std::invalid_argument("bin widths sum to " + std::to_string(sum) + ", expected 1");
}

std::vector<double> bin_centers(const BinPartition& part) {
  validate_partition(part);
  std::vector<double> centers;
  centers.reserve(part.widths.size() + (part.boundary ? 2 : 0));
  if (part.boundary) centers.push_back(part.boundary->first);
  double cum = 0.0;
  for (double w : part.widths) {
    centers.push_back(part.range.d_min + part.range.span() * (w / 2.0 + cum));
    cum += w;
  }
  if (part.boundary) centers.push_back(part.boundary->second);
  return centers;
}

std::vector<double> normalize_widths(const std::vector<double>& raw) {
  if (raw.empty()) throw std::invalid_argument("normalize_widths: empty input");
  std::vector<double> out(raw.size());
  double sum = 0.0;
  for (size_t i = 0; i < raw.size(); ++i) {
    out[i] = std::max(raw[i], 0.0) + kWidthEps;
    sum += out[i];
  }
  for (double& w : out) w /= sum;
  return out;
}

DenseDepthMap depth_from_probs(const ProbabilityVolume& probs, const std::vector<double>& centers) {
  if (static_cast<int>(centers.size()) != probs.categories)
    throw std::invalid_argument("depth_from_probs: " + std::to_string(centers.size()) +
                                " centers vs " + std::to_string(probs.categories) + " categories");
  DenseDepthMap out(probs.width, probs.height);
  int n = probs.width * probs.height;
  int m = probs.categories;
  for (int i = 0; i < n; ++i) {
    double d = 0.0;
    for (int c = 0; c < m; ++c) d += probs.p[i * m + c] * centers[static_cast<size_t>(c)];
    out.depth[i] = d;
  }
  return out;
}

BinPartition uniform_discretization(int n, const DepthRange& range) {
  validate_range(range);
  if (n < 1) throw std::invalid_argument("uniform_discretization: need at least one bin");
  BinPartition part;
  part.widths.assign(static_cast<size_t>(n), 1.0 / n);
  part.range = range;
  return part;
}

BinPartition sid_discretization(int n, const DepthRange& range) {
  validate_range(range);
  if (n < 1) throw std::invalid_argument("sid_discretization: need at least one bin");
  DepthRange r = range;
  if (r.d_min <= 0.0) {  // log spacing needs a positive lower edge
    r.d_min += 1.0;
    r.d_max += 1.0;
  }
  BinPartition part;
  part.range = r;
  part.widths.resize(static_cast<size_t>(n));
  double log_min = std::log(r.d_min);
  double log_ratio = std::log(r.d_max / r.d_min);
  double prev = r.d_min;
  for (int i = 1; i <= n; ++i) {
    double edge = std::exp(log_min + (static_cast<double>(i) / n) * log_ratio);
    part.widths[static_cast<size_t>(i - 1)] = (edge - prev) / r.span();
    prev = edge;
  }
  return part;
}

DepthRange relative_range(const SparseDepthSamples& sparse) {
  double lo = 0.0, hi = 0.0;
  int n_valid = 0;
  for (const auto& s : sparse.samples) {
    if (!(s.d > 0.0)) continue;
    if (n_valid == 0) { lo = hi = s.d; }
    lo = std::min(lo, s.d);
    hi = std::max(hi, s.d);
    ++n_valid;
  }
  if (n_valid < 2 || !(lo < hi))
    throw std::invalid_argument("relative_range: need at least two valid samples with distinct depths");
  return {lo, hi, DepthRange::Kind::scene_relative};
}

BinPartition add_boundary_bins(const BinPartition& part, const DepthRange& dataset) {
  validate_partition(part);
  validate_range(dataset);
  if (!dataset.contains(part.range))
    throw std::invalid_argument("add_boundary_bins: dataset range [" +
                                std::to_string(dataset.d_min) + ", " + std::to_string(dataset.d_max) +
                                "] does not contain partition range [" +
                                std::to_string(part.range.d_min) + ", " +
                                std::to_string(part.range.d_max) + "]");
  BinPartition out = part;
  out.boundary = std::make_pair(dataset.d_min, dataset.d_max);
  return out;
}

// --- differentiable counterparts ---

Tensor normalize_widths_t(const Tensor& raw) {
  Tensor pos = add_const(relu(raw), kWidthEps);
  return div_by(pos, sum(pos));
}

Tensor centers_from_widths_t(const Tensor& widths, const DepthRange& range) {
  validate_range(range);
  int m = widths.size();
  // c = d_min + span * (T w), T = strict lower triangle of ones + I/2.
  Tensor tri = Tensor::zeros({m, m});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < i; ++j) tri.data()[i * m + j] = 1.0;
    tri.data()[i * m + i] = 0.5;
  }
  Tensor c = matmul(tri, reshape(widths, {m, 1}));
  return reshape(add_const(scale(c, range.span()), range.d_min), {m});
}

Tensor append_boundary_t(const Tensor& centers, const DepthRange& dataset) {
  validate_range(dataset);
  return concat_last({Tensor::scalar(dataset.d_min), centers, Tensor::scalar(dataset.d_max)});
}

Tensor depth_from_probs_t(const Tensor& probs, const Tensor& centers) {
  if (probs.rank() != 2 || probs.dim(1) != centers.size())
    throw std::invalid_argument("depth_from_probs_t: " + shape_str(probs.shape()) +
                                " vs centers " + shape_str(centers.shape()));
  return matmul(probs, reshape(centers, {centers.size(), 1}));
}

}  // namespace pddm
