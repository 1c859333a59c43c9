#include "pddm/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace pddm {

LossWeights LossWeights::make(int stages, double beta) {
  LossWeights w;
  w.beta = beta;
  for (int l = 1; l <= stages; ++l) w.omega.push_back(std::pow(0.5, stages - l));
  return w;
}

double depth_loss(const DenseDepthMap& pred, const DenseDepthMap& gt, int rho) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw std::invalid_argument("depth_loss: extent mismatch");
  if (rho != 1 && rho != 2) throw std::invalid_argument("depth_loss: rho must be 1 or 2");
  double s = 0.0;
  int n = 0;
  for (int i = 0; i < gt.width * gt.height; ++i) {
    if (!(gt.depth[i] > 0.0)) continue;
    double e = std::abs(gt.depth[i] - pred.depth[i]);
    s += rho == 1 ? e : e * e;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("depth_loss: no valid ground-truth pixels");
  return s / n;
}

static std::vector<double> valid_depths(const DenseDepthMap& gt, int cap, uint64_t seed) {
  std::vector<double> d;
  for (int i = 0; i < gt.width * gt.height; ++i)
    if (gt.depth[i] > 0.0) d.push_back(gt.depth[i]);
  if (d.empty()) throw std::invalid_argument("chamfer: no valid ground-truth pixels");
  if (cap > 0 && static_cast<int>(d.size()) > cap) {
    std::mt19937_64 rng(seed);
    for (int i = 0; i < cap; ++i) {
      std::uniform_int_distribution<int> pick(i, static_cast<int>(d.size()) - 1);
      std::swap(d[static_cast<size_t>(i)], d[static_cast<size_t>(pick(rng))]);
    }
    d.resize(static_cast<size_t>(cap));
  }
  return d;
}

double chamfer_bins(const std::vector<double>& centers, const DenseDepthMap& gt, int cap,
                    uint64_t seed) {
  if (centers.empty()) throw std::invalid_argument("chamfer: empty center set");
  std::vector<double> d = valid_depths(gt, cap, seed);
  double loss = 0.0;
  for (double x : d) {
    double best = std::numeric_limits<double>::infinity();
    for (double c : centers) best = std::min(best, (x - c) * (x - c));
    loss += best;
  }
  for (double c : centers) {
    double best = std::numeric_limits<double>::infinity();
    for (double x : d) best = std::min(best, (x - c) * (x - c));
    loss += best;
  }
  return loss;
}

DenseDepthMap downsample_gt(const DenseDepthMap& gt, int factor) {
  if (factor < 1 || gt.width % factor != 0 || gt.height % factor != 0)
    throw std::invalid_argument("downsample_gt: extents not divisible by factor " +
                                std::to_string(factor));
  DenseDepthMap out(gt.width / factor, gt.height / factor);
  for (int v = 0; v < out.height; ++v)
    for (int u = 0; u < out.width; ++u) {
      double s = 0.0;
      int n = 0;
      for (int dv = 0; dv < factor; ++dv)
        for (int du = 0; du < factor; ++du) {
          double d = gt.at(v * factor + dv, u * factor + du);
          if (d > 0.0) { s += d; ++n; }
        }
      out.at(v, u) = n > 0 ? s / n : 0.0;
    }
  return out;
}

DenseDepthMap upsample_nearest(const DenseDepthMap& d, int factor) {
  if (factor < 1)
    throw std::invalid_argument("upsample_nearest: factor must be >= 1, got " +
                                std::to_string(factor));
  DenseDepthMap out(d.width * factor, d.height * factor);
  for (int v = 0; v < out.height; ++v)
    for (int u = 0; u < out.width; ++u) out.at(v, u) = d.at(v / factor, u / factor);
  return out;
}

Tensor depth_loss_t(const Tensor& pred, const DenseDepthMap& gt, int rho) {
  if (rho != 1 && rho != 2) throw std::invalid_argument("depth_loss: rho must be 1 or 2");
  int n = gt.width * gt.height;
  if (pred.size() != n)
    throw std::invalid_argument("depth_loss: prediction size " + std::to_string(pred.size()) +
                                " vs " + std::to_string(n) + " gt pixels");
  Tensor mask = Tensor::zeros({n, 1});
  Tensor target = Tensor::zeros({n, 1});
  int n_valid = 0;
  for (int i = 0; i < n; ++i)
    if (gt.depth[i] > 0.0) {
      mask.data()[i] = 1.0;
      target.data()[i] = gt.depth[i];
      ++n_valid;
    }
  if (n_valid == 0) throw std::invalid_argument("depth_loss: no valid ground-truth pixels");
  Tensor diff = mul(sub(reshape(pred, {n, 1}), target), mask);
  Tensor per_pixel = rho == 1 ? abs_val(diff) : square(diff);
  return scale(sum(per_pixel), 1.0 / n_valid);
}

Tensor chamfer_bins_t(const Tensor& centers, const DenseDepthMap& gt, int cap, uint64_t seed) {
  if (centers.rank() != 1 || centers.size() == 0)
    throw std::invalid_argument("chamfer: expected non-empty center vector");
  std::vector<double> d = valid_depths(gt, cap, seed);
  int m = centers.size();
  int nd = static_cast<int>(d.size());
  // Hard-min assignments computed on values; gradient flows through gather.
  std::vector<int> nearest_center(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) {
    int best = 0;
    double bd = std::abs(d[static_cast<size_t>(i)] - centers[0]);
    for (int c = 1; c < m; ++c) {
      double e = std::abs(d[static_cast<size_t>(i)] - centers[c]);
      if (e < bd) { bd = e; best = c; }
    }
    nearest_center[static_cast<size_t>(i)] = best;
  }
  Tensor d_t = Tensor::from({nd}, d);
  Tensor term1 = sum(square(sub(gather(centers, nearest_center), d_t)));

  std::vector<double> nearest_depth(static_cast<size_t>(m));
  for (int c = 0; c < m; ++c) {
    double bd = std::numeric_limits<double>::infinity(), bv = d[0];
    for (double x : d) {
      double e = std::abs(x - centers[c]);
      if (e < bd) { bd = e; bv = x; }
    }
    nearest_depth[static_cast<size_t>(c)] = bv;
  }
  Tensor term2 = sum(square(sub(centers, Tensor::from({m}, nearest_depth))));
  return add(term1, term2);
}

Tensor multi_scale_loss_t(const ForwardResult& result, const DenseDepthMap& gt,
                          const LossWeights& weights, int chamfer_cap, uint64_t chamfer_seed) {
  if (result.stages.size() != weights.omega.size())
    throw std::invalid_argument("multi_scale_loss: " + std::to_string(result.stages.size()) +
                                " stages vs " + std::to_string(weights.omega.size()) + " weights");
  Tensor total = Tensor::scalar(0.0);
  for (size_t i = 0; i < result.stages.size(); ++i) {
    const StageOutput& st = result.stages[i];
    if (gt.width % st.w != 0 || gt.height % st.h != 0)
      throw std::invalid_argument("multi_scale_loss: stage extents do not divide the gt extents");
    DenseDepthMap gt_l = downsample_gt(gt, gt.width / st.w);
    Tensor stage_loss = add(depth_loss_t(st.depth, gt_l, 1), depth_loss_t(st.depth, gt_l, 2));
    Tensor bins_loss = chamfer_bins_t(st.centers, gt_l, chamfer_cap, chamfer_seed);
    stage_loss = add(stage_loss, scale(bins_loss, weights.beta));
    total = add(total, scale(stage_loss, weights.omega[i]));
  }
  return total;
}

}  // namespace pddm
