#pragma once

// Bins Initializing Module: sparse depth samples -> seed bin embeddings.

#include "pddm/numerics.hpp"
#include "pddm/types.hpp"

#include <string>

namespace pddm {

struct BimConfig {
  int n_fixed = 500;       // fixed sample count after resampling
  int dim = 32;            // embedding width
  int m1 = 4;              // seed bin count
  bool raw_coords = false; // keep raw pixel coordinates instead of [0,1]
};

// (u, v, d) triples resampled to exactly n_fixed rows.
struct CoordTriples {
  int width = 0;
  int height = 0;
  Tensor s;  // [n_fixed, 3], constant input
};

// Resamples valid samples to n_fixed rows: without replacement when enough
// samples exist, with replacement otherwise. u, v normalized by (extent - 1).
CoordTriples extract_coords(const SparseDepthSamples& sparse, int n_fixed, uint64_t seed,
                            bool raw_coords = false);

class BinsInitModule {
 public:
  BinsInitModule(ParamStore& params, const BimConfig& cfg, const std::string& prefix = "bim");

  // C = concat(S, MLP(S)), MLP = linear(3 -> dim/2) - relu - linear(dim/2 -> dim-3).
  Tensor coord_embed(const Tensor& s) const;
  // B_seed = conv1d over the feature axis (samples as channels) + PE.
  Tensor seed_bins(const Tensor& c) const;
  Tensor forward(const CoordTriples& coords) const;

  int param_count() const;
  const BimConfig& config() const { return cfg_; }

 private:
  BimConfig cfg_;
  Tensor w1_, b1_, w2_, b2_;  // coordinate MLP
  Tensor conv_k_, conv_b_;    // [3, n_fixed, m1] squeeze conv
  Tensor pe_;                 // [m1, dim] learned position embedding
};

}  // namespace pddm
