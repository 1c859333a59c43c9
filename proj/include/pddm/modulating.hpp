#pragma once

// Adaptive depth modulating branch and the assembled model: encoder pyramid,
// decoder blocks fusing skip features with inverse-projected bin guidance,
// per-stage probability volumes, the final probability prediction block, and
// a simplified CSPN refinement.

#include "pddm/bim.hpp"
#include "pddm/binning.hpp"
#include "pddm/decoupling.hpp"
#include "pddm/numerics.hpp"
#include "pddm/types.hpp"

#include <memory>
#include <string>
#include <vector>

namespace pddm {

struct ModelConfig {
  int dim = 32;
  int stages = 5;   // L
  int n_final = 64;
  int heads = 2;
  int ffn_mult = 4;
  int n_fixed = 500;
  int cspn_iters = 12;
  bool raw_coords = false;
  // Channel widths deepest-first: enc_widths[0] is the bottleneck at scale
  // 1/2^(L-1); enc_widths[L-1] is full resolution.
  std::vector<int> enc_widths{64, 32, 16, 8, 8};
  // Output channels of decoder blocks 1..L-1.
  std::vector<int> dec_widths{32, 16, 8, 8};
  int ppb_channels = 32;
  DepthRange dataset_range{0.5, 10.0, DepthRange::Kind::dataset_absolute};
  bool use_relative_range = true;

  int downsample_factor() const { return 1 << (stages - 1); }
  void validate() const;
};

// Five-level (generally L-level) strided-conv pyramid standing in for the
// full-scale backbone. features[0] is the deepest level.
class Encoder {
 public:
  Encoder(ParamStore& params, const ModelConfig& cfg, const std::string& prefix = "encoder");
  // 4-channel input: rgb + rasterized sparse depth (0 = missing).
  std::vector<Tensor> forward(const Image& rgb, const DenseDepthMap& sparse_raster) const;

 private:
  int levels_;
  Tensor stem_k_, stem_b_;
  std::vector<Tensor> down_k_, down_b_;
};

class DecoderBlock {
 public:
  DecoderBlock(ParamStore& params, const std::string& prefix, int c_prev, int c_skip, int dim,
               int c_out);
  // Upsamples f_prev to the skip's extents, concatenates skip and guidance,
  // then two 3x3 convs with leaky relu.
  Tensor forward(const Tensor& f_prev, const Tensor& b_iproj, const Tensor& skip) const;

 private:
  Tensor up_k_, up_b_;
  Tensor c1_k_, c1_b_, c2_k_, c2_b_;
};

// Shared probability head: dim-projected pixel features interact with bin
// embeddings; a final 1x1 conv adds the two boundary-category logits.
class ProbHead {
 public:
  ProbHead(ParamStore& params, const std::string& prefix, int c_in, int dim, int m);
  // f: [h,w,c_in]; bhat: [m,dim] -> probabilities [h*w, m+2].
  Tensor forward(const Tensor& f, const Tensor& bhat) const;

 private:
  int m_;
  Tensor proj_k_, proj_b_;  // 3x3 conv to dim
  Tensor out_w_, out_b_;    // 1x1 conv m -> m+2
};

class PpbBlock {
 public:
  PpbBlock(ParamStore& params, const std::string& prefix, int c_prev, int c_skip, int dim, int m,
           int c_mid);
  Tensor forward(const Tensor& f_prev, const Tensor& b_iproj, const Tensor& skip,
                 const Tensor& bhat) const;

 private:
  Tensor conv_k_, conv_b_;
  Tensor bn_g_, bn_b_;
  ProbHead head_;
};

// Simplified convolutional spatial propagation. Neighbor weights are the
// softmax over the 8 affinity channels scaled by a saturating propagation
// strength s = t/(1+t), t = sum |a_k|; the center keeps 1-s. Pixels carrying
// a sparse measurement are reset to the measured value after every round.
DenseDepthMap cspn_refine(const DenseDepthMap& depth, const Eigen::VectorXd& affinity,
                          const SparseDepthSamples& sparse, int iters);

struct StageOutput {
  int stage = 0;  // 1-based
  int h = 0, w = 0;
  Tensor probs;    // [h*w, m+2]
  Tensor widths;   // [m]
  Tensor centers;  // [m+2]
  Tensor depth;    // [h*w, 1]
};

struct ForwardResult {
  std::vector<StageOutput> stages;
  DepthRange rel_range;
  DenseDepthMap final_depth;    // last stage, before refinement
  DenseDepthMap refined_depth;  // after CSPN
};

class Model {
 public:
  Model(ParamStore& params, const ModelConfig& cfg);

  // sample_seed drives the BIM coordinate resampling only.
  ForwardResult forward(const Image& rgb, const SparseDepthSamples& sparse,
                        uint64_t sample_seed) const;

  const ModelConfig& config() const { return cfg_; }
  const StageSchedule& schedule() const { return schedule_; }
  const BinsInitModule& bim() const { return *bim_; }

 private:
  ModelConfig cfg_;
  StageSchedule schedule_;
  std::unique_ptr<BinsInitModule> bim_;
  std::unique_ptr<Encoder> encoder_;
  std::vector<std::unique_ptr<TransformerBlock>> blocks_;
  std::vector<std::unique_ptr<DecoderBlock>> decoders_;
  std::vector<std::unique_ptr<ProbHead>> heads_;
  std::unique_ptr<PpbBlock> ppb_;
  Tensor affinity_k_, affinity_b_;  // 3x3 conv from the last decoder stage's probs
};

}  // namespace pddm
