#pragma once

// Incremental depth decoupling branch: transformer blocks that refine bin
// embeddings against projected depth features, emit per-stage bin widths,
// split bins for the next stage, and exchange guidance with the modulating
// branch through projection / inverse projection.

#include "pddm/binning.hpp"
#include "pddm/numerics.hpp"

#include <string>
#include <vector>

namespace pddm {

struct StageSchedule {
  int stages = 5;            // L
  int n_final = 64;          // bin count at the last stage
  std::vector<int> bins;     // m_1 .. m_L, doubling each stage

  // Requires n_final divisible by 2^(L-1).
  static StageSchedule make(int stages, int n_final);
};

class TransformerBlock {
 public:
  // m_in: bin count entering this block; feat_channels: c_l of the spatial
  // feature this stage projects; has_split: false for the last stage.
  TransformerBlock(ParamStore& params, const std::string& prefix, int dim, int m_in,
                   int feat_channels, int heads, int ffn_mult, bool has_split);

  // softmax(B B^T / sqrt(dim)) B per head, then residual + layer norm.
  Tensor self_attend(const Tensor& b) const;
  // Pure affinity aggregation: softmax over patches per bin row, times F.
  Tensor cross_attend(const Tensor& bp, const Tensor& fproj) const;
  // FFN with hidden width ffn_mult*dim, plus residual + layer norm.
  Tensor ffn_refine(const Tensor& b) const;
  // Full block: self-attention, cross-attention (+residual/LN), FFN.
  Tensor refine(const Tensor& b, const Tensor& fproj) const;

  // Per-bin raw width scores, shape [m].
  Tensor raw_widths(const Tensor& bhat) const;
  // Doubles the bin count: relu(linear along the bin axis); errors when the
  // block has no split (last stage).
  Tensor split(const Tensor& bhat) const;
  // Spatial feature [h,w,c] -> projected rows [h*w, dim].
  Tensor project(const Tensor& feat) const;
  // Bin-pooled broadcast + 1x1 channel conv -> [h,w,dim], spatially constant.
  Tensor inverse_project(const Tensor& bhat, int h, int w) const;

  int bins_in() const { return m_in_; }

 private:
  int dim_, m_in_, heads_;
  bool has_split_;
  Tensor ln1_g_, ln1_b_, ln2_g_, ln2_b_, ln3_g_, ln3_b_;
  Tensor ffn_w1_, ffn_b1_, ffn_w2_, ffn_b2_;
  Tensor width_w_, width_b_;
  Tensor split_w_, split_b_;          // [m_in, 2*m_in]
  Tensor proj_w_, proj_b_;            // [feat_channels, dim]
  Tensor ipool_w_;                    // [m_in, 1] bin pooling
  Tensor iconv_w_, iconv_b_;          // [dim, dim] 1x1 channel conv
};

// Differentiable partition head shared by all stages: raw scores ->
// normalized widths -> interior centers in `range` -> boundary categories at
// the dataset ends.
struct StagePartition {
  Tensor widths;    // [m]
  Tensor centers;   // [m+2], sorted, ends pinned to the dataset range
};
StagePartition partition_from_scores(const Tensor& raw, const DepthRange& range,
                                     const DepthRange& dataset);

}  // namespace pddm
