#include "pddm/decoupling.hpp"

#include <cmath>
#include <stdexcept>

namespace pddm {

StageSchedule StageSchedule::make(int stages, int n_final) {
  if (stages < 1) throw std::invalid_argument("schedule: need at least one stage");
  int denom = 1 << (stages - 1);
  if (n_final < denom || n_final % denom != 0)
    throw std::invalid_argument("schedule: n_final " + std::to_string(n_final) +
                                " must be divisible by 2^(L-1) = " + std::to_string(denom));
  StageSchedule s;
  s.stages = stages;
  s.n_final = n_final;
  int m = n_final / denom;
  for (int l = 0; l < stages; ++l, m *= 2) s.bins.push_back(m);
  return s;
}

TransformerBlock::TransformerBlock(ParamStore& params, const std::string& prefix, int dim,
                                   int m_in, int feat_channels, int heads, int ffn_mult,
                                   bool has_split)
    : dim_(dim), m_in_(m_in), heads_(heads), has_split_(has_split) {
  if (heads < 1 || dim % heads != 0)
    throw std::invalid_argument("transformer: dim " + std::to_string(dim) +
                                " not divisible by head count " + std::to_string(heads));
  ln1_g_ = params.create_ones(prefix + ".ln1.g", {dim});
  ln1_b_ = params.create_zeros(prefix + ".ln1.b", {dim});
  ln2_g_ = params.create_ones(prefix + ".ln2.g", {dim});
  ln2_b_ = params.create_zeros(prefix + ".ln2.b", {dim});
  ln3_g_ = params.create_ones(prefix + ".ln3.g", {dim});
  ln3_b_ = params.create_zeros(prefix + ".ln3.b", {dim});
  int hidden = ffn_mult * dim;
  ffn_w1_ = params.create_weight(prefix + ".ffn.w1", {dim, hidden}, dim, hidden);
  ffn_b1_ = params.create_zeros(prefix + ".ffn.b1", {hidden});
  ffn_w2_ = params.create_weight(prefix + ".ffn.w2", {hidden, dim}, hidden, dim);
  ffn_b2_ = params.create_zeros(prefix + ".ffn.b2", {dim});
  width_w_ = params.create_weight(prefix + ".width.w", {dim, 1}, dim, 1);
  width_b_ = params.create_zeros(prefix + ".width.b", {1});
  if (has_split) {
    split_w_ = params.create_weight(prefix + ".split.w", {m_in, 2 * m_in}, m_in, 2 * m_in);
    split_b_ = params.create_zeros(prefix + ".split.b", {2 * m_in});
  }
  proj_w_ = params.create_weight(prefix + ".proj.w", {feat_channels, dim}, feat_channels, dim);
  proj_b_ = params.create_zeros(prefix + ".proj.b", {dim});
  ipool_w_ = params.create_weight(prefix + ".iproj.pool", {m_in, 1}, m_in, 1);
  iconv_w_ = params.create_weight(prefix + ".iproj.w", {dim, dim}, dim, dim);
  iconv_b_ = params.create_zeros(prefix + ".iproj.b", {dim});
}

// Heads split the feature axis; attention logits keep the 1/sqrt(dim) scale.
static Tensor attend(const Tensor& q, const Tensor& kv, int heads, int dim) {
  double inv_scale = 1.0 / std::sqrt(static_cast<double>(dim));
  int hd = dim / heads;
  std::vector<Tensor> outs;
  outs.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_last(q, h * hd, hd);
    Tensor kh = slice_last(kv, h * hd, hd);
    Tensor logits = scale(matmul(qh, transpose(kh)), inv_scale);
    outs.push_back(matmul(softmax_lastaxis(logits), kh));
  }
  return heads == 1 ? outs[0] : concat_last(outs);
}

Tensor TransformerBlock::self_attend(const Tensor& b) const {
  return layer_norm(add(b, attend(b, b, heads_, dim_)), ln1_g_, ln1_b_);
}

Tensor TransformerBlock::cross_attend(const Tensor& bp, const Tensor& fproj) const {
  if (fproj.shape().back() != dim_)
    throw std::invalid_argument("cross_attend: feature dim " + shape_str(fproj.shape()) +
                                " does not match embedding dim " + std::to_string(dim_));
  return attend(bp, fproj, heads_, dim_);
}

Tensor TransformerBlock::ffn_refine(const Tensor& b) const {
  Tensor h = linear(relu(linear(b, ffn_w1_, ffn_b1_)), ffn_w2_, ffn_b2_);
  return layer_norm(add(b, h), ln3_g_, ln3_b_);
}

Tensor TransformerBlock::refine(const Tensor& b, const Tensor& fproj) const {
  Tensor bp = self_attend(b);
  Tensor bpp = layer_norm(add(bp, cross_attend(bp, fproj)), ln2_g_, ln2_b_);
  return ffn_refine(bpp);
}

Tensor TransformerBlock::raw_widths(const Tensor& bhat) const {
  return reshape(linear(bhat, width_w_, width_b_), {bhat.dim(0)});
}

Tensor TransformerBlock::split(const Tensor& bhat) const {
  if (!has_split_)
    throw std::logic_error("split: the final stage has no bin splitting");
  // Linear map along the bin axis, then relu.
  return relu(transpose(add_rowwise(matmul(transpose(bhat), split_w_), split_b_)));
}

Tensor TransformerBlock::project(const Tensor& feat) const {
  if (feat.rank() != 3)
    throw std::invalid_argument("project: expected [h,w,c], got " + shape_str(feat.shape()));
  int hw = feat.dim(0) * feat.dim(1);
  return linear(reshape(feat, {hw, feat.dim(2)}), proj_w_, proj_b_);
}

Tensor TransformerBlock::inverse_project(const Tensor& bhat, int h, int w) const {
  // Pool bins into one dim-vector, broadcast spatially, then 1x1 channel conv.
  Tensor g = transpose(matmul(transpose(bhat), ipool_w_));  // [1, dim]
  Tensor field = matmul(Tensor::full({h * w, 1}, 1.0), g);  // broadcast rows
  return reshape(linear(field, iconv_w_, iconv_b_), {h, w, dim_});
}

StagePartition partition_from_scores(const Tensor& raw, const DepthRange& range,
                                     const DepthRange& dataset) {
  if (!dataset.contains(range))
    throw std::invalid_argument("partition_from_scores: dataset range does not contain stage range");
  StagePartition out;
  out.widths = normalize_widths_t(raw);
  out.centers = append_boundary_t(centers_from_widths_t(out.widths, range), dataset);
  return out;
}

}  // namespace pddm
