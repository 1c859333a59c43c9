#include "pddm/modulating.hpp"

#include "pddm/data.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pddm {

void ModelConfig::validate() const {
  validate_range(dataset_range);
  if (stages < 2) throw std::invalid_argument("model: need at least two stages");
  StageSchedule::make(stages, n_final);  // checks divisibility
  if (static_cast<int>(enc_widths.size()) != stages)
    throw std::invalid_argument("model: enc_widths must list one channel width per stage");
  if (static_cast<int>(dec_widths.size()) != stages - 1)
    throw std::invalid_argument("model: dec_widths must list stages-1 channel widths");
  if (dim < 8 || dim % heads != 0)
    throw std::invalid_argument("model: dim must be >= 8 and divisible by heads");
}

// --- encoder ---

Encoder::Encoder(ParamStore& params, const ModelConfig& cfg, const std::string& prefix)
    : levels_(cfg.stages) {
  int full_c = cfg.enc_widths.back();
  stem_k_ = params.create_weight(prefix + ".stem.k", {3, 3, 4, full_c}, 9 * 4, 9 * full_c);
  stem_b_ = params.create_zeros(prefix + ".stem.b", {full_c});
  // Level i (deepest-first index) is produced by striding from level i+1.
  for (int i = levels_ - 2; i >= 0; --i) {
    int cin = cfg.enc_widths[static_cast<size_t>(i + 1)];
    int cout = cfg.enc_widths[static_cast<size_t>(i)];
    std::string name = prefix + ".down" + std::to_string(levels_ - 1 - i);
    down_k_.push_back(params.create_weight(name + ".k", {3, 3, cin, cout}, 9 * cin, 9 * cout));
    down_b_.push_back(params.create_zeros(name + ".b", {cout}));
  }
}

std::vector<Tensor> Encoder::forward(const Image& rgb, const DenseDepthMap& sparse_raster) const {
  int h = rgb.height, w = rgb.width;
  int factor = 1 << (levels_ - 1);
  if (h % factor != 0 || w % factor != 0)
    throw std::invalid_argument("encode: extents " + std::to_string(w) + "x" + std::to_string(h) +
                                " must be divisible by " + std::to_string(factor));
  if (sparse_raster.width != w || sparse_raster.height != h)
    throw std::invalid_argument("encode: sparse raster extents do not match the image");
  Tensor input = Tensor::zeros({h, w, 4});
  for (int i = 0; i < h * w; ++i) {
    input.data()[i * 4 + 0] = rgb.rgb[i * 3 + 0];
    input.data()[i * 4 + 1] = rgb.rgb[i * 3 + 1];
    input.data()[i * 4 + 2] = rgb.rgb[i * 3 + 2];
    input.data()[i * 4 + 3] = sparse_raster.depth[i];
  }
  std::vector<Tensor> feats(static_cast<size_t>(levels_));
  Tensor cur = leaky_relu(conv2d(input, stem_k_, stem_b_, 1));
  feats[static_cast<size_t>(levels_ - 1)] = cur;
  for (int i = levels_ - 2; i >= 0; --i) {
    size_t k = static_cast<size_t>(levels_ - 2 - i);
    cur = leaky_relu(conv2d(cur, down_k_[k], down_b_[k], 2));
    feats[static_cast<size_t>(i)] = cur;
  }
  return feats;
}

// --- decoder block ---

DecoderBlock::DecoderBlock(ParamStore& params, const std::string& prefix, int c_prev, int c_skip,
                           int dim, int c_out) {
  up_k_ = params.create_weight(prefix + ".up.k", {3, 3, c_out, c_prev}, 9 * c_prev, 9 * c_out);
  up_b_ = params.create_zeros(prefix + ".up.b", {c_out});
  int c_cat = c_out + c_skip + dim;
  c1_k_ = params.create_weight(prefix + ".c1.k", {3, 3, c_cat, c_out}, 9 * c_cat, 9 * c_out);
  c1_b_ = params.create_zeros(prefix + ".c1.b", {c_out});
  c2_k_ = params.create_weight(prefix + ".c2.k", {3, 3, c_out, c_out}, 9 * c_out, 9 * c_out);
  c2_b_ = params.create_zeros(prefix + ".c2.b", {c_out});
}

Tensor DecoderBlock::forward(const Tensor& f_prev, const Tensor& b_iproj, const Tensor& skip) const {
  Tensor up = leaky_relu(transposed_conv2d(f_prev, up_k_, up_b_));
  if (up.dim(0) != skip.dim(0) || up.dim(1) != skip.dim(1) || b_iproj.dim(0) != skip.dim(0) ||
      b_iproj.dim(1) != skip.dim(1))
    throw std::invalid_argument("decoder_block: extent mismatch between upsampled " +
                                shape_str(up.shape()) + ", skip " + shape_str(skip.shape()) +
                                " and guidance " + shape_str(b_iproj.shape()));
  Tensor cat = concat_last({up, skip, b_iproj});
  Tensor x = leaky_relu(conv2d(cat, c1_k_, c1_b_, 1));
  return leaky_relu(conv2d(x, c2_k_, c2_b_, 1));
}

// --- probability head ---

ProbHead::ProbHead(ParamStore& params, const std::string& prefix, int c_in, int dim, int m)
    : m_(m) {
  proj_k_ = params.create_weight(prefix + ".proj.k", {3, 3, c_in, dim}, 9 * c_in, 9 * dim);
  proj_b_ = params.create_zeros(prefix + ".proj.b", {dim});
  out_w_ = params.create_weight(prefix + ".out.w", {m, m + 2}, m, m + 2);
  out_b_ = params.create_zeros(prefix + ".out.b", {m + 2});
}

Tensor ProbHead::forward(const Tensor& f, const Tensor& bhat) const {
  if (bhat.dim(0) != m_)
    throw std::invalid_argument("prob head: expected " + std::to_string(m_) + " bins, got " +
                                shape_str(bhat.shape()));
  int hw = f.dim(0) * f.dim(1);
  Tensor pix = reshape(conv2d(f, proj_k_, proj_b_, 1), {hw, bhat.dim(1)});
  // Per-pixel dot with each bin, tempered by 1/sqrt(dim) so the logits stay
  // in a range where the softmax keeps usable gradients across all stages.
  Tensor interact = scale(matmul(pix, transpose(bhat)), 1.0 / std::sqrt(double(bhat.dim(1))));
  return softmax_lastaxis(linear(interact, out_w_, out_b_));
}

// --- final probability prediction block ---

PpbBlock::PpbBlock(ParamStore& params, const std::string& prefix, int c_prev, int c_skip, int dim,
                   int m, int c_mid)
    : head_(params, prefix + ".head", c_mid, dim, m) {
  int c_cat = c_prev + c_skip + dim;
  conv_k_ = params.create_weight(prefix + ".conv.k", {3, 3, c_cat, c_mid}, 9 * c_cat, 9 * c_mid);
  conv_b_ = params.create_zeros(prefix + ".conv.b", {c_mid});
  bn_g_ = params.create_ones(prefix + ".bn.g", {c_mid});
  bn_b_ = params.create_zeros(prefix + ".bn.b", {c_mid});
}

Tensor PpbBlock::forward(const Tensor& f_prev, const Tensor& b_iproj, const Tensor& skip,
                         const Tensor& bhat) const {
  Tensor cat = concat_last({f_prev, skip, b_iproj});
  Tensor x = leaky_relu(channel_norm(conv2d(cat, conv_k_, conv_b_, 1), bn_g_, bn_b_));
  return head_.forward(x, bhat);
}

// --- CSPN ---

DenseDepthMap cspn_refine(const DenseDepthMap& depth, const Eigen::VectorXd& affinity,
                          const SparseDepthSamples& sparse, int iters) {
  int h = depth.height, w = depth.width;
  if (affinity.size() != h * w * 8)
    throw std::invalid_argument("cspn_refine: affinity must have 8 channels per pixel");
  static const int kDu[8] = {-1, 0, 1, -1, 1, -1, 0, 1};
  static const int kDv[8] = {-1, -1, -1, 0, 0, 1, 1, 1};

  DenseDepthMap anchors(w, h);
  for (const auto& s : sparse.samples)
    if (s.d > 0.0 && s.u >= 0 && s.u < w && s.v >= 0 && s.v < h) anchors.at(s.v, s.u) = s.d;

  DenseDepthMap cur = depth;
  // Anchor up front as well so measured pixels hold even with zero rounds.
  for (int i = 0; i < w * h; ++i)
    if (anchors.depth[i] > 0.0) cur.depth[i] = anchors.depth[i];
  DenseDepthMap next(w, h);
  for (int it = 0; it < iters; ++it) {
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < w; ++u) {
        const double* a = affinity.data() + (v * w + u) * 8;
        double mx = a[0], t = 0.0;
        for (int k = 1; k < 8; ++k) mx = std::max(mx, a[k]);
        for (int k = 0; k < 8; ++k) t += std::abs(a[k]);
        double s = t / (1.0 + t);
        double esum = 0.0, acc = 0.0;
        double e[8];
        for (int k = 0; k < 8; ++k) {
          e[k] = std::exp(a[k] - mx);
          esum += e[k];
        }
        for (int k = 0; k < 8; ++k) {
          int nu = std::clamp(u + kDu[k], 0, w - 1);
          int nv = std::clamp(v + kDv[k], 0, h - 1);
          acc += (e[k] / esum) * s * cur.at(nv, nu);
        }
        next.at(v, u) = (1.0 - s) * cur.at(v, u) + acc;
      }
    for (int i = 0; i < h * w; ++i)
      if (anchors.depth[i] > 0.0) next.depth[i] = anchors.depth[i];  // measurement replacement
    std::swap(cur, next);
  }
  return cur;
}

// --- assembled model ---

Model::Model(ParamStore& params, const ModelConfig& cfg)
    : cfg_(cfg), schedule_(StageSchedule::make(cfg.stages, cfg.n_final)) {
  cfg_.validate();
  BimConfig bim_cfg{cfg.n_fixed, cfg.dim, schedule_.bins[0], cfg.raw_coords};
  bim_ = std::make_unique<BinsInitModule>(params, bim_cfg);
  encoder_ = std::make_unique<Encoder>(params, cfg_);
  int L = cfg.stages;
  for (int l = 1; l <= L; ++l) {
    // Feature channels seen by this stage's projection: bottleneck for stage
    // 1, the previous decoder output afterwards.
    int feat_c = l == 1 ? cfg.enc_widths[0] : cfg.dec_widths[static_cast<size_t>(l - 2)];
    blocks_.push_back(std::make_unique<TransformerBlock>(
        params, "decouple.block" + std::to_string(l), cfg.dim,
        schedule_.bins[static_cast<size_t>(l - 1)], feat_c, cfg.heads, cfg.ffn_mult, l < L));
  }
  for (int l = 1; l <= L - 1; ++l) {
    int c_prev = l == 1 ? cfg.enc_widths[0] : cfg.dec_widths[static_cast<size_t>(l - 2)];
    int c_skip = cfg.enc_widths[static_cast<size_t>(l)];
    int c_out = cfg.dec_widths[static_cast<size_t>(l - 1)];
    decoders_.push_back(std::make_unique<DecoderBlock>(
        params, "decoder.block" + std::to_string(l), c_prev, c_skip, cfg.dim, c_out));
    heads_.push_back(std::make_unique<ProbHead>(params, "probs.stage" + std::to_string(l), c_out,
                                                cfg.dim, schedule_.bins[static_cast<size_t>(l - 1)]));
  }
  ppb_ = std::make_unique<PpbBlock>(params, "ppb", cfg.dec_widths.back(), cfg.enc_widths.back(),
                                    cfg.dim, schedule_.bins.back(), cfg.ppb_channels);
  int aff_in = schedule_.bins[static_cast<size_t>(L - 2)] + 2;
  affinity_k_ = params.create_weight("cspn.affinity.k", {3, 3, aff_in, 8}, 9 * aff_in, 9 * 8);
  affinity_b_ = params.create_zeros("cspn.affinity.b", {8});
}

ForwardResult Model::forward(const Image& rgb, const SparseDepthSamples& sparse,
                             uint64_t sample_seed) const {
  ForwardResult result;
  DepthRange stage_range = cfg_.dataset_range;
  if (cfg_.use_relative_range) stage_range = relative_range(sparse);
  result.rel_range = stage_range;

  CoordTriples coords = extract_coords(sparse, cfg_.n_fixed, sample_seed, cfg_.raw_coords);
  Tensor bins = bim_->forward(coords);

  std::vector<Tensor> enc = encoder_->forward(rgb, rasterize(sparse));
  Tensor f_prev = enc[0];
  int L = cfg_.stages;
  Tensor aff_source;

  for (int l = 1; l <= L; ++l) {
    const TransformerBlock& tb = *blocks_[static_cast<size_t>(l - 1)];
    Tensor fproj = tb.project(f_prev);
    Tensor bhat = tb.refine(bins, fproj);
    StagePartition part = partition_from_scores(tb.raw_widths(bhat), stage_range,
                                                cfg_.dataset_range);
    StageOutput stage;
    stage.stage = l;
    stage.widths = part.widths;
    stage.centers = part.centers;
    if (l < L) {
      const Tensor& skip = enc[static_cast<size_t>(l)];
      int th = skip.dim(0), tw = skip.dim(1);
      Tensor iproj = tb.inverse_project(bhat, th, tw);
      Tensor f_l = decoders_[static_cast<size_t>(l - 1)]->forward(f_prev, iproj, skip);
      stage.probs = heads_[static_cast<size_t>(l - 1)]->forward(f_l, bhat);
      stage.h = th;
      stage.w = tw;
      if (l == L - 1) aff_source = stage.probs;
      f_prev = f_l;
      bins = tb.split(bhat);
    } else {
      const Tensor& skip = enc.back();
      int th = skip.dim(0), tw = skip.dim(1);
      Tensor iproj = tb.inverse_project(bhat, th, tw);
      stage.probs = ppb_->forward(f_prev, iproj, skip, bhat);
      stage.h = th;
      stage.w = tw;
    }
    stage.depth = depth_from_probs_t(stage.probs, stage.centers);
    result.stages.push_back(std::move(stage));
  }

  const StageOutput& last = result.stages.back();
  result.final_depth = DenseDepthMap(last.w, last.h);
  result.final_depth.depth = last.depth.data();

  Tensor aff_vol = reshape(aff_source, {last.h, last.w, aff_source.dim(1)});
  Tensor affinity = conv2d(aff_vol, affinity_k_, affinity_b_, 1);
  result.refined_depth = cspn_refine(result.final_depth, affinity.data(), sparse, cfg_.cspn_iters);
  return result;
}

}  // namespace pddm
