#include "pddm/bim.hpp"

#include <random>
#include <stdexcept>

namespace pddm {

CoordTriples extract_coords(const SparseDepthSamples& sparse, int n_fixed, uint64_t seed,
                            bool raw_coords) {
  if (n_fixed < 1) throw std::invalid_argument("extract_coords: n_fixed must be positive");
  std::vector<const SparseSample*> valid;
  for (const auto& s : sparse.samples)
    if (s.d > 0.0) valid.push_back(&s);
  if (valid.empty())
    throw std::invalid_argument("extract_coords: no valid samples; the model requires sparse depth input");

  std::mt19937_64 rng(seed);
  std::vector<const SparseSample*> chosen;
  chosen.reserve(static_cast<size_t>(n_fixed));
  if (static_cast<int>(valid.size()) >= n_fixed) {
    for (int i = 0; i < n_fixed; ++i) {
      std::uniform_int_distribution<int> pick(i, static_cast<int>(valid.size()) - 1);
      std::swap(valid[static_cast<size_t>(i)], valid[static_cast<size_t>(pick(rng))]);
      chosen.push_back(valid[static_cast<size_t>(i)]);
    }
  } else {
    std::uniform_int_distribution<int> pick(0, static_cast<int>(valid.size()) - 1);
    for (int i = 0; i < n_fixed; ++i) chosen.push_back(valid[static_cast<size_t>(pick(rng))]);
  }

  double su = raw_coords ? 1.0 : (sparse.width > 1 ? 1.0 / (sparse.width - 1) : 1.0);
  double sv = raw_coords ? 1.0 : (sparse.height > 1 ? 1.0 / (sparse.height - 1) : 1.0);
  CoordTriples out;
  out.width = sparse.width;
  out.height = sparse.height;
  out.s = Tensor::zeros({n_fixed, 3});
  for (int i = 0; i < n_fixed; ++i) {
    out.s.data()[i * 3 + 0] = chosen[static_cast<size_t>(i)]->u * su;
    out.s.data()[i * 3 + 1] = chosen[static_cast<size_t>(i)]->v * sv;
    out.s.data()[i * 3 + 2] = chosen[static_cast<size_t>(i)]->d;
  }
  return out;
}

BinsInitModule::BinsInitModule(ParamStore& params, const BimConfig& cfg, const std::string& prefix)
    : cfg_(cfg) {
  if (cfg.dim < 8) throw std::invalid_argument("bim: dim must be at least 8");
  int hidden = cfg.dim / 2;
  int out_f = cfg.dim - 3;
  w1_ = params.create_weight(prefix + ".mlp.w1", {3, hidden}, 3, hidden);
  b1_ = params.create_zeros(prefix + ".mlp.b1", {hidden});
  w2_ = params.create_weight(prefix + ".mlp.w2", {hidden, out_f}, hidden, out_f);
  b2_ = params.create_zeros(prefix + ".mlp.b2", {out_f});
  conv_k_ = params.create_weight(prefix + ".squeeze.k", {3, cfg.n_fixed, cfg.m1},
                                 3 * cfg.n_fixed, 3 * cfg.m1);
  conv_b_ = params.create_zeros(prefix + ".squeeze.b", {cfg.m1});
  pe_ = params.create_weight(prefix + ".pe", {cfg.m1, cfg.dim}, cfg.dim, cfg.dim);
}

Tensor BinsInitModule::coord_embed(const Tensor& s) const {
  Tensor h = relu(linear(s, w1_, b1_));
  return concat_last({s, linear(h, w2_, b2_)});
}

Tensor BinsInitModule::seed_bins(const Tensor& c) const {
  return add(conv1d(c, conv_k_, conv_b_), pe_);
}

Tensor BinsInitModule::forward(const CoordTriples& coords) const {
  return seed_bins(coord_embed(coords.s));
}

int BinsInitModule::param_count() const {
  return w1_.size() + b1_.size() + w2_.size() + b2_.size() + conv_k_.size() + conv_b_.size() +
         pe_.size();
}

}  // namespace pddm
