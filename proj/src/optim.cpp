#include "pddm/optim.hpp"

#include <cmath>

namespace pddm {

Adam::Adam(ParamStore& params, double lr, double beta1, double beta2, double eps)
    : params_(params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, t] : params.all()) {
    m_[name] = Vec::Zero(t.size());
    v_[name] = Vec::Zero(t.size());
  }
}

void Adam::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, t_);
  double bc2 = 1.0 - std::pow(beta2_, t_);
  // Clip by global norm: an occasional gradient spike (the losses have L1
  // kinks and hard-min assignments) would otherwise knock training off a
  // converged basin.
  double scale = 1.0;
  if (clip_norm_ > 0.0) {
    double sq = 0.0;
    for (auto& [name, t_const] : params_.all()) {
      Tensor t = t_const;
      if (t.has_grad()) sq += t.grad().squaredNorm();
    }
    double norm = std::sqrt(sq);
    if (norm > clip_norm_) scale = clip_norm_ / norm;
  }
  for (auto& [name, t_const] : params_.all()) {
    Tensor t = t_const;
    if (!t.has_grad()) continue;
    Vec& m = m_[name];
    Vec& v = v_[name];
    Vec g = scale * t.grad();
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = (beta2_ * v.array() + (1.0 - beta2_) * g.array().square()).matrix();
    t.data().array() -= lr_ * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps_);
  }
  params_.zero_grads();
}

}  // namespace pddm
