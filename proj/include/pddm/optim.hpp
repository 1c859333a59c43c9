#pragma once

#include "pddm/numerics.hpp"

#include <map>
#include <string>

namespace pddm {

// First-order adaptive-moment optimizer over a ParamStore.
class Adam {
 public:
  explicit Adam(ParamStore& params, double lr = 3e-3, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  // Applies one update from the accumulated grads, then clears them.
  void step();
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  // Global-norm gradient clip applied before the update; <= 0 disables.
  void set_clip_norm(double c) { clip_norm_ = c; }

 private:
  ParamStore& params_;
  double lr_, beta1_, beta2_, eps_;
  double clip_norm_ = 10.0;
  int t_ = 0;
  std::map<std::string, Vec> m_, v_;
};

}  // namespace pddm
