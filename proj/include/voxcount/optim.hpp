#pragma once

#include <functional>
#include <string>
#include <vector>

#include "voxcount/autodiff.hpp"

namespace voxcount {

enum class OptKind { Sgd, Adam };

struct OptimizerConfig {
  OptKind kind = OptKind::Sgd;  // plain gradient descent by default
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // global gradient-norm clip; 0 disables
};

// First-order optimizer over a fixed parameter list. step() aborts without
// touching any parameter if a gradient is non-finite, and zeroes all
// gradients after a successful update.
class Optimizer {
 public:
  Optimizer(std::vector<Parameter*> params, OptimizerConfig cfg);

  void step(double learning_rate);

  const std::vector<Parameter*>& params() const { return params_; }

 private:
  std::vector<Parameter*> params_;
  OptimizerConfig cfg_;
  std::vector<Tensor> m_, v_;
  int64_t t_ = 0;
};

inline void optimizer_step(Optimizer& opt, double learning_rate) { opt.step(learning_rate); }

// Central-difference gradient estimate, one Tensor per parameter. loss_fn
// must be a deterministic pure function of the parameter values.
std::vector<Tensor> finite_diff_gradient(const std::function<double()>& loss_fn,
                                         const std::vector<Parameter*>& params,
                                         double eps = 1e-5);

}  // namespace voxcount
