#include "voxcount/optim.hpp"

#include <cmath>

#include "voxcount/common.hpp"

namespace voxcount {

Optimizer::Optimizer(std::vector<Parameter*> params, OptimizerConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  if (cfg_.kind == OptKind::Adam) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (Parameter* p : params_) {
      m_.push_back(Tensor::zeros(p->value.shape()));
      v_.push_back(Tensor::zeros(p->value.shape()));
    }
  }
}

void Optimizer::step(double learning_rate) {
  for (Parameter* p : params_)
    if (!p->grad.all_finite())
      throw numeric_error("optimizer: non-finite gradient in parameter '" + p->name + "'");

  if (cfg_.clip_norm > 0.0) {
    double total = 0.0;
    for (Parameter* p : params_) {
      const double* g = p->grad.data();
      for (int64_t i = 0; i < p->grad.numel(); ++i) total += g[i] * g[i];
    }
    total = std::sqrt(total);
    if (total > cfg_.clip_norm) {
      const double scale = cfg_.clip_norm / total;
      for (Parameter* p : params_) {
        double* g = p->grad.data();
        for (int64_t i = 0; i < p->grad.numel(); ++i) g[i] *= scale;
      }
    }
  }

  if (cfg_.kind == OptKind::Sgd) {
    for (Parameter* p : params_) {
      double* v = p->value.data();
      const double* g = p->grad.data();
      for (int64_t i = 0; i < p->value.numel(); ++i) v[i] -= learning_rate * g[i];
    }
  } else {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
      Parameter* p = params_[pi];
      double* val = p->value.data();
      const double* g = p->grad.data();
      double* m = m_[pi].data();
      double* v = v_[pi].data();
      for (int64_t i = 0; i < p->value.numel(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        val[i] -= learning_rate * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }
  for (Parameter* p : params_) p->zero_grad();
}

std::vector<Tensor> finite_diff_gradient(const std::function<double()>& loss_fn,
                                         const std::vector<Parameter*>& params, double eps) {
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (Parameter* p : params) {
    Tensor g(p->value.shape());
    for (int64_t i = 0; i < p->value.numel(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + eps;
      const double up = loss_fn();
      p->value[i] = saved - eps;
      const double down = loss_fn();
      p->value[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw numeric_error("finite_diff_gradient: non-finite loss at parameter '" + p->name +
                            "' entry " + std::to_string(i));
      g[i] = (up - down) / (2.0 * eps);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

}  // namespace voxcount
