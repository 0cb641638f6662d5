#include "hiera/optim.hpp"

#include <cmath>

#include "hiera/error.hpp"

namespace hiera {

SgdOptimizer::SgdOptimizer(double lr, double momentum) : lr_(lr), momentum_(momentum) {
  if (!(lr > 0.0)) throw InputError("sgd: learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw InputError("sgd: momentum must be in [0, 1)");
}

void SgdOptimizer::add(const std::string& name, Tensor param, double lr_mult) {
  if (!(lr_mult >= 0.0) || !std::isfinite(lr_mult)) {
    throw InputError("sgd: bad learning-rate multiplier for '" + name + "'");
  }
  if (param.frozen()) {
    throw InputError("sgd: refusing to register frozen parameter '" + name + "'");
  }
  if (contains(param)) throw InputError("sgd: parameter '" + name + "' registered twice");
  param.set_requires_grad(true);
  velocity_.emplace_back(param.numel(), 0.0);
  lr_mult_.push_back(lr_mult);
  params_.emplace_back(name, std::move(param));
}

void SgdOptimizer::add(const NamedParams& params) {
  for (const auto& [name, p] : params) add(name, p);
}

bool SgdOptimizer::contains(const Tensor& t) const {
  for (const auto& [name, p] : params_) {
    if (p.id() == t.id()) return true;
  }
  return false;
}

void SgdOptimizer::step() {
  bool any = false;
  for (const auto& [name, p] : params_) any = any || p.has_grad();
  if (!any) throw InputError("sgd: step() called before any backward pass");
  double sq = 0.0;
  for (const auto& [name, p] : params_)
    for (double g : p.grad()) sq += g * g;
  last_norm_ = std::sqrt(sq);
  const double scale =
      clip_norm_ > 0.0 && last_norm_ > clip_norm_ ? clip_norm_ / last_norm_ : 1.0;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k].second;
    if (p.frozen()) {
      throw InputError("sgd: parameter '" + params_[k].first + "' was frozen after registration");
    }
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto data = p.mutable_data();
    auto& vel = velocity_[k];
    const double lr = lr_ * lr_mult_[k];
    for (std::size_t i = 0; i < data.size(); ++i) {
      vel[i] = momentum_ * vel[i] + scale * g[i];
      data[i] -= lr * vel[i];
    }
    p.zero_grad();
  }
}

void SgdOptimizer::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

}  // namespace hiera
