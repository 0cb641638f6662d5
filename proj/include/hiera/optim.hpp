#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hiera/tensor.hpp"

namespace hiera {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

// Heavy-ball SGD: v <- m*v + g; p <- p - lr*v. Gradients are zeroed after
// each step.
class SgdOptimizer {
 public:
  SgdOptimizer(double lr, double momentum);

  // Throws InputError when a parameter is frozen or registered twice.
  // lr_mult scales the step of this parameter only.
  void add(const std::string& name, Tensor param, double lr_mult = 1.0);
  void add(const NamedParams& params);

  // Throws InputError when no registered parameter has a gradient yet.
  void step();
  void zero_grad();

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  // Rescales the joint gradient to this global L2 norm when larger; 0 disables.
  void set_clip_norm(double c) { clip_norm_ = c; }
  double clip_norm() const { return clip_norm_; }
  double last_grad_norm() const { return last_norm_; }
  double momentum() const { return momentum_; }
  std::size_t size() const { return params_.size(); }
  const NamedParams& params() const { return params_; }
  bool contains(const Tensor& t) const;

 private:
  double lr_;
  double momentum_;
  double clip_norm_ = 0.0;
  double last_norm_ = 0.0;
  NamedParams params_;
  std::vector<double> lr_mult_;
  std::vector<std::vector<double>> velocity_;
};

}  // namespace hiera
