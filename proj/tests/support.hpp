#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "hiera/ops.hpp"
#include "hiera/rng.hpp"
#include "hiera/tensor.hpp"

namespace testsupport {

using hiera::Rng;
using hiera::Shape;
using hiera::Tensor;

inline Tensor randn(const Shape& s, Rng& rng, double scale = 1.0, bool grad = false) {
  std::vector<double> v(hiera::shape_numel(s));
  for (auto& x : v) x = scale * rng.normal();
  return Tensor::from_data(s, std::move(v), grad);
}

// Values bounded away from zero, for inputs that pass through relu-like kinks.
inline Tensor rand_away(const Shape& s, Rng& rng, double lo = 0.05, bool grad = false) {
  std::vector<double> v(hiera::shape_numel(s));
  for (auto& x : v) {
    const double m = rng.uniform(lo, 1.0);
    x = rng.below(2) ? m : -m;
  }
  return Tensor::from_data(s, std::move(v), grad);
}

inline Tensor param(Tensor t) {
  t.set_requires_grad(true);
  return t;
}

// Reduces an output to a scalar with fixed random weights, so every output
// entry contributes a distinct amount to the loss.
inline Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return hiera::ops::sum(hiera::ops::mul(y, randn(y.shape(), rng)));
}

// Central finite differences against the reverse-mode gradient of every
// tensor in `params`; returns the worst norm-wise relative error
// ||g_ad - g_fd|| / max(||g_ad|| + ||g_fd||, 1e-12).
inline double gradcheck(const std::function<Tensor()>& loss, std::vector<Tensor> params,
                        double h = 1e-3) {
  for (auto& p : params) p.zero_grad();
  loss().backward();
  double worst = 0.0;
  for (auto& p : params) {
    std::vector<double> ad(p.numel(), 0.0);
    if (p.has_grad()) ad.assign(p.grad().begin(), p.grad().end());
    std::vector<double> fd(p.numel());
    auto data = p.mutable_data();
    for (std::size_t i = 0; i < fd.size(); ++i) {
      const double x0 = data[i];
      data[i] = x0 + h;
      const double fp = loss().item();
      data[i] = x0 - h;
      const double fm = loss().item();
      data[i] = x0;
      fd[i] = (fp - fm) / (2.0 * h);
    }
    double diff = 0.0, na = 0.0, nf = 0.0;
    for (std::size_t i = 0; i < fd.size(); ++i) {
      diff += (ad[i] - fd[i]) * (ad[i] - fd[i]);
      na += ad[i] * ad[i];
      nf += fd[i] * fd[i];
    }
    const double rel = std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nf), 1e-12);
    worst = std::max(worst, rel);
  }
  for (auto& p : params) p.zero_grad();
  return worst;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::memcmp(&x[i], &y[i], sizeof(double)) != 0) return false;
  }
  return true;
}

}  // namespace testsupport
