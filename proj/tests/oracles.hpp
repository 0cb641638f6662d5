#pragma once

// Scalar-loop reference implementations shared by unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <vector>

#include "hiera/hierarchy.hpp"
#include "hiera/labels.hpp"
#include "hiera/rng.hpp"
#include "hiera/tensor.hpp"

namespace testsupport {

inline double sig(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Logit of class c at flat pixel index (batch-major) of a [B, C, H, W] tensor.
inline double logit_at(const hiera::Tensor& z, std::size_t pixel, int c) {
  const std::size_t hw = static_cast<std::size_t>(z.dim(2)) * z.dim(3);
  return z.data()[((pixel / hw) * z.dim(1) + c) * hw + pixel % hw];
}

// Logits drawn from a 3-value grid so that many paths tie exactly.
inline std::vector<hiera::Tensor> grid_logits(const hiera::Hierarchy& h, int b, int hh, int ww,
                                              hiera::Rng& rng) {
  std::vector<hiera::Tensor> z;
  for (int l = 0; l < h.num_levels(); ++l) {
    std::vector<double> d(static_cast<std::size_t>(b) * h.num_classes(l) * hh * ww);
    for (auto& v : d) v = static_cast<double>(rng.below(3)) - 1.0;
    z.push_back(hiera::Tensor::from_data({b, h.num_classes(l), hh, ww}, d));
  }
  return z;
}

// Exhaustive enumeration over every path; strict > keeps the first maximum.
inline hiera::Path enumerate_best(const std::vector<hiera::Tensor>& z, const hiera::Hierarchy& h,
                                  std::size_t pixel) {
  int best = -1;
  double best_s = 0.0;
  for (int k = 0; k < h.num_paths(); ++k) {
    double s = 0.0;
    for (int l = 0; l < h.num_levels(); ++l) s += sig(logit_at(z[l], pixel, h.paths()[k][l]));
    if (best < 0 || s > best_s) {
      best = k;
      best_s = s;
    }
  }
  return h.paths()[best];
}

// Per-pixel KL against the concatenated one-hot target, scalar loops only.
inline double hpc_oracle(const std::vector<hiera::Tensor>& z, const hiera::LevelLabels& y,
                         bool normalized) {
  const int L = static_cast<int>(z.size());
  double total = 0.0;
  int n = 0;
  for (std::size_t p = 0; p < y.pixels(); ++p) {
    bool ign = false;
    for (int l = 0; l < L; ++l) ign = ign || y.level(l)[p] == hiera::kDefaultIgnore;
    if (ign) continue;
    std::vector<double> cat;
    for (int l = 0; l < L; ++l)
      for (int c = 0; c < z[l].dim(1); ++c) cat.push_back(logit_at(z[l], p, c));
    const double m = *std::max_element(cat.begin(), cat.end());
    double s = 0.0;
    for (double v : cat) s += std::exp(v - m);
    double kl = 0.0;
    int offset = 0;
    for (int l = 0; l < L; ++l) {
      const double t = normalized ? 1.0 / L : 1.0;
      const double logp = cat[offset + y.level(l)[p]] - m - std::log(s);
      kl += t * (std::log(t) - logp);
      offset += z[l].dim(1);
    }
    total += kl;
    ++n;
  }
  return total / n;
}

}  // namespace testsupport
