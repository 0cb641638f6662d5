#pragma once

#include <cstdint>
#include <string>

#include "hiera/optim.hpp"
#include "hiera/rng.hpp"
#include "hiera/tensor.hpp"

namespace hiera {

// He-uniform weights, zero bias.
struct Conv2d {
  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out] or undefined

  Conv2d() = default;
  Conv2d(int in, int out, int kernel, bool with_bias, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  int in_channels() const { return weight.dim(1); }
  int out_channels() const { return weight.dim(0); }
  void collect(NamedParams& out, const std::string& prefix) const;
};

struct Linear {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out] or undefined

  Linear() = default;
  Linear(int in, int out, bool with_bias, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  void collect(NamedParams& out, const std::string& prefix) const;
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  LayerNorm() = default;
  explicit LayerNorm(int channels);
  Tensor operator()(const Tensor& x) const;
  void collect(NamedParams& out, const std::string& prefix) const;
};

// Learnable scalar, stored as a [1] tensor.
inline Tensor make_scalar_param(double value) { return Tensor::scalar(value, true); }

void freeze_all(const NamedParams& params);

}  // namespace hiera
