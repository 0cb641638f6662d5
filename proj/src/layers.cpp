#include "hiera/layers.hpp"

#include <cmath>

#include "hiera/ops.hpp"

namespace hiera {

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

}  // namespace

Conv2d::Conv2d(int in, int out, int kernel, bool with_bias, Rng& rng) {
  const double bound = std::sqrt(6.0 / (in * kernel * kernel));
  weight = uniform_tensor({out, in, kernel, kernel}, bound, rng);
  if (with_bias) bias = Tensor::zeros({out}, true);
}

Tensor Conv2d::operator()(const Tensor& x) const { return ops::conv2d(x, weight, bias); }

void Conv2d::collect(NamedParams& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".weight", weight);
  if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
}

Linear::Linear(int in, int out, bool with_bias, Rng& rng) {
  const double bound = std::sqrt(6.0 / in);
  weight = uniform_tensor({out, in}, bound, rng);
  if (with_bias) bias = Tensor::zeros({out}, true);
}

Tensor Linear::operator()(const Tensor& x) const { return ops::linear(x, weight, bias); }

void Linear::collect(NamedParams& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".weight", weight);
  if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
}

LayerNorm::LayerNorm(int channels)
    : gamma(Tensor::full({channels}, 1.0, true)), beta(Tensor::zeros({channels}, true)) {}

Tensor LayerNorm::operator()(const Tensor& x) const { return ops::layer_norm(x, gamma, beta); }

void LayerNorm::collect(NamedParams& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
}

void freeze_all(const NamedParams& params) {
  for (const auto& [name, p] : params) {
    Tensor t = p;
    t.freeze();
  }
}

}  // namespace hiera
