#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hiera/bhccm.hpp"
#include "hiera/hierarchy.hpp"
#include "hiera/losses.hpp"
#include "hiera/ops.hpp"
#include "hiera/translu.hpp"
#include "support.hpp"

namespace testsupport {

using NamedErrors = std::vector<std::pair<std::string, double>>;

// Worst relative gradient error of every differentiable op on one seed.
inline NamedErrors op_gradcheck_errors(std::uint64_t seed) {
  namespace ops = hiera::ops;
  NamedErrors errs;
  auto add = [&](const char* name, double e) { errs.emplace_back(name, e); };
  Rng rng(seed);
  Tensor a = randn({2, 3, 4, 4}, rng, 1.0, true), b = randn({3, 1, 4}, rng, 1.0, true);
  add("add", gradcheck([&] { return weighted_sum(ops::add(a, b), 1); }, {a, b}));
  add("sub", gradcheck([&] { return weighted_sum(ops::sub(a, b), 2); }, {a, b}));
  add("mul", gradcheck([&] { return weighted_sum(ops::mul(a, b), 3); }, {a, b}));
  add("scale", gradcheck([&] { return weighted_sum(ops::scale(a, -1.7), 4); }, {a}));

  Tensor m1 = randn({3, 4}, rng, 1.0, true), m2 = randn({4, 5}, rng, 1.0, true);
  add("matmul", gradcheck([&] { return weighted_sum(ops::matmul(m1, m2), 5); }, {m1, m2}));
  Tensor b1 = randn({2, 3, 4}, rng, 1.0, true), b2 = randn({2, 5, 4}, rng, 1.0, true);
  Tensor b3 = randn({2, 4, 5}, rng, 1.0, true);
  add("bmm_transposed", gradcheck([&] { return weighted_sum(ops::bmm(b1, b2, true), 6); }, {b1, b2}));
  add("bmm", gradcheck([&] { return weighted_sum(ops::bmm(b1, b3), 7); }, {b1, b3}));
  Tensor lw = randn({5, 4}, rng, 1.0, true), lb = randn({5}, rng, 1.0, true);
  add("linear", gradcheck([&] { return weighted_sum(ops::linear(b1, lw, lb), 8); }, {b1, lw, lb}));

  Tensor x = randn({2, 3, 4, 4}, rng, 1.0, true);
  Tensor w3 = randn({2, 3, 3, 3}, rng, 1.0, true), w1 = randn({2, 3, 1, 1}, rng, 1.0, true);
  Tensor cb = randn({2}, rng, 1.0, true);
  add("conv2d_3x3", gradcheck([&] { return weighted_sum(ops::conv2d(x, w3, cb), 9); }, {x, w3, cb}));
  add("conv2d_1x1", gradcheck([&] { return weighted_sum(ops::conv2d(x, w1), 10); }, {x, w1}));

  add("avg_pool2", gradcheck([&] { return weighted_sum(ops::avg_pool2(x), 11); }, {x}));
  add("global_avg_pool", gradcheck([&] { return weighted_sum(ops::global_avg_pool(x), 12); }, {x}));
  add("global_max_pool", gradcheck([&] { return weighted_sum(ops::global_max_pool(x), 13); }, {x}));
  add("channel_avg_pool", gradcheck([&] { return weighted_sum(ops::channel_avg_pool(x), 14); }, {x}));
  add("channel_max_pool", gradcheck([&] { return weighted_sum(ops::channel_max_pool(x), 15); }, {x}));
  Tensor x2 = randn({2, 2, 4, 4}, rng, 1.0, true);
  add("concat", gradcheck([&] { return weighted_sum(ops::concat({x, x2}, 1), 16); }, {x, x2}));
  add("channel_slice", gradcheck([&] { return weighted_sum(ops::channel_slice(x, 1, 2), 17); }, {x}));
  add("reshape", gradcheck([&] { return weighted_sum(ops::reshape(x, {6, 16}), 18); }, {x}));
  add("upsample_bilinear", gradcheck([&] { return weighted_sum(ops::upsample_bilinear(x, 8, 7), 19); }, {x}));

  Tensor k = rand_away({2, 3, 4, 4}, rng, 0.05, true);
  add("relu", gradcheck([&] { return weighted_sum(ops::relu(k), 20); }, {k}));
  add("sigmoid", gradcheck([&] { return weighted_sum(ops::sigmoid(x), 21); }, {x}));
  add("softmax_channels", gradcheck([&] { return weighted_sum(ops::softmax(x, 1), 22); }, {x}));
  add("softmax_tokens", gradcheck([&] { return weighted_sum(ops::softmax(b1, 2), 23); }, {b1}));
  add("log_softmax", gradcheck([&] { return weighted_sum(ops::log_softmax(x, 1), 24); }, {x}));
  add("sum", gradcheck([&] { return ops::sum(ops::mul(x, x)); }, {x}));
  add("mean", gradcheck([&] { return ops::mean(ops::mul(x, x)); }, {x}));

  Tensor g = randn({4}, rng, 1.0, true), be = randn({4}, rng, 1.0, true);
  add("layer_norm", gradcheck([&] { return weighted_sum(ops::layer_norm(b1, g, be), 25); }, {b1, g, be}));
  add("to_tokens", gradcheck([&] { return weighted_sum(ops::to_tokens(x), 26); }, {x}));
  Tensor tk = randn({2, 16, 3}, rng, 1.0, true);
  add("from_tokens", gradcheck([&] { return weighted_sum(ops::from_tokens(tk, 4, 4), 27); }, {tk}));

  std::vector<int> labels(2 * 4 * 4);
  for (auto& l : labels) l = static_cast<int>(rng.below(3));
  labels[5] = 255;
  add("nll_mean", gradcheck([&] { return ops::nll_mean(ops::log_softmax(x, 1), labels, 255); }, {x}));
  std::vector<double> target(x.numel());
  for (auto& t : target) t = rng.uniform();
  std::vector<unsigned char> valid(32, 1);
  valid[3] = 0;
  add("kl_div_mean", gradcheck([&] { return ops::kl_div_mean(ops::log_softmax(x, 1), target, valid); }, {x}));
  return errs;
}

// Composed modules on one seed: the full BHCCM head with every fusion scalar
// active, each loss on 1x(4,9,18)x2x2 logits, and the interaction unit.
inline NamedErrors module_gradcheck_errors(std::uint64_t seed) {
  using namespace hiera;
  NamedErrors errs;
  Rng rng(seed);

  BhccmConfig hc;
  hc.in_channels = 8;
  hc.level_classes = {4, 9, 18};
  BhccmHead head(hc, seed);
  NamedParams hp;
  head.collect(hp, "head");
  std::vector<Tensor> ts;
  for (auto& [n, t] : hp) {
    if (n.find(".w.") != std::string::npos || n.find(".y.") != std::string::npos) {
      t.mutable_data()[0] = rng.uniform(0.5, 1.5);
    }
    ts.push_back(t);
  }
  Tensor dec = randn({1, 8, 4, 4}, rng, 1.0, true);
  ts.push_back(dec);
  errs.emplace_back("bhccm_head", gradcheck([&] {
    const auto out = head.forward(dec).out;
    return ops::add(ops::add(weighted_sum(out[0], 1), weighted_sum(out[1], 2)), weighted_sum(out[2], 3));
  }, ts));

  const Hierarchy h = load_hierarchy(bundled_data_dir() / "mm5b.json");
  std::vector<Tensor> z;
  for (int l = 0; l < 3; ++l) z.push_back(randn({1, h.num_classes(l), 2, 2}, rng, 1.0, true));
  LevelLabels y(3, 1, 2, 2);
  std::vector<std::vector<int>> r(3, std::vector<int>(4));
  for (int p = 0; p < 4; ++p) {
    const Path& path = h.paths()[rng.below(h.num_paths())];
    for (int l = 0; l < 3; ++l) r[l][p] = path[l];
  }
  for (int l = 0; l < 3; ++l) y.set_level(l, r[l]);
  LossConfig cfg;
  cfg.lambda = {0.5, 1.0, 2.0};
  cfg.alpha = 0.7;
  errs.emplace_back("ce", gradcheck([&] { return ce_level(z[2], y.level(2), kDefaultIgnore); }, {z[2]}));
  errs.emplace_back("hce", gradcheck([&] { return hce(z, y, cfg); }, z));
  errs.emplace_back("hpc", gradcheck([&] { return hpc(z, y, cfg); }, z));
  errs.emplace_back("hsc", gradcheck([&] { return hsc(z, y, cfg); }, z));

  BranchInteractionUnit u(6, 4, rng);
  u.gamma.mutable_data()[0] = 0.7;
  u.tau.mutable_data()[0] = 0.6;
  NamedParams up;
  u.collect(up, "biu");
  Tensor f1 = randn({1, 6, 2, 3}, rng, 1.0, true), f2 = randn({1, 4, 2, 3}, rng, 1.0, true);
  std::vector<Tensor> us{f1, f2};
  // The key bias shifts whole softmax rows, so its exact gradient is zero;
  // it is reported as the largest absolute gradient entry instead.
  for (auto& [n, t] : up)
    if (n != "biu.wk.bias") us.push_back(t);
  errs.emplace_back("biu", gradcheck([&] { return weighted_sum(u(f1, f2), seed); }, us));
  u.wk.bias.zero_grad();
  weighted_sum(u(f1, f2), seed).backward();
  double kb = 0.0;
  for (double g : u.wk.bias.grad()) kb = std::max(kb, std::abs(g));
  errs.emplace_back("biu_key_bias_abs", kb);
  return errs;
}

}  // namespace testsupport
