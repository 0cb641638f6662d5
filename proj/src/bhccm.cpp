#include "hiera/bhccm.hpp"

#include <algorithm>

#include "hiera/error.hpp"
#include "hiera/ops.hpp"

namespace hiera {

MergingBlock::MergingBlock(const MergingBlockConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg_.src_channels <= 0 || cfg_.tgt_channels <= 0) {
    throw InputError("merging block: channel counts must be positive");
  }
  if (cfg_.hidden <= 0) cfg_.hidden = std::max(cfg_.src_channels / 2, 4);
  align_ = Conv2d(cfg_.src_channels, cfg_.tgt_channels, 1, cfg_.bias, rng);
  mlp_in_ = Conv2d(cfg_.src_channels, cfg_.hidden, 1, cfg_.bias, rng);
  mlp_out_ = Conv2d(cfg_.hidden, cfg_.tgt_channels, 1, cfg_.bias, rng);
  spatial_ = Conv2d(2, 1, cfg_.spatial_kernel, cfg_.bias, rng);
}

void MergingBlock::check(const Tensor& x) const {
  if (x.ndim() != 4 || x.dim(1) != cfg_.src_channels) {
    throw InputError("merging block: expected " + std::to_string(cfg_.src_channels) +
                     " input channels, got shape " + shape_str(x.shape()));
  }
}

Tensor MergingBlock::channel_attention(const Tensor& x) const {
  check(x);
  auto mlp = [&](const Tensor& v) { return mlp_out_(ops::relu(mlp_in_(v))); };
  return ops::sigmoid(ops::add(mlp(ops::global_avg_pool(x)), mlp(ops::global_max_pool(x))));
}

Tensor MergingBlock::spatial_attention(const Tensor& x) const {
  check(x);
  return ops::sigmoid(
      spatial_(ops::concat({ops::channel_avg_pool(x), ops::channel_max_pool(x)}, 1)));
}

Tensor MergingBlock::operator()(const Tensor& x) const {
  check(x);
  return ops::mul(ops::mul(align_(x), channel_attention(x)), spatial_attention(x));
}

void MergingBlock::collect(NamedParams& out, const std::string& prefix) const {
  align_.collect(out, prefix + ".align");
  mlp_in_.collect(out, prefix + ".mlp_in");
  mlp_out_.collect(out, prefix + ".mlp_out");
  spatial_.collect(out, prefix + ".spatial");
}

FusionMode parse_fusion_mode(std::string_view s) {
  if (s == "none") return FusionMode::kNone;
  if (s == "c2f") return FusionMode::kCoarseToFine;
  if (s == "f2c") return FusionMode::kFineToCoarse;
  if (s == "bidirectional" || s == "bidir") return FusionMode::kBidirectional;
  throw InputError("unknown fusion mode '" + std::string(s) +
                   "' (expected none|c2f|f2c|bidirectional)");
}

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::kNone: return "none";
    case FusionMode::kCoarseToFine: return "c2f";
    case FusionMode::kFineToCoarse: return "f2c";
    case FusionMode::kBidirectional: return "bidirectional";
  }
  return "?";
}

BhccmHead::BhccmHead(const BhccmConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  const int n = num_levels();
  if (n < 1) throw InputError("bhccm: at least one level required");
  for (int c : cfg_.level_classes) {
    if (c <= 0) throw InputError("bhccm: level class counts must be positive");
  }
  const bool c2f = cfg_.fusion == FusionMode::kCoarseToFine ||
                   cfg_.fusion == FusionMode::kBidirectional;
  const bool f2c = cfg_.fusion == FusionMode::kFineToCoarse ||
                   cfg_.fusion == FusionMode::kBidirectional;
  for (int l = 0; l < n; ++l) {
    Rng rng(derive_seed(seed, "proj." + std::to_string(l)));
    proj_.emplace_back(cfg_.in_channels, cfg_.level_classes[l], 1, true, rng);
  }
  c2f_.assign(n, std::vector<MergingBlock>(n));
  f2c_.assign(n, std::vector<MergingBlock>(n));
  has_c2f_.assign(n, std::vector<bool>(n, false));
  has_f2c_.assign(n, std::vector<bool>(n, false));
  w_.assign(n, std::vector<Tensor>(n));
  y_.assign(n, std::vector<Tensor>(n));
  auto block = [&](int from, int to, const char* tag) {
    Rng rng(derive_seed(seed, std::string(tag) + "." + std::to_string(from) + "." +
                                  std::to_string(to)));
    return MergingBlock({cfg_.level_classes[from], cfg_.level_classes[to], cfg_.mb_hidden,
                         cfg_.mb_spatial_kernel, cfg_.mb_bias},
                        rng);
  };
  if (c2f) {
    for (int j = 1; j < n; ++j) {
      w_[j][j] = make_scalar_param(1.0);
      for (int i = 0; i < j; ++i) {
        c2f_[i][j] = block(i, j, "c2f");
        has_c2f_[i][j] = true;
        w_[i][j] = make_scalar_param(0.0);
      }
    }
  }
  if (f2c) {
    for (int i = 0; i + 1 < n; ++i) {
      y_[i][i] = make_scalar_param(1.0);
      for (int j = i + 1; j < n; ++j) {
        f2c_[j][i] = block(j, i, "f2c");
        has_f2c_[j][i] = true;
        y_[j][i] = make_scalar_param(0.0);
      }
    }
  }
}

int BhccmHead::num_cross_blocks() const {
  int count = 0;
  for (int a = 0; a < num_levels(); ++a) {
    for (int b = 0; b < num_levels(); ++b) count += has_c2f_[a][b] + has_f2c_[a][b];
  }
  return count;
}

const MergingBlock* BhccmHead::c2f_block(int from, int to) const {
  return has_c2f_.at(from).at(to) ? &c2f_[from][to] : nullptr;
}

const MergingBlock* BhccmHead::f2c_block(int from, int to) const {
  return has_f2c_.at(from).at(to) ? &f2c_[from][to] : nullptr;
}

std::vector<Tensor> BhccmHead::project(const Tensor& dec) const {
  if (dec.ndim() != 4 || dec.dim(1) != cfg_.in_channels) {
    throw InputError("bhccm: expected " + std::to_string(cfg_.in_channels) +
                     " decoder channels, got shape " + shape_str(dec.shape()));
  }
  std::vector<Tensor> in;
  for (const auto& p : proj_) in.push_back(p(dec));
  return in;
}

void BhccmHead::check_inputs(const std::vector<Tensor>& inputs) const {
  if (static_cast<int>(inputs.size()) != num_levels()) {
    throw InputError("bhccm: head has " + std::to_string(num_levels()) + " levels, got " +
                     std::to_string(inputs.size()) + " inputs");
  }
  for (int l = 0; l < num_levels(); ++l) {
    if (inputs[l].ndim() != 4 || inputs[l].dim(1) != cfg_.level_classes[l]) {
      throw InputError("bhccm: level " + std::to_string(l + 1) + " input has shape " +
                       shape_str(inputs[l].shape()) + ", expected " +
                       std::to_string(cfg_.level_classes[l]) + " channels");
    }
  }
}

BhccmOutput BhccmHead::fuse(std::vector<Tensor> inputs) const {
  check_inputs(inputs);
  const int n = num_levels();
  BhccmOutput r;
  r.in = std::move(inputs);
  r.mid = r.in;
  for (int j = 1; j < n; ++j) {
    if (!w_[j][j].defined()) continue;
    Tensor acc = ops::mul(w_[j][j], r.in[j]);
    for (int i = 0; i < j; ++i) {
      acc = ops::add(acc, ops::mul(w_[i][j], c2f_[i][j](r.in[i])));
    }
    r.mid[j] = acc;
  }
  r.out = r.mid;
  for (int i = 0; i + 1 < n; ++i) {
    if (!y_[i][i].defined()) continue;
    Tensor acc = ops::mul(y_[i][i], r.mid[i]);
    for (int j = n - 1; j > i; --j) {
      acc = ops::add(acc, ops::mul(y_[j][i], f2c_[j][i](r.mid[j])));
    }
    r.out[i] = acc;
  }
  return r;
}

BhccmOutput BhccmHead::forward(const Tensor& dec) const { return fuse(project(dec)); }

void BhccmHead::collect(NamedParams& out, const std::string& prefix) const {
  const int n = num_levels();
  auto tag = [](int a, int b) { return std::to_string(a + 1) + "_" + std::to_string(b + 1); };
  for (int l = 0; l < n; ++l) proj_[l].collect(out, prefix + ".proj." + std::to_string(l + 1));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (has_c2f_[i][j]) c2f_[i][j].collect(out, prefix + ".c2f." + tag(i, j));
      if (has_f2c_[i][j]) f2c_[i][j].collect(out, prefix + ".f2c." + tag(i, j));
      if (w_[i][j].defined()) out.emplace_back(prefix + ".w." + tag(i, j), w_[i][j]);
      if (y_[i][j].defined()) out.emplace_back(prefix + ".y." + tag(i, j), y_[i][j]);
    }
  }
}

}  // namespace hiera
