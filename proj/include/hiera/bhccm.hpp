#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "hiera/layers.hpp"

namespace hiera {

struct MergingBlockConfig {
  int src_channels = 0;
  int tgt_channels = 0;
  int hidden = 0;          // 0 selects max(src/2, 4)
  int spatial_kernel = 3;
  bool bias = true;
};

// Channel + spatial attention gate that maps source-level features onto the
// target level's channel count:
//   out = align1x1(x) * sigmoid(mlp(gap(x)) + mlp(gmp(x)))
//                     * sigmoid(conv(concat(chan_avg(x), chan_max(x))))
// The channel map is [B, tgt, 1, 1]; the spatial map is [B, 1, H, W].
class MergingBlock {
 public:
  MergingBlock() = default;
  MergingBlock(const MergingBlockConfig& cfg, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  Tensor channel_attention(const Tensor& x) const;
  Tensor spatial_attention(const Tensor& x) const;
  Tensor align(const Tensor& x) const { return align_(x); }

  int src_channels() const { return cfg_.src_channels; }
  int tgt_channels() const { return cfg_.tgt_channels; }
  void collect(NamedParams& out, const std::string& prefix) const;

  // Exposed for tests and checkpoint loading.
  Conv2d align_;
  Conv2d mlp_in_;
  Conv2d mlp_out_;
  Conv2d spatial_;

 private:
  void check(const Tensor& x) const;
  MergingBlockConfig cfg_;
};

enum class FusionMode { kNone, kCoarseToFine, kFineToCoarse, kBidirectional };

FusionMode parse_fusion_mode(std::string_view s);
std::string to_string(FusionMode m);

struct BhccmConfig {
  int in_channels = 32;             // decoder width C_dim
  std::vector<int> level_classes;   // C_L1 .. C_LL
  FusionMode fusion = FusionMode::kBidirectional;
  int mb_hidden = 0;
  int mb_spatial_kernel = 3;
  bool mb_bias = true;
};

struct BhccmOutput {
  std::vector<Tensor> in;   // per-level projections
  std::vector<Tensor> mid;  // after coarse-to-fine fusion
  std::vector<Tensor> out;  // after fine-to-coarse fusion; the logits
};

// Bidirectional hierarchical fusion head. With levels indexed 1..L:
//   mid_1 = in_1
//   mid_j = W(j,j)*in_j + sum_{i<j} W(i,j)*MB_c2f(i->j)(in_i)
//   out_L = mid_L
//   out_i = Y(i,i)*mid_i + sum_{j>i} Y(j,i)*MB_f2c(j->i)(mid_j)
// Self weights start at 1 and cross weights at 0. Disabled directions keep
// their identity (mid = in or out = mid).
class BhccmHead {
 public:
  BhccmHead() = default;
  BhccmHead(const BhccmConfig& cfg, std::uint64_t seed);

  BhccmOutput forward(const Tensor& dec) const;
  // Runs the fusion stages on externally supplied per-level inputs.
  BhccmOutput fuse(std::vector<Tensor> inputs) const;
  std::vector<Tensor> project(const Tensor& dec) const;

  int num_levels() const { return static_cast<int>(cfg_.level_classes.size()); }
  const BhccmConfig& config() const { return cfg_; }
  int num_cross_blocks() const;

  // 0-based level indices. Undefined tensors / null blocks mark absent links.
  Tensor& w(int from, int to) { return w_.at(from).at(to); }
  Tensor& y(int from, int to) { return y_.at(from).at(to); }
  const MergingBlock* c2f_block(int from, int to) const;
  const MergingBlock* f2c_block(int from, int to) const;
  Conv2d& projection(int level) { return proj_.at(level); }

  void collect(NamedParams& out, const std::string& prefix) const;

 private:
  void check_inputs(const std::vector<Tensor>& inputs) const;

  BhccmConfig cfg_;
  std::vector<Conv2d> proj_;
  std::vector<std::vector<MergingBlock>> c2f_;  // [from][to], from < to
  std::vector<std::vector<MergingBlock>> f2c_;  // [from][to], from > to
  std::vector<std::vector<bool>> has_c2f_, has_f2c_;
  std::vector<std::vector<Tensor>> w_;  // w_[i][j], i <= j, j >= 1
  std::vector<std::vector<Tensor>> y_;  // y_[j][i], j >= i, i < L-1
};

}  // namespace hiera
