#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hiera/bhccm.hpp"
#include "hiera/layers.hpp"

namespace hiera {

enum class HeadKind { kFlat, kBhccm };

struct SegNetConfig {
  int in_channels = 4;
  std::vector<int> widths = {16, 32, 64};  // one conv-relu stage each, 2x pooling between
  int dec_channels = 32;
  HeadKind head = HeadKind::kBhccm;
  std::vector<int> level_classes;  // flat head uses only the last entry
  FusionMode fusion = FusionMode::kBidirectional;
  int mb_hidden = 0;
  bool mb_bias = true;
};

// Small U-shaped encoder/decoder hosting either a flat 1x1 projection or a
// BHCCM head. Encoder stage k>0 average-pools by 2 before its conv; the
// decoder upsamples bilinearly, concatenates the matching encoder feature,
// and applies a 3x3 conv + relu until it is back at input resolution.
class ToySegNet {
 public:
  ToySegNet() = default;
  ToySegNet(const SegNetConfig& cfg, std::uint64_t seed);

  int num_stages() const { return static_cast<int>(cfg_.widths.size()); }
  // Stage k consumes the previous stage output (the image for k = 0).
  Tensor encode_stage(int k, const Tensor& x) const;
  std::vector<Tensor> encode(const Tensor& img) const;
  Tensor decode(const std::vector<Tensor>& feats) const;

  // Logits per level: one tensor for the flat head, L for BHCCM.
  std::vector<Tensor> forward(const Tensor& img) const;
  Tensor forward_flat(const Tensor& img) const;
  std::vector<Tensor> forward_hiera(const Tensor& img) const;
  BhccmOutput forward_head(const Tensor& dec) const;

  const SegNetConfig& config() const { return cfg_; }
  bool hierarchical() const { return cfg_.head == HeadKind::kBhccm; }
  BhccmHead& head() { return *head_; }
  const BhccmHead& head() const { return *head_; }

  NamedParams params() const;
  // Encoder + decoder parameters only (what a different-task head can reuse).
  NamedParams trunk_params() const;
  void freeze();

 private:
  void check_image(const Tensor& img) const;

  SegNetConfig cfg_;
  std::vector<Conv2d> enc_;
  std::vector<Conv2d> dec_;  // dec_[k] produces decoder level k (k < stages-1), or the K=1 conv
  Conv2d flat_;
  std::optional<BhccmHead> head_;
};

// Copies values of parameters whose names match from src into dst.
// Returns the number of tensors copied; shape mismatches throw.
int copy_matching_params(const NamedParams& src, const NamedParams& dst);

}  // namespace hiera
