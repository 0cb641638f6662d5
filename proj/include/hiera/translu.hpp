#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hiera/hierarchy.hpp"
#include "hiera/layers.hpp"
#include "hiera/segnet.hpp"

namespace hiera {

// Cross-branch interaction on one encoder stage:
//   hat   = f1 + gamma * Attn(norm_q(f1), norm_kv(FC(f2)))
//   tilde = hat + tau * FFN(norm_ffn(hat))
// Attention is single-head scaled dot-product over flattened spatial tokens,
// queries from f1, keys/values from the aligned f2. gamma and tau start at 0.
class BranchInteractionUnit {
 public:
  BranchInteractionUnit() = default;
  BranchInteractionUnit(int c1, int c2, Rng& rng);

  Tensor operator()(const Tensor& f1, const Tensor& f2) const;
  // Token-level form: t1 [B, N, C1], t2 [B, N, C2].
  Tensor forward_tokens(const Tensor& t1, const Tensor& t2) const;
  Tensor attention(const Tensor& q_tokens, const Tensor& kv_tokens) const;
  Tensor ffn(const Tensor& tokens) const;

  void collect(NamedParams& out, const std::string& prefix) const;

  Linear fc;  // C2 -> C1, no bias
  LayerNorm norm_q, norm_kv, norm_ffn;
  Linear wq, wk, wv, wo;  // wv and wo carry no bias
  Linear ffn1, ffn2;      // C1 -> 2 C1 -> C1
  Tensor gamma, tau;
};

// One constrained node of the cross-domain tree, resolved to indices.
struct CdsaLink {
  std::string node;
  int branch2_level = 0;
  int branch2_class = 0;
  int branch1_level = 0;
  int branch1_class = 0;
};

std::vector<CdsaLink> parse_cdsa_mapping(const std::string& text, const Hierarchy& branch2,
                                         const Hierarchy& branch1);
std::vector<CdsaLink> load_cdsa_mapping(const std::filesystem::path& file,
                                        const Hierarchy& branch2, const Hierarchy& branch1);

// Soft ROI per link: softmax over the Branch 2 level's classes, mapped
// channel kept. Each mask is [B, 1, H, W].
std::vector<Tensor> cdsa_masks(const std::vector<Tensor>& branch2_logits,
                               const std::vector<CdsaLink>& links);

// Multiplies the mapped Branch 1 channel of each constrained level by its
// mask (Z * F, or Z * (1 + F) when residual). Other channels and the finest
// level are passed through unchanged.
std::vector<Tensor> cdsa_fuse(const std::vector<Tensor>& z_in, const std::vector<Tensor>& masks,
                              const std::vector<CdsaLink>& links, bool residual = false);

struct TransLuOptions {
  bool cdks = true;
  bool cdsa = true;
  bool cdsa_residual = false;
  std::vector<CdsaLink> links;
};

struct TransLuOutput {
  std::vector<Tensor> logits;          // Branch 1, one per level of its tree
  std::vector<Tensor> branch2_logits;  // frozen branch
  std::vector<Tensor> masks;           // empty unless CDSA is on
};

// Frozen Branch 2 plus trainable Branch 1, with one interaction unit and a
// pair of fusion scalars per encoder stage:
//   g_k = W1_k * BIU_k(f1_k, f2_k) + W2_k * f2_k,  (W1, W2) = (1, 0) at init
// g_k feeds the next Branch 1 stage and the Branch 1 decoder skip.
class TransLuModel {
 public:
  TransLuModel(ToySegNet branch2, const SegNetConfig& branch1_cfg, TransLuOptions opts,
               std::uint64_t seed);

  TransLuOutput forward(const Tensor& img) const;
  std::vector<Tensor> branch2_forward(const Tensor& img) const;

  ToySegNet& branch1() { return branch1_; }
  const ToySegNet& branch1() const { return branch1_; }
  const ToySegNet& branch2() const { return branch2_; }
  const TransLuOptions& options() const { return opts_; }
  int num_units() const { return static_cast<int>(units_.size()); }
  BranchInteractionUnit& unit(int k) { return units_.at(k); }
  Tensor& w1(int k) { return w1_.at(k); }
  Tensor& w2(int k) { return w2_.at(k); }

  // Everything the optimizer may touch: Branch 1, units, fusion scalars.
  NamedParams trainable_params() const;
  // Whole-map scalars: w1, w2, gamma, tau. Empty without CDKS.
  NamedParams gate_params() const;
  NamedParams branch2_params() const { return branch2_.params(); }

 private:
  ToySegNet branch2_;
  ToySegNet branch1_;
  TransLuOptions opts_;
  std::vector<BranchInteractionUnit> units_;
  std::vector<Tensor> w1_, w2_;
};

}  // namespace hiera
