#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hiera/labels.hpp"
#include "hiera/tensor.hpp"

namespace hiera {

enum class PathTarget {
  kNormalized,  // concatenated one-hot divided by L (a proper distribution)
  kRaw,         // concatenated one-hot as is (sums to L)
};

struct LossConfig {
  std::vector<double> lambda;  // per-level weights; empty means all 1
  double alpha = 1.0;
  int ignore = kDefaultIgnore;
  PathTarget path_target = PathTarget::kNormalized;

  double level_weight(int l) const;
  void validate(int num_levels) const;
};

enum class LossMode { kCe, kHce, kHsc };
LossMode parse_loss_mode(std::string_view s);
std::string to_string(LossMode m);

// Mean cross-entropy over non-ignore pixels.
Tensor ce_level(const Tensor& logits, std::span<const int> labels, int ignore);

// sum_i lambda_i * ce_level(level i).
Tensor hce(const std::vector<Tensor>& logits, const LevelLabels& labels, const LossConfig& cfg);

// Path consistency: KL(target || softmax(concat_l logits_l)) per pixel,
// averaged over pixels whose labels are present at every level. The target
// puts mass on the ground-truth class of each level (1/L each in normalized
// mode, 1 each in raw mode).
Tensor hpc(const std::vector<Tensor>& logits, const LevelLabels& labels, const LossConfig& cfg);

// hce + alpha * hpc.
Tensor hsc(const std::vector<Tensor>& logits, const LevelLabels& labels, const LossConfig& cfg);

// Dispatch used by the training loops. kCe supervises only the finest level
// with a single logit tensor.
Tensor compute_loss(LossMode mode, const std::vector<Tensor>& logits, const LevelLabels& labels,
                    const LossConfig& cfg);

}  // namespace hiera
