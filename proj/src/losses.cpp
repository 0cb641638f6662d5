#include "hiera/losses.hpp"

#include "hiera/error.hpp"
#include "hiera/ops.hpp"

namespace hiera {

double LossConfig::level_weight(int l) const {
  return lambda.empty() ? 1.0 : lambda.at(l);
}

void LossConfig::validate(int num_levels) const {
  if (!lambda.empty() && static_cast<int>(lambda.size()) != num_levels) {
    throw InputError("loss: " + std::to_string(lambda.size()) + " level weights for " +
                     std::to_string(num_levels) + " levels");
  }
  for (double v : lambda) {
    if (!(v >= 0.0)) throw InputError("loss: level weights must be >= 0");
  }
  if (!(alpha >= 0.0)) throw InputError("loss: alpha must be >= 0");
}

LossMode parse_loss_mode(std::string_view s) {
  if (s == "ce") return LossMode::kCe;
  if (s == "hce") return LossMode::kHce;
  if (s == "hsc") return LossMode::kHsc;
  throw InputError("unknown loss mode '" + std::string(s) + "' (expected ce|hce|hsc)");
}

std::string to_string(LossMode m) {
  switch (m) {
    case LossMode::kCe: return "ce";
    case LossMode::kHce: return "hce";
    case LossMode::kHsc: return "hsc";
  }
  return "?";
}

Tensor ce_level(const Tensor& logits, std::span<const int> labels, int ignore) {
  return ops::nll_mean(ops::log_softmax(logits, 1), labels, ignore);
}

namespace {

void check_levels(const char* what, const std::vector<Tensor>& logits, const LevelLabels& labels) {
  if (logits.empty()) throw InputError(std::string(what) + ": no logits");
  if (static_cast<int>(logits.size()) != labels.num_levels()) {
    throw InputError(std::string(what) + ": " + std::to_string(logits.size()) +
                     " logit levels but labels have " + std::to_string(labels.num_levels()));
  }
}

}  // namespace

Tensor hce(const std::vector<Tensor>& logits, const LevelLabels& labels, const LossConfig& cfg) {
  check_levels("hce", logits, labels);
  cfg.validate(static_cast<int>(logits.size()));
  Tensor total;
  for (std::size_t l = 0; l < logits.size(); ++l) {
    const Tensor term = ops::scale(ce_level(logits[l], labels.level(static_cast<int>(l)), cfg.ignore),
                                   cfg.level_weight(static_cast<int>(l)));
    total = total.defined() ? ops::add(total, term) : term;
  }
  return total;
}

Tensor hpc(const std::vector<Tensor>& logits, const LevelLabels& labels, const LossConfig& cfg) {
  check_levels("hpc", logits, labels);
  const int n = static_cast<int>(logits.size());
  for (int l = 0; l < n; ++l) {
    if (!labels.has(l)) {
      throw InputError("hpc: labels missing at level " + std::to_string(l + 1));
    }
  }
  const Tensor joint = ops::concat(logits, 1);
  const Tensor logp = ops::log_softmax(joint, 1);
  const int b = joint.dim(0), total_c = joint.dim(1);
  const std::size_t hw = static_cast<std::size_t>(joint.dim(2)) * joint.dim(3);
  if (labels.pixels() != b * hw) throw InputError("hpc: label raster does not match logits");
  const double mass = cfg.path_target == PathTarget::kNormalized ? 1.0 / n : 1.0;
  std::vector<double> target(joint.numel(), 0.0);
  std::vector<unsigned char> valid(b * hw, 1);
  for (int bi = 0; bi < b; ++bi) {
    for (std::size_t i = 0; i < hw; ++i) {
      const std::size_t p = bi * hw + i;
      for (int l = 0; l < n; ++l) {
        if (labels.level(l)[p] == cfg.ignore) valid[p] = 0;
      }
      if (!valid[p]) continue;
      int offset = 0;
      for (int l = 0; l < n; ++l) {
        const int c = logits[l].dim(1);
        const int y = labels.level(l)[p];
        if (y < 0 || y >= c) {
          throw InputError("hpc: label " + std::to_string(y) + " out of range at level " +
                           std::to_string(l + 1));
        }
        target[(static_cast<std::size_t>(bi) * total_c + offset + y) * hw + i] += mass;
        offset += c;
      }
    }
  }
  return ops::kl_div_mean(logp, target, valid);
}

Tensor hsc(const std::vector<Tensor>& logits, const LevelLabels& labels, const LossConfig& cfg) {
  const Tensor base = hce(logits, labels, cfg);
  if (cfg.alpha == 0.0) return base;
  return ops::add(base, ops::scale(hpc(logits, labels, cfg), cfg.alpha));
}

Tensor compute_loss(LossMode mode, const std::vector<Tensor>& logits, const LevelLabels& labels,
                    const LossConfig& cfg) {
  switch (mode) {
    case LossMode::kCe: {
      if (logits.size() != 1) throw InputError("ce loss expects a single logit tensor");
      return ce_level(logits.front(), labels.level(labels.num_levels() - 1), cfg.ignore);
    }
    case LossMode::kHce: return hce(logits, labels, cfg);
    case LossMode::kHsc: return hsc(logits, labels, cfg);
  }
  throw InputError("unknown loss mode");
}

}  // namespace hiera
