#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hiera/hierarchy.hpp"
#include "hiera/labels.hpp"
#include "json.hpp"

namespace hiera {

// counts[t * C + p] = pixels with truth t predicted as p. Mergeable.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes = 0);

  void accumulate(std::span<const int> pred, std::span<const int> truth, int ignore);
  void merge(const ConfusionMatrix& other);

  int classes() const { return classes_; }
  std::uint64_t at(int truth, int pred) const { return counts_[truth * classes_ + pred]; }
  std::uint64_t total() const;
  std::uint64_t ignored() const { return ignored_; }

  // Classes with zero union are excluded from the mean (nullopt per class).
  std::vector<std::optional<double>> per_class_iou() const;
  // Classes absent from the truth are excluded from the mean.
  std::vector<std::optional<double>> per_class_acc() const;
  double miou() const;
  double macc() const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int classes_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t ignored_ = 0;
};

struct LevelMetrics {
  std::string name;
  double miou = 0.0;
  double macc = 0.0;
  std::vector<std::string> class_names;
  std::vector<std::optional<double>> iou;
};

struct EvalReport {
  std::vector<LevelMetrics> levels;
  std::optional<double> consistency_rate;  // only when every level was evaluated
  std::uint64_t pixels = 0;

  nlohmann::ordered_json to_json() const;
  // Metrics as rows, levels side by side.
  std::string to_table() const;
};

// Per-level confusion matrices plus a running consistency count.
class HierarchicalEvaluator {
 public:
  explicit HierarchicalEvaluator(const Hierarchy& h);

  // Levels present in both pred and truth are scored. Shape mismatch throws.
  void accumulate(const LevelLabels& pred, const LevelLabels& truth);
  void merge(const HierarchicalEvaluator& other);
  const ConfusionMatrix& matrix(int level) const { return cms_.at(level); }
  EvalReport report() const;

 private:
  const Hierarchy* h_;
  std::vector<ConfusionMatrix> cms_;
  std::vector<bool> seen_;
  std::uint64_t counted_ = 0;
  std::uint64_t consistent_ = 0;
  bool all_levels_ = true;
};

}  // namespace hiera
