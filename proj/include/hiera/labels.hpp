#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hiera/hierarchy.hpp"

namespace hiera {

inline constexpr int kDefaultIgnore = 255;

// Per-level integer label rasters for a batch of images, laid out [b][y][x].
// Levels that have not been set are absent.
class LevelLabels {
 public:
  LevelLabels() = default;
  LevelLabels(int num_levels, int batch, int height, int width,
              int ignore = kDefaultIgnore);

  int num_levels() const { return static_cast<int>(levels_.size()); }
  int batch() const { return batch_; }
  int height() const { return height_; }
  int width() const { return width_; }
  int ignore() const { return ignore_; }
  std::size_t pixels() const {
    return static_cast<std::size_t>(batch_) * height_ * width_;
  }

  bool has(int level) const;
  bool complete() const;  // every level present
  std::span<const int> level(int l) const;
  std::span<int> mutable_level(int l);
  void set_level(int l, std::vector<int> raster);

  // Checks every present level against h: index range and, when all levels
  // are present, path validity of each non-ignore pixel. Throws InputError.
  void validate(const Hierarchy& h) const;

  // Stacks single-image labels along the batch axis.
  static LevelLabels stack(std::span<const LevelLabels> items);

  bool operator==(const LevelLabels&) const = default;

 private:
  int batch_ = 0;
  int height_ = 0;
  int width_ = 0;
  int ignore_ = kDefaultIgnore;
  std::vector<std::vector<int>> levels_;
};

// Fills every level coarser than `level` with the ancestor of the fine class;
// ignore pixels stay ignore at every level. Invalid fine indices raise
// InputError naming the pixel (b, y, x).
LevelLabels derive_coarse_labels(const Hierarchy& h, const LevelLabels& fine, int level);

// Flat-baseline evaluation path: a single-level prediction at `level`
// lifted to all coarser levels through the tree.
LevelLabels aggregate_flat_prediction(const Hierarchy& h, const LevelLabels& fine_pred,
                                      int level);

}  // namespace hiera
