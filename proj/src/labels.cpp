#include "hiera/labels.hpp"

#include <string>

#include "hiera/error.hpp"

namespace hiera {

LevelLabels::LevelLabels(int num_levels, int batch, int height, int width, int ignore)
    : batch_(batch), height_(height), width_(width), ignore_(ignore),
      levels_(num_levels) {
  if (num_levels <= 0 || batch <= 0 || height <= 0 || width <= 0) {
    throw InputError("labels: dimensions must be positive");
  }
}

bool LevelLabels::has(int level) const {
  return level >= 0 && level < num_levels() && !levels_[level].empty();
}

bool LevelLabels::complete() const {
  for (const auto& l : levels_) {
    if (l.empty()) return false;
  }
  return !levels_.empty();
}

std::span<const int> LevelLabels::level(int l) const {
  if (!has(l)) throw InputError("labels: level " + std::to_string(l + 1) + " is absent");
  return levels_[l];
}

std::span<int> LevelLabels::mutable_level(int l) {
  if (l < 0 || l >= num_levels()) throw InputError("labels: level index out of range");
  if (levels_[l].empty()) levels_[l].assign(pixels(), ignore_);
  return levels_[l];
}

void LevelLabels::set_level(int l, std::vector<int> raster) {
  if (l < 0 || l >= num_levels()) throw InputError("labels: level index out of range");
  if (raster.size() != pixels()) {
    throw InputError("labels: raster has " + std::to_string(raster.size()) +
                     " pixels, expected " + std::to_string(pixels()));
  }
  levels_[l] = std::move(raster);
}

void LevelLabels::validate(const Hierarchy& h) const {
  if (num_levels() != h.num_levels()) {
    throw InputError("labels: " + std::to_string(num_levels()) +
                     " levels but hierarchy has " + std::to_string(h.num_levels()));
  }
  for (int l = 0; l < num_levels(); ++l) {
    if (!has(l)) continue;
    const int c = h.num_classes(l);
    const auto& r = levels_[l];
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (r[i] != ignore_ && (r[i] < 0 || r[i] >= c)) {
        throw InputError("labels: invalid class " + std::to_string(r[i]) + " at level " +
                         h.level(l).name + ", pixel " + std::to_string(i));
      }
    }
  }
  if (!complete()) return;
  std::vector<int> tuple(num_levels());
  for (std::size_t i = 0; i < pixels(); ++i) {
    bool ignored = false;
    for (int l = 0; l < num_levels(); ++l) {
      tuple[l] = levels_[l][i];
      ignored = ignored || tuple[l] == ignore_;
    }
    if (ignored) continue;
    if (h.path_index(tuple) < 0) {
      throw InputError("labels: pixel " + std::to_string(i) + " is not a valid path");
    }
  }
}

LevelLabels LevelLabels::stack(std::span<const LevelLabels> items) {
  if (items.empty()) throw InputError("labels: nothing to stack");
  const auto& first = items.front();
  int total = 0;
  for (const auto& it : items) {
    if (it.height_ != first.height_ || it.width_ != first.width_ ||
        it.num_levels() != first.num_levels() || it.ignore_ != first.ignore_) {
      throw InputError("labels: cannot stack rasters of different shapes");
    }
    total += it.batch_;
  }
  LevelLabels out(first.num_levels(), total, first.height_, first.width_, first.ignore_);
  for (int l = 0; l < first.num_levels(); ++l) {
    if (!first.has(l)) continue;
    std::vector<int> r;
    r.reserve(out.pixels());
    for (const auto& it : items) {
      if (!it.has(l)) throw InputError("labels: cannot stack rasters with different levels");
      r.insert(r.end(), it.levels_[l].begin(), it.levels_[l].end());
    }
    out.levels_[l] = std::move(r);
  }
  return out;
}

LevelLabels derive_coarse_labels(const Hierarchy& h, const LevelLabels& fine, int level) {
  if (level < 0 || level >= h.num_levels()) {
    throw InputError("derive: level " + std::to_string(level + 1) + " not in hierarchy");
  }
  if (fine.num_levels() != h.num_levels()) {
    throw InputError("derive: label/hierarchy level count mismatch");
  }
  const auto src = fine.level(level);
  const int c = h.num_classes(level);
  const int ignore = fine.ignore();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const int v = src[i];
    if (v != ignore && (v < 0 || v >= c)) {
      const std::size_t hw = static_cast<std::size_t>(fine.height()) * fine.width();
      const std::size_t b = i / hw;
      const std::size_t y = (i % hw) / fine.width();
      const std::size_t x = i % fine.width();
      throw InputError("derive: invalid class " + std::to_string(v) + " at level " +
                       h.level(level).name + ", pixel (b=" + std::to_string(b) +
                       ", y=" + std::to_string(y) + ", x=" + std::to_string(x) + ")");
    }
  }
  LevelLabels out = fine;
  for (int l = 0; l < level; ++l) {
    const auto& table = h.ancestor_table(level, l);
    std::vector<int> r(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
      r[i] = src[i] == ignore ? ignore : table[src[i]];
    }
    out.set_level(l, std::move(r));
  }
  return out;
}

LevelLabels aggregate_flat_prediction(const Hierarchy& h, const LevelLabels& fine_pred,
                                      int level) {
  return derive_coarse_labels(h, fine_pred, level);
}

}  // namespace hiera
