#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hiera {

using Path = std::vector<int>;
using Rgb = std::array<std::uint8_t, 3>;

struct LevelSpec {
  std::string name;
  std::vector<std::string> classes;
  std::vector<Rgb> colors;  // one per class; filled with a default palette when absent
};

// Tree-structured label system. Levels are indexed from 0 (coarsest) to
// num_levels()-1 (finest); class indices within a level follow document
// order. Immutable after construction.
class Hierarchy {
 public:
  // parent_of[l][c] is the parent index (at level l-1) of class c at level l;
  // parent_of[0] must be empty. Throws InputError on any structural problem.
  Hierarchy(std::vector<LevelSpec> levels, std::vector<std::vector<int>> parent_of);

  int num_levels() const { return static_cast<int>(levels_.size()); }
  int num_classes(int level) const;
  int total_classes() const;  // sum over levels
  int finest() const { return num_levels() - 1; }

  const LevelSpec& level(int l) const { return levels_.at(l); }
  const std::string& class_name(int level, int cls) const;
  // Index of `name` at `level`, or -1.
  int find_class(int level, std::string_view name) const;
  // Level index whose name is `name`, or -1.
  int find_level(std::string_view name) const;

  int parent(int level, int cls) const;
  const std::vector<int>& parents(int level) const { return parent_of_.at(level); }

  // Ancestor of (from_level, cls) at to_level <= from_level.
  int ancestor(int from_level, int cls, int to_level) const;
  // Lookup table: table[c] = ancestor of fine class c at to_level.
  const std::vector<int>& ancestor_table(int from_level, int to_level) const;

  // All valid root-to-leaf tuples, lexicographic by level-0 index, then
  // level-1, and so on.
  const std::vector<Path>& paths() const { return paths_; }
  int num_paths() const { return static_cast<int>(paths_.size()); }
  // Index into paths(), or -1 when the tuple is not a valid path.
  int path_index(std::span<const int> tuple) const;
  // Path ending at the given finest-level class.
  const Path& path_of_leaf(int leaf) const { return paths_.at(leaf_to_path_.at(leaf)); }

  // Stable 64-bit fingerprint of the canonical document.
  std::uint64_t hash() const;
  std::string hash_hex() const;

  bool operator==(const Hierarchy& other) const;

 private:
  std::vector<LevelSpec> levels_;
  std::vector<std::vector<int>> parent_of_;
  std::vector<Path> paths_;
  std::vector<int> leaf_to_path_;
  // ancestor_[from][to][c]
  std::vector<std::vector<std::vector<int>>> ancestor_;
};

// Document format (UTF-8 JSON):
//   {"levels": [{"name": "L1", "classes": ["vegetation", ...],
//                "colors": [[r,g,b], ...]}, ...],
//    "edges": [["cropland", "vegetation"], ...]}
// Each edge is [child, parent]; the child must be a class of some level i>0
// and the parent a class of level i-1. "colors" is optional.
Hierarchy parse_hierarchy(std::string_view text);
Hierarchy load_hierarchy(const std::filesystem::path& file);
std::string serialize_hierarchy(const Hierarchy& h);
void save_hierarchy(const Hierarchy& h, const std::filesystem::path& file);

// One-line summary, e.g. "3 levels, 4/9/18 classes, 18 paths".
std::string describe(const Hierarchy& h);

// Bundled documents shipped under data/.
std::filesystem::path bundled_data_dir();

}  // namespace hiera
