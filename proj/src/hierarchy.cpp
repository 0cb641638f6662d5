#include "hiera/hierarchy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "hiera/error.hpp"
#include "hiera/rng.hpp"
#include "json.hpp"

namespace hiera {

namespace {

using nlohmann::json;

// Deterministic default palette: evenly spread hues, alternating lightness.
Rgb default_color(int i) {
  const double hue = std::fmod(i * 0.618033988749895, 1.0) * 6.0;
  const double light = (i % 2 == 0) ? 0.85 : 0.6;
  const int sector = static_cast<int>(hue);
  const double f = hue - sector;
  double r = 0, g = 0, b = 0;
  switch (sector % 6) {
    case 0: r = 1; g = f; break;
    case 1: r = 1 - f; g = 1; break;
    case 2: g = 1; b = f; break;
    case 3: g = 1 - f; b = 1; break;
    case 4: r = f; b = 1; break;
    default: r = 1; b = 1 - f; break;
  }
  auto to_byte = [&](double v) {
    return static_cast<std::uint8_t>(std::clamp(v * light * 255.0, 0.0, 255.0));
  };
  return {to_byte(r), to_byte(g), to_byte(b)};
}

}  // namespace

Hierarchy::Hierarchy(std::vector<LevelSpec> levels,
                     std::vector<std::vector<int>> parent_of)
    : levels_(std::move(levels)), parent_of_(std::move(parent_of)) {
  if (levels_.empty()) throw InputError("hierarchy has no levels");
  if (parent_of_.size() != levels_.size()) {
    throw InputError("hierarchy: parent table has " +
                     std::to_string(parent_of_.size()) + " levels, expected " +
                     std::to_string(levels_.size()));
  }
  int palette_cursor = 0;
  for (int l = 0; l < num_levels(); ++l) {
    auto& lv = levels_[l];
    if (lv.classes.empty()) {
      throw InputError("hierarchy: level " + lv.name + " is empty");
    }
    for (std::size_t a = 0; a < lv.classes.size(); ++a) {
      for (std::size_t b = a + 1; b < lv.classes.size(); ++b) {
        if (lv.classes[a] == lv.classes[b]) {
          throw InputError("hierarchy: duplicate class '" + lv.classes[a] +
                           "' at level " + lv.name);
        }
      }
    }
    if (lv.colors.empty()) {
      for (std::size_t c = 0; c < lv.classes.size(); ++c) {
        lv.colors.push_back(default_color(palette_cursor++));
      }
    } else if (lv.colors.size() != lv.classes.size()) {
      throw InputError("hierarchy: level " + lv.name + " has " +
                       std::to_string(lv.colors.size()) + " colors for " +
                       std::to_string(lv.classes.size()) + " classes");
    }
  }
  if (!parent_of_[0].empty()) {
    throw InputError("hierarchy: classes at root level " + levels_[0].name +
                     " cannot have parents");
  }
  for (int l = 1; l < num_levels(); ++l) {
    const auto& lv = levels_[l];
    if (parent_of_[l].size() != lv.classes.size()) {
      throw InputError("hierarchy: parent table size mismatch at level " + lv.name);
    }
    for (std::size_t c = 0; c < lv.classes.size(); ++c) {
      const int p = parent_of_[l][c];
      if (p < 0) {
        throw InputError("hierarchy: orphan class '" + lv.classes[c] +
                         "' at level " + lv.name + " (no parent at level " +
                         levels_[l - 1].name + ")");
      }
      if (p >= num_classes(l - 1)) {
        throw InputError("hierarchy: class '" + lv.classes[c] + "' at level " +
                         lv.name + " has out-of-range parent index " +
                         std::to_string(p));
      }
    }
  }
  // Every non-finest class needs at least one child so that each pixel can
  // carry a label at every level.
  for (int l = 0; l + 1 < num_levels(); ++l) {
    std::vector<bool> has_child(levels_[l].classes.size(), false);
    for (int p : parent_of_[l + 1]) has_child[p] = true;
    for (std::size_t c = 0; c < has_child.size(); ++c) {
      if (!has_child[c]) {
        throw InputError("hierarchy: class '" + levels_[l].classes[c] +
                         "' at level " + levels_[l].name +
                         " has no children at level " + levels_[l + 1].name);
      }
    }
  }

  const int n = num_levels();
  ancestor_.assign(n, std::vector<std::vector<int>>(n));
  for (int from = 0; from < n; ++from) {
    for (int to = 0; to <= from; ++to) {
      auto& table = ancestor_[from][to];
      table.resize(num_classes(from));
      for (int c = 0; c < num_classes(from); ++c) {
        int cls = c;
        for (int l = from; l > to; --l) cls = parent_of_[l][cls];
        table[c] = cls;
      }
    }
  }

  // Depth-first enumeration with ascending child order yields paths sorted
  // lexicographically by (level-0, level-1, ...) index.
  std::vector<std::vector<std::vector<int>>> children(n);
  for (int l = 0; l + 1 < n; ++l) {
    children[l].resize(num_classes(l));
    for (int c = 0; c < num_classes(l + 1); ++c) {
      children[l][parent_of_[l + 1][c]].push_back(c);
    }
  }
  Path current;
  auto visit = [&](auto&& self, int level, int cls) -> void {
    current.push_back(cls);
    if (level == n - 1) {
      paths_.push_back(current);
    } else {
      for (int child : children[level][cls]) self(self, level + 1, child);
    }
    current.pop_back();
  };
  for (int c = 0; c < num_classes(0); ++c) visit(visit, 0, c);

  leaf_to_path_.assign(num_classes(n - 1), -1);
  for (std::size_t p = 0; p < paths_.size(); ++p) {
    leaf_to_path_[paths_[p].back()] = static_cast<int>(p);
  }
}

int Hierarchy::num_classes(int level) const {
  return static_cast<int>(levels_.at(level).classes.size());
}

int Hierarchy::total_classes() const {
  int total = 0;
  for (const auto& lv : levels_) total += static_cast<int>(lv.classes.size());
  return total;
}

const std::string& Hierarchy::class_name(int level, int cls) const {
  return levels_.at(level).classes.at(cls);
}

int Hierarchy::find_class(int level, std::string_view name) const {
  const auto& cs = levels_.at(level).classes;
  auto it = std::find(cs.begin(), cs.end(), name);
  return it == cs.end() ? -1 : static_cast<int>(it - cs.begin());
}

int Hierarchy::find_level(std::string_view name) const {
  for (int l = 0; l < num_levels(); ++l) {
    if (levels_[l].name == name) return l;
  }
  return -1;
}

int Hierarchy::parent(int level, int cls) const {
  if (level <= 0) throw InputError("hierarchy: root-level classes have no parent");
  return parent_of_.at(level).at(cls);
}

int Hierarchy::ancestor(int from_level, int cls, int to_level) const {
  if (to_level > from_level || to_level < 0) {
    throw InputError("hierarchy: ancestor level must not be finer than the source level");
  }
  return ancestor_.at(from_level).at(to_level).at(cls);
}

const std::vector<int>& Hierarchy::ancestor_table(int from_level, int to_level) const {
  if (to_level > from_level || to_level < 0) {
    throw InputError("hierarchy: ancestor level must not be finer than the source level");
  }
  return ancestor_.at(from_level).at(to_level);
}

int Hierarchy::path_index(std::span<const int> tuple) const {
  if (static_cast<int>(tuple.size()) != num_levels()) return -1;
  const int leaf = tuple.back();
  if (leaf < 0 || leaf >= num_classes(finest())) return -1;
  const int p = leaf_to_path_[leaf];
  return std::equal(tuple.begin(), tuple.end(), paths_[p].begin()) ? p : -1;
}

std::uint64_t Hierarchy::hash() const { return fnv1a64(serialize_hierarchy(*this)); }

std::string Hierarchy::hash_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(hash()));
  return buf;
}

bool Hierarchy::operator==(const Hierarchy& other) const {
  if (num_levels() != other.num_levels() || parent_of_ != other.parent_of_) return false;
  for (int l = 0; l < num_levels(); ++l) {
    if (levels_[l].name != other.levels_[l].name ||
        levels_[l].classes != other.levels_[l].classes ||
        levels_[l].colors != other.levels_[l].colors) {
      return false;
    }
  }
  return true;
}

Hierarchy parse_hierarchy(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw InputError("hierarchy: parse error at byte " + std::to_string(e.byte) +
                     ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("levels") || !doc["levels"].is_array()) {
    throw InputError("hierarchy: document must be an object with a 'levels' array");
  }
  std::vector<LevelSpec> levels;
  try {
    for (const auto& lv : doc["levels"]) {
      LevelSpec spec;
      spec.name = lv.at("name").get<std::string>();
      spec.classes = lv.at("classes").get<std::vector<std::string>>();
      if (lv.contains("colors")) {
        for (const auto& rgb : lv["colors"]) {
          const auto v = rgb.get<std::vector<int>>();
          if (v.size() != 3) throw InputError("hierarchy: colors must be [r,g,b] triples");
          spec.colors.push_back({static_cast<std::uint8_t>(v[0]),
                                 static_cast<std::uint8_t>(v[1]),
                                 static_cast<std::uint8_t>(v[2])});
        }
      }
      levels.push_back(std::move(spec));
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("hierarchy: malformed level entry: ") + e.what());
  }
  if (levels.empty()) throw InputError("hierarchy: no levels");

  std::vector<std::vector<int>> parent_of(levels.size());
  for (std::size_t l = 1; l < levels.size(); ++l) {
    parent_of[l].assign(levels[l].classes.size(), -1);
  }
  auto index_in = [](const LevelSpec& lv, const std::string& name) {
    auto it = std::find(lv.classes.begin(), lv.classes.end(), name);
    return it == lv.classes.end() ? -1 : static_cast<int>(it - lv.classes.begin());
  };
  const json edges = doc.value("edges", json::array());
  if (!edges.is_array()) throw InputError("hierarchy: 'edges' must be an array");
  for (const auto& e : edges) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_string() || !e[1].is_string()) {
      throw InputError("hierarchy: each edge must be [child, parent], got " + e.dump());
    }
    const auto child = e[0].get<std::string>();
    const auto parent = e[1].get<std::string>();
    int match_level = -1;
    for (std::size_t l = 1; l < levels.size(); ++l) {
      if (index_in(levels[l], child) >= 0 && index_in(levels[l - 1], parent) >= 0) {
        if (match_level >= 0) {
          throw InputError("hierarchy: edge [" + child + ", " + parent +
                           "] is ambiguous (matches levels " +
                           levels[match_level].name + " and " + levels[l].name + ")");
        }
        match_level = static_cast<int>(l);
      }
    }
    if (match_level < 0) {
      throw InputError("hierarchy: edge [" + child + ", " + parent +
                       "] does not connect a class to a class at the next coarser level");
    }
    const int c = index_in(levels[match_level], child);
    auto& slot = parent_of[match_level][c];
    if (slot >= 0) {
      throw InputError("hierarchy: duplicate parent assignment for class '" + child +
                       "' at level " + levels[match_level].name);
    }
    slot = index_in(levels[match_level - 1], parent);
  }
  return Hierarchy(std::move(levels), std::move(parent_of));
}

Hierarchy load_hierarchy(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open hierarchy document " + file.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_hierarchy(buf.str());
}

std::string serialize_hierarchy(const Hierarchy& h) {
  json doc;
  doc["levels"] = json::array();
  json edges = json::array();
  for (int l = 0; l < h.num_levels(); ++l) {
    const auto& lv = h.level(l);
    json colors = json::array();
    for (const auto& c : lv.colors) colors.push_back({c[0], c[1], c[2]});
    doc["levels"].push_back({{"name", lv.name}, {"classes", lv.classes}, {"colors", colors}});
    if (l > 0) {
      for (int c = 0; c < h.num_classes(l); ++c) {
        edges.push_back({lv.classes[c], h.class_name(l - 1, h.parent(l, c))});
      }
    }
  }
  doc["edges"] = edges;
  return doc.dump();
}

void save_hierarchy(const Hierarchy& h, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  out << serialize_hierarchy(h) << '\n';
  if (!out) throw IoError("write failed for " + file.string());
}

std::string describe(const Hierarchy& h) {
  std::ostringstream os;
  os << h.num_levels() << (h.num_levels() == 1 ? " level, " : " levels, ");
  for (int l = 0; l < h.num_levels(); ++l) {
    if (l) os << '/';
    os << h.num_classes(l);
  }
  os << " classes, " << h.num_paths() << " paths";
  return os.str();
}

std::filesystem::path bundled_data_dir() { return HIERA_DATA_DIR; }

}  // namespace hiera
