#include <set>

#include "doctest.h"
#include "hiera/error.hpp"
#include "hiera/hierarchy.hpp"
#include "hiera/labels.hpp"
#include "hiera/rng.hpp"

using namespace hiera;

namespace {

Hierarchy mm5b() { return load_hierarchy(bundled_data_dir() / "mm5b.json"); }

// Ancestor by walking parent links one level at a time.
int walk_up(const Hierarchy& h, int level, int cls, int to) {
  while (level > to) {
    cls = h.parent(level, cls);
    --level;
  }
  return cls;
}

bool throws_input(const std::string& doc) {
  try {
    parse_hierarchy(doc);
  } catch (const InputError&) {
    return true;
  }
  return false;
}

}  // namespace

TEST_CASE("bundled land-cover tree has 4/9/18 classes and 18 paths") {
  const Hierarchy h = mm5b();
  CHECK(h.num_levels() == 3);
  CHECK(h.num_classes(0) == 4);
  CHECK(h.num_classes(1) == 9);
  CHECK(h.num_classes(2) == 18);
  CHECK(h.num_paths() == 18);
  CHECK(describe(h) == "3 levels, 4/9/18 classes, 18 paths");
  CHECK(h.class_name(0, h.ancestor(2, h.find_class(2, "paddy field"), 0)) == "vegetation");
}

TEST_CASE("crop tree describes as 2/2/4") {
  const Hierarchy h = load_hierarchy(bundled_data_dir() / "crop.json");
  CHECK(describe(h) == "3 levels, 2/2/4 classes, 4 paths");
}

TEST_CASE("ancestor tables agree with a parent walk") {
  const Hierarchy h = mm5b();
  for (int from = 0; from < h.num_levels(); ++from)
    for (int to = 0; to <= from; ++to)
      for (int c = 0; c < h.num_classes(from); ++c) {
        CHECK(h.ancestor(from, c, to) == walk_up(h, from, c, to));
        CHECK(h.ancestor_table(from, to)[c] == walk_up(h, from, c, to));
      }
}

TEST_CASE("path set equals brute-force filter of the product space") {
  const Hierarchy h = mm5b();
  std::vector<Path> brute;
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 9; ++b)
      for (int c = 0; c < 18; ++c)
        if (h.parent(1, b) == a && h.parent(2, c) == b) brute.push_back({a, b, c});
  CHECK(brute == h.paths());
  for (int i = 0; i < h.num_paths(); ++i) CHECK(h.path_index(h.paths()[i]) == i);
  CHECK(h.path_index(Path{0, 8, 17}) == -1);
}

TEST_CASE("validation rejects malformed trees") {
  CHECK(throws_input(R"({"levels":[{"name":"A","classes":[]}],"edges":[]})"));
  CHECK(throws_input(R"({"levels":[{"name":"A","classes":["x","x"]}],"edges":[]})"));
  // orphan: b has no parent
  CHECK(throws_input(R"({"levels":[{"name":"A","classes":["x"]},{"name":"B","classes":["a","b"]}],
                          "edges":[["a","x"]]})"));
  // unknown parent
  CHECK(throws_input(R"({"levels":[{"name":"A","classes":["x"]},{"name":"B","classes":["a"]}],
                          "edges":[["a","nope"]]})"));
  // non-finest class without children
  CHECK(throws_input(R"({"levels":[{"name":"A","classes":["x","y"]},{"name":"B","classes":["a"]}],
                          "edges":[["a","x"]]})"));
  // two parents
  CHECK(throws_input(R"({"levels":[{"name":"A","classes":["x","y"]},{"name":"B","classes":["a","b"]}],
                          "edges":[["a","x"],["a","y"],["b","y"]]})"));
  try {
    parse_hierarchy("{\"levels\": [");
    FAIL("expected a parse error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("at byte 13") != std::string::npos);
  }
  CHECK_THROWS_AS(load_hierarchy("/nonexistent/tree.json"), IoError);
}

TEST_CASE("depth-agnostic: one level and four levels") {
  const Hierarchy one = parse_hierarchy(R"({"levels":[{"name":"L1","classes":["a","b","c"]}],"edges":[]})");
  CHECK(one.num_paths() == 3);
  CHECK(describe(one) == "1 level, 3 classes, 3 paths");
  const Hierarchy four = parse_hierarchy(R"({"levels":[
      {"name":"L1","classes":["r"]},{"name":"L2","classes":["a","b"]},
      {"name":"L3","classes":["a1","b1"]},{"name":"L4","classes":["a11","a12","b11"]}],
      "edges":[["a","r"],["b","r"],["a1","a"],["b1","b"],["a11","a1"],["a12","a1"],["b11","b1"]]})");
  CHECK(four.num_paths() == 3);
  CHECK(four.paths()[1] == Path{0, 0, 0, 1});
}

TEST_CASE("serialization round trip preserves equality and hash") {
  const Hierarchy h = mm5b();
  const Hierarchy back = parse_hierarchy(serialize_hierarchy(h));
  CHECK(back == h);
  CHECK(back.hash() == h.hash());
  CHECK(serialize_hierarchy(back) == serialize_hierarchy(h));
  const Hierarchy crop = load_hierarchy(bundled_data_dir() / "crop.json");
  CHECK(crop.hash() != h.hash());
}

TEST_CASE("derived coarse labels always form valid paths; ignore propagates") {
  const Hierarchy h = mm5b();
  Rng rng(5);
  LevelLabels lab(3, 2, 8, 8);
  std::vector<int> fine(lab.pixels());
  for (auto& f : fine) f = rng.below(10) == 0 ? kDefaultIgnore : static_cast<int>(rng.below(18));
  lab.set_level(2, fine);
  const LevelLabels full = derive_coarse_labels(h, lab, 2);
  REQUIRE(full.complete());
  for (std::size_t p = 0; p < full.pixels(); ++p) {
    if (fine[p] == kDefaultIgnore) {
      CHECK(full.level(0)[p] == kDefaultIgnore);
      CHECK(full.level(1)[p] == kDefaultIgnore);
      continue;
    }
    CHECK(h.path_index(Path{full.level(0)[p], full.level(1)[p], full.level(2)[p]}) >= 0);
  }
  CHECK_NOTHROW(full.validate(h));
}

TEST_CASE("invalid fine index names the pixel") {
  const Hierarchy h = mm5b();
  LevelLabels lab(3, 1, 2, 3);
  lab.set_level(2, {0, 1, 2, 3, 40, 5});
  try {
    derive_coarse_labels(h, lab, 2);
    FAIL("expected an error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("(b=0, y=1, x=1)") != std::string::npos);
  }
}

TEST_CASE("flat prediction lifted through the tree reproduces ground truth coarse labels") {
  const Hierarchy h = mm5b();
  Rng rng(8);
  LevelLabels lab(3, 1, 6, 6);
  std::vector<int> fine(lab.pixels());
  for (auto& f : fine) f = static_cast<int>(rng.below(18));
  lab.set_level(2, fine);
  const LevelLabels gt = derive_coarse_labels(h, lab, 2);
  LevelLabels only_fine(3, 1, 6, 6);
  only_fine.set_level(2, std::vector<int>(gt.level(2).begin(), gt.level(2).end()));
  CHECK(aggregate_flat_prediction(h, only_fine, 2) == gt);
}

TEST_CASE("validate flags inconsistent tuples") {
  const Hierarchy h = mm5b();
  LevelLabels lab(3, 1, 1, 1);
  const Path& p = h.paths()[0];
  lab.set_level(0, {p[0] + 1});
  lab.set_level(1, {p[1]});
  lab.set_level(2, {p[2]});
  CHECK_THROWS_AS(lab.validate(h), InputError);
}
