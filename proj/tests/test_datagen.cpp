#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "hiera/datagen.hpp"
#include "hiera/decode.hpp"
#include "hiera/error.hpp"
#include "support.hpp"

using namespace hiera;
using testsupport::bitwise_equal;

namespace {

Hierarchy mm5b() { return load_hierarchy(bundled_data_dir() / "mm5b.json"); }
Hierarchy crop() { return load_hierarchy(bundled_data_dir() / "crop.json"); }

SceneSpec small_spec(std::uint64_t seed, int size = 16) {
  SceneSpec s;
  s.height = size;
  s.width = size;
  s.regions = 6;
  s.seed = seed;
  return s;
}

bool same_dataset(const Dataset& a, const Dataset& b) {
  if (a.size() != b.size() || !(a.hierarchy == b.hierarchy)) return false;
  for (int i = 0; i < a.size(); ++i) {
    if (!bitwise_equal(a.images[i], b.images[i]) || !(a.labels[i] == b.labels[i])) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("same seed gives an identical dataset, a different seed does not") {
  const Hierarchy h = mm5b();
  const Dataset a = generate(small_spec(1), h, 3), b = generate(small_spec(1), h, 3);
  CHECK(same_dataset(a, b));
  CHECK(a.spec.dump() == b.spec.dump());
  CHECK_FALSE(same_dataset(a, generate(small_spec(2), h, 3)));
  CHECK(a.images[0].shape() == Shape{4, 16, 16});
}

TEST_CASE("noise-free scenes are perfectly separable by nearest mean") {
  const Hierarchy h = mm5b();
  SceneSpec s = small_spec(3);
  s.noise = 0.0;
  const Dataset d = generate(s, h, 4);
  CHECK(d.nearest_mean_accuracy == 1.0);
  resolve_means(s, h);
  CHECK(nearest_mean_accuracy(d.images, d.labels, s.means) == 1.0);
  for (const auto& row : s.means) CHECK(row.size() == 4);
}

TEST_CASE("default scenes carry valid paths at every pixel") {
  const Hierarchy h = mm5b();
  SceneSpec s;
  s.seed = 4;
  const Dataset d = generate(s, h, 16);
  CHECK(d.height == 64);
  for (const auto& l : d.labels) {
    CHECK(l.complete());
    CHECK(consistency_rate(l, h) == 1.0);
    CHECK_NOTHROW(l.validate(h));
    LevelLabels fine_only(3, 1, 64, 64);
    fine_only.set_level(2, std::vector<int>(l.level(2).begin(), l.level(2).end()));
    CHECK(aggregate_flat_prediction(h, fine_only, 2) == l);
  }
}

TEST_CASE("leaf frequencies stay within 10x of uniform over many scenes") {
  const Hierarchy h = mm5b();
  std::vector<double> count(18, 0.0);
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Dataset d = generate(small_spec(1000 + seed), h, 1);
    for (int v : d.labels[0].level(2)) {
      count[v] += 1.0;
      total += 1.0;
    }
  }
  for (double c : count) {
    const double ratio = c / (total / 18.0);
    CHECK(ratio > 0.1);
    CHECK(ratio < 10.0);
  }
}

TEST_CASE("crop target uses the crop tree and source spectra for others") {
  const Hierarchy src = mm5b(), dst = crop();
  const int split = src.find_class(1, "cropland");
  SceneSpec s = small_spec(5);
  const Dataset a = make_crop_target(s, src, split, dst, 4);
  const Dataset b = make_crop_target(s, src, split, dst, 4);
  CHECK(same_dataset(a, b));
  CHECK(a.hierarchy == dst);
  std::set<int> seen;
  for (const auto& l : a.labels) {
    CHECK(consistency_rate(l, dst) == 1.0);
    for (int v : l.level(2)) seen.insert(v);
  }
  CHECK(seen.count(dst.find_class(2, "others")) == 1);
  CHECK(seen.size() >= 3);
  s.noise = 0.0;
  const Dataset clean = make_crop_target(s, src, split, dst, 2);
  CHECK(clean.nearest_mean_accuracy == 1.0);
  CHECK_THROWS_AS(make_crop_target(s, src, 99, dst, 1), InputError);
}

TEST_CASE("splits with different image seeds share class spectra") {
  const Hierarchy src = mm5b(), dst = crop();
  const int split = src.find_class(1, "cropland");
  SceneSpec tr = small_spec(10), te = small_spec(11);
  tr.means_seed = te.means_seed = 77;
  const Dataset a = make_crop_target(tr, src, split, dst, 2);
  const Dataset b = make_crop_target(te, src, split, dst, 2);
  CHECK_FALSE(same_dataset(a, b));
  CHECK(a.spec["crop_means"] == b.spec["crop_means"]);
  CHECK(a.spec["means"] == b.spec["means"]);
  CHECK(a.spec["crop_means"].size() == 3);
  te.means_seed = 78;
  CHECK(make_crop_target(te, src, split, dst, 2).spec["crop_means"] != a.spec["crop_means"]);
  const Dataset g1 = generate(tr, src, 1), g2 = generate(te, src, 1);
  CHECK(g1.spec["means"] != g2.spec["means"]);
}

TEST_CASE("scene settings that do not fit the tree are rejected") {
  const Hierarchy h = mm5b();
  SceneSpec s = small_spec(6);
  s.means = {{0.0, 0.0, 0.0, 0.0}};
  CHECK_THROWS_AS(resolve_means(s, h), InputError);
  SceneSpec bad = small_spec(6);
  bad.level_spread = {1.0, -0.5};
  CHECK_THROWS_AS(generate(bad, h, 1), InputError);
  SceneSpec neg = small_spec(6);
  neg.noise = -1.0;
  CHECK_THROWS_AS(generate(neg, h, 1), InputError);
}

TEST_CASE("scene settings json round trip") {
  SceneSpec s = small_spec(7);
  resolve_means(s, mm5b());
  const SceneSpec back = SceneSpec::from_json(s.to_json());
  CHECK(back.to_json().dump() == s.to_json().dump());
}

TEST_CASE("saved datasets load back bit for bit and detect corruption") {
  const Hierarchy h = mm5b();
  const Dataset d = generate(small_spec(8, 8), h, 3);
  const auto dir = std::filesystem::temp_directory_path() / "hiera_datagen_test";
  std::filesystem::remove_all(dir);
  save_dataset(dir, d, 8);
  CHECK(std::filesystem::exists(dir / "images" / "0002.htf"));
  CHECK(std::filesystem::exists(dir / "labels" / "L3" / "0000.htf"));
  const Dataset back = load_dataset(dir);
  CHECK(same_dataset(d, back));
  CHECK(back.nearest_mean_accuracy == d.nearest_mean_accuracy);

  const Tensor x = batch_images(back, {2, 0});
  CHECK(x.shape() == Shape{2, 4, 8, 8});
  CHECK(batch_labels(back, {2, 0}).batch() == 2);
  CHECK_THROWS_AS(batch_images(back, {3}), InputError);
  CHECK_THROWS_AS(batch_labels(back, {-1}), InputError);

  {
    std::ofstream f(dir / "images" / "0001.htf", std::ios::binary | std::ios::app);
    f << "x";
  }
  CHECK_THROWS(load_dataset(dir));
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_dataset(dir), IoError);
}
