#include <cmath>

#include "doctest.h"
#include "hiera/decode.hpp"
#include "hiera/error.hpp"
#include "hiera/hierarchy.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace hiera;
using testsupport::enumerate_best;
using testsupport::grid_logits;
using testsupport::logit_at;
using testsupport::randn;

namespace {

Hierarchy mm5b() { return load_hierarchy(bundled_data_dir() / "mm5b.json"); }

std::vector<Tensor> constant_logits(const Hierarchy& h, double v) {
  std::vector<Tensor> z;
  for (int l = 0; l < h.num_levels(); ++l) z.push_back(Tensor::full({1, h.num_classes(l), 1, 1}, v));
  return z;
}

}  // namespace

TEST_CASE("argmax per level matches a loop and breaks ties low") {
  const Hierarchy h = mm5b();
  Rng rng(1);
  std::vector<Tensor> z;
  for (int l = 0; l < 3; ++l) z.push_back(randn({1, h.num_classes(l), 4, 4}, rng));
  const LevelLabels a = argmax_per_level(z);
  for (int l = 0; l < 3; ++l)
    for (std::size_t p = 0; p < 16; ++p) {
      int best = 0;
      for (int c = 1; c < h.num_classes(l); ++c)
        if (logit_at(z[l], p, c) > logit_at(z[l], p, best)) best = c;
      CHECK(a.level(l)[p] == best);
    }
  const LevelLabels zero = argmax_per_level(constant_logits(h, 0.0));
  for (int l = 0; l < 3; ++l) CHECK(zero.level(l)[0] == 0);
}

TEST_CASE("argmax of one-hot logits on a path returns the path") {
  const Hierarchy h = mm5b();
  const Path& target = h.paths()[11];
  auto z = constant_logits(h, -5.0);
  for (int l = 0; l < 3; ++l) z[l].mutable_data()[target[l]] = 5.0;
  const LevelLabels a = argmax_per_level(z);
  for (int l = 0; l < 3; ++l) CHECK(a.level(l)[0] == target[l]);
  CHECK(consistency_rate(a, h) == 1.0);
}

TEST_CASE("consistency rate counts invalid tuples and skips ignore") {
  const Hierarchy h = mm5b();
  LevelLabels y(3, 1, 1, 3);
  const int water = h.find_class(0, "water");
  const int cropland = h.find_class(1, "cropland");
  const int dry = h.find_class(2, "dry cropland");
  const int veg = h.find_class(0, "vegetation");
  y.set_level(0, {water, veg, kDefaultIgnore});
  y.set_level(1, {cropland, cropland, cropland});
  y.set_level(2, {dry, dry, dry});
  CHECK(consistency_rate(y, h) == 0.5);
  LevelLabels all_ignore(3, 1, 1, 1);
  for (int l = 0; l < 3; ++l) all_ignore.set_level(l, {kDefaultIgnore});
  CHECK(consistency_rate(all_ignore, h) == 1.0);
}

TEST_CASE("jsps on zero logits picks path 0 everywhere") {
  const Hierarchy h = mm5b();
  std::vector<Tensor> z;
  for (int l = 0; l < 3; ++l) z.push_back(Tensor::zeros({2, h.num_classes(l), 3, 3}));
  const auto scores = path_scores(z, h);
  for (double s : scores) CHECK(s == 1.5);
  const LevelLabels d = jsps_decode(z, h);
  for (int l = 0; l < 3; ++l)
    for (int v : d.level(l)) CHECK(v == h.paths()[0][l]);
}

TEST_CASE("jsps selects a dominant path") {
  const Hierarchy h = mm5b();
  const Path& target = h.paths()[7];
  auto z = constant_logits(h, -20.0);
  for (int l = 0; l < 3; ++l) z[l].mutable_data()[target[l]] = 20.0;
  const LevelLabels d = jsps_decode(z, h);
  for (int l = 0; l < 3; ++l) CHECK(d.level(l)[0] == target[l]);
}

TEST_CASE("jsps equals exhaustive enumeration including ties") {
  const Hierarchy h = mm5b();
  for (std::uint64_t seed : {2u, 3u}) {
    Rng rng(seed);
    const auto z = seed == 2 ? grid_logits(h, 1, 16, 16, rng) : [&] {
      std::vector<Tensor> r;
      for (int l = 0; l < 3; ++l) r.push_back(randn({1, h.num_classes(l), 16, 16}, rng, 2.0));
      return r;
    }();
    const LevelLabels d = jsps_decode(z, h);
    for (std::size_t p = 0; p < 256; ++p) {
      const Path best = enumerate_best(z, h, p);
      for (int l = 0; l < 3; ++l) CHECK(d.level(l)[p] == best[l]);
    }
    CHECK(consistency_rate(d, h) == 1.0);
  }
}

TEST_CASE("jsps fixes an inconsistent argmax pixel") {
  const Hierarchy h = mm5b();
  // Leaf a sits under vegetation; L1 and L2 favour the branch of runner-up leaf b.
  const int a = h.find_class(2, "paddy field");
  const int b = h.find_class(2, "river");
  auto z = constant_logits(h, -3.0);
  z[0].mutable_data()[h.ancestor(2, b, 0)] = 3.0;
  z[1].mutable_data()[h.ancestor(2, b, 1)] = 3.0;
  z[2].mutable_data()[a] = 1.0;
  z[2].mutable_data()[b] = 0.9;
  const LevelLabels naive = argmax_per_level(z);
  CHECK(naive.level(2)[0] == a);
  CHECK(consistency_rate(naive, h) == 0.0);
  const LevelLabels d = jsps_decode(z, h);
  CHECK(d.level(2)[0] == b);
  CHECK(d.level(0)[0] == h.ancestor(2, b, 0));
  CHECK(consistency_rate(d, h) == 1.0);
}

TEST_CASE("softmax scores use per-level probabilities") {
  const Hierarchy h = mm5b();
  Rng rng(4);
  std::vector<Tensor> z;
  for (int l = 0; l < 3; ++l) z.push_back(randn({1, h.num_classes(l), 2, 2}, rng));
  const auto s = path_scores(z, h, ScoreMode::kSoftmax);
  for (std::size_t p = 0; p < 4; ++p)
    for (int k = 0; k < h.num_paths(); ++k) {
      double ref = 0.0;
      for (int l = 0; l < 3; ++l) {
        double den = 0.0;
        for (int c = 0; c < h.num_classes(l); ++c) den += std::exp(logit_at(z[l], p, c));
        ref += std::exp(logit_at(z[l], p, h.paths()[k][l])) / den;
      }
      CHECK(s[p * h.num_paths() + k] == doctest::Approx(ref).epsilon(1e-12));
    }
  CHECK(consistency_rate(jsps_decode(z, h, ScoreMode::kSoftmax), h) == 1.0);
}

TEST_CASE("decode rejects logits that do not fit the tree") {
  const Hierarchy h = mm5b();
  std::vector<Tensor> z{Tensor::zeros({1, 4, 2, 2}), Tensor::zeros({1, 9, 2, 2}), Tensor::zeros({1, 17, 2, 2})};
  CHECK_THROWS_AS(jsps_decode(z, h), InputError);
  CHECK_THROWS_AS(jsps_decode({z[0], z[1]}, h), InputError);
  CHECK_THROWS_AS(parse_decode_mode("beam"), InputError);
  CHECK(parse_decode_mode(to_string(DecodeMode::kJsps)) == DecodeMode::kJsps);
  CHECK(parse_score_mode(to_string(ScoreMode::kSoftmax)) == ScoreMode::kSoftmax);
}
