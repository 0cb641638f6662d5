#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "hiera/hierarchy.hpp"
#include "hiera/labels.hpp"
#include "hiera/tensor.hpp"
#include "json.hpp"

namespace hiera {

// Synthetic scene model. Leaf means are built down the tree: a random
// direction per coarse class, refined by smaller offsets per level, so
// siblings sit closer together than cousins.
struct SceneSpec {
  int height = 64;
  int width = 64;
  int channels = 4;
  int regions = 12;       // Voronoi seeds per image
  double noise = 0.28;    // per-pixel Gaussian std
  std::vector<double> level_spread = {2.0, 1.2, 0.8};  // offset scale per level
  std::uint64_t seed = 0;        // per-image draws
  std::uint64_t means_seed = 0;  // class spectra; shared by splits of one scene
  std::vector<std::vector<double>> means;  // [leaf][channel]; filled by resolve_means

  nlohmann::ordered_json to_json() const;
  static SceneSpec from_json(const nlohmann::json& j);
};

// Fills spec.means from the seed if empty; checks shape against h.
void resolve_means(SceneSpec& spec, const Hierarchy& h);

struct Dataset {
  explicit Dataset(Hierarchy h) : hierarchy(std::move(h)) {}

  Hierarchy hierarchy;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<Tensor> images;        // [C, H, W]
  std::vector<LevelLabels> labels;   // batch 1, every level present
  nlohmann::ordered_json spec;       // generator echo
  double nearest_mean_accuracy = 0.0;

  int size() const { return static_cast<int>(images.size()); }
};

// Voronoi regions, one leaf per region, coarse labels derived through h,
// pixels = leaf mean + noise. Image i uses derive_seed(seed, "image/i").
Dataset generate(SceneSpec spec, const Hierarchy& h, int n_images);

// Crop-style target: leaves under `split_l2` of the source tree become the
// crop leaves (all crop leaves but the last sit around that class's centroid
// with distinct offsets); the last crop leaf ("others") takes regions drawn
// from source leaves outside split_l2's coarsest ancestor, keeping their
// source means.
Dataset make_crop_target(SceneSpec spec, const Hierarchy& source, int split_l2,
                         const Hierarchy& crop, int n_images);

// Fraction of pixels whose nearest leaf mean is their true leaf.
double nearest_mean_accuracy(const std::vector<Tensor>& images,
                             const std::vector<LevelLabels>& labels,
                             const std::vector<std::vector<double>>& means);

// images/NNNN.htf, labels/L{k}/NNNN.htf, hierarchy.json, manifest.json.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds, std::uint64_t seed);
Dataset load_dataset(const std::filesystem::path& dir);

// Stacks selected items into [B, C, H, W] images and batch labels.
Tensor batch_images(const Dataset& ds, const std::vector<int>& idx);
LevelLabels batch_labels(const Dataset& ds, const std::vector<int>& idx);

std::string index_name(int i);  // "0007"

}  // namespace hiera
