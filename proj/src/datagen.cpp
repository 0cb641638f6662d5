#include "hiera/datagen.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "hiera/error.hpp"
#include "hiera/htf.hpp"
#include "hiera/rng.hpp"

namespace hiera {

namespace fs = std::filesystem;

nlohmann::ordered_json SceneSpec::to_json() const {
  nlohmann::ordered_json j;
  j["height"] = height;
  j["width"] = width;
  j["channels"] = channels;
  j["regions"] = regions;
  j["noise"] = noise;
  j["level_spread"] = level_spread;
  j["seed"] = seed;
  j["means_seed"] = means_seed;
  j["means"] = means;
  return j;
}

SceneSpec SceneSpec::from_json(const nlohmann::json& j) {
  SceneSpec s;
  s.height = j.value("height", s.height);
  s.width = j.value("width", s.width);
  s.channels = j.value("channels", s.channels);
  s.regions = j.value("regions", s.regions);
  s.noise = j.value("noise", s.noise);
  s.level_spread = j.value("level_spread", s.level_spread);
  s.seed = j.value("seed", s.seed);
  s.means_seed = j.value("means_seed", s.means_seed);
  s.means = j.value("means", s.means);
  return s;
}

namespace {

void check_spec(const SceneSpec& s) {
  if (s.height < 1 || s.width < 1 || s.channels < 1 || s.regions < 1) {
    throw InputError("datagen: image size, channels and regions must be positive");
  }
  if (!(s.noise >= 0.0) || !std::isfinite(s.noise)) {
    throw InputError("datagen: noise must be finite and non-negative");
  }
  for (double v : s.level_spread) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw InputError("datagen: level spreads must be finite and non-negative");
    }
  }
}

void check_index(const Dataset& ds, int i) {
  if (i < 0 || i >= ds.size()) {
    throw InputError("dataset index " + std::to_string(i) + " out of range (size " +
                     std::to_string(ds.size()) + ")");
  }
}

std::vector<double> random_offset(Rng& rng, int channels, double scale) {
  std::vector<double> v(channels);
  double n2 = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    n2 += x * x;
  }
  const double k = scale / std::sqrt(std::max(n2, 1e-12));
  for (auto& x : v) x *= k;
  return v;
}

// Per-level class offsets summed along each leaf's path.
std::vector<std::vector<double>> tree_means(const Hierarchy& h, int channels,
                                            const std::vector<double>& spread, Rng& rng) {
  const int n = h.num_levels();
  std::vector<std::vector<std::vector<double>>> offs(n);
  for (int l = 0; l < n; ++l) {
    const double s = spread.empty() ? 1.0 : spread[std::min<std::size_t>(l, spread.size() - 1)];
    for (int c = 0; c < h.num_classes(l); ++c) offs[l].push_back(random_offset(rng, channels, s));
  }
  std::vector<std::vector<double>> means;
  for (int leaf = 0; leaf < h.num_classes(h.finest()); ++leaf) {
    const Path& p = h.path_of_leaf(leaf);
    std::vector<double> m(channels, 0.0);
    for (int l = 0; l < n; ++l) {
      for (int ch = 0; ch < channels; ++ch) m[ch] += offs[l][p[l]][ch];
    }
    means.push_back(std::move(m));
  }
  return means;
}

double min_pairwise_distance(const std::vector<std::vector<double>>& m) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < m.size(); ++a) {
    for (std::size_t b = a + 1; b < m.size(); ++b) {
      double s = 0.0;
      for (std::size_t c = 0; c < m[a].size(); ++c) s += (m[a][c] - m[b][c]) * (m[a][c] - m[b][c]);
      best = std::min(best, std::sqrt(s));
    }
  }
  return best;
}

// Fills a Voronoi partition: region[y*W+x] = nearest seed point.
std::vector<int> voronoi(Rng& rng, int height, int width, int regions) {
  std::vector<double> py(regions), px(regions);
  for (int r = 0; r < regions; ++r) {
    py[r] = rng.uniform(0.0, height);
    px[r] = rng.uniform(0.0, width);
  }
  std::vector<int> out(static_cast<std::size_t>(height) * width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int r = 0; r < regions; ++r) {
        const double dy = y + 0.5 - py[r], dx = x + 0.5 - px[r];
        const double d = dy * dy + dx * dx;
        if (d < bd) {
          bd = d;
          best = r;
        }
      }
      out[static_cast<std::size_t>(y) * width + x] = best;
    }
  }
  return out;
}

// One scene: region_leaf picks (label, mean row) per region.
template <typename PickLeaf>
void render(const SceneSpec& spec, const Hierarchy& h, std::uint64_t seed,
            const std::vector<std::vector<double>>& pixel_means, PickLeaf pick, Dataset& ds) {
  Rng rng(seed);
  const int H = spec.height, W = spec.width, C = spec.channels;
  const std::vector<int> region = voronoi(rng, H, W, spec.regions);
  std::vector<int> label_of(spec.regions), mean_of(spec.regions);
  for (int r = 0; r < spec.regions; ++r) {
    const auto [label, mean_row] = pick(rng);
    label_of[r] = label;
    mean_of[r] = mean_row;
  }
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  std::vector<double> img(C * hw);
  std::vector<int> fine(hw);
  for (std::size_t p = 0; p < hw; ++p) {
    const int r = region[p];
    fine[p] = label_of[r];
    for (int c = 0; c < C; ++c) {
      img[c * hw + p] = pixel_means[mean_of[r]][c] + spec.noise * rng.normal();
    }
  }
  LevelLabels lab(h.num_levels(), 1, H, W);
  lab.set_level(h.finest(), std::move(fine));
  ds.labels.push_back(derive_coarse_labels(h, lab, h.finest()));
  ds.images.push_back(Tensor::from_data({C, H, W}, std::move(img)));
}

}  // namespace

void resolve_means(SceneSpec& spec, const Hierarchy& h) {
  check_spec(spec);
  const int leaves = h.num_classes(h.finest());
  if (spec.means.empty()) {
    // Best of several draws by smallest pairwise leaf distance, so no two
    // leaves land on top of each other by chance.
    Rng rng(derive_seed(spec.means_seed, "means"));
    double best = -1.0;
    for (int attempt = 0; attempt < 64; ++attempt) {
      auto m = tree_means(h, spec.channels, spec.level_spread, rng);
      const double d = min_pairwise_distance(m);
      if (d > best) {
        best = d;
        spec.means = std::move(m);
      }
    }
    return;
  }
  if (static_cast<int>(spec.means.size()) != leaves) {
    throw InputError("datagen: " + std::to_string(spec.means.size()) + " mean vectors for " +
                     std::to_string(leaves) + " leaf classes");
  }
  for (const auto& m : spec.means) {
    if (static_cast<int>(m.size()) != spec.channels) {
      throw InputError("datagen: mean vector length does not match channel count");
    }
  }
}

double nearest_mean_accuracy(const std::vector<Tensor>& images,
                             const std::vector<LevelLabels>& labels,
                             const std::vector<std::vector<double>>& means) {
  std::uint64_t hit = 0, total = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Tensor& img = images[i];
    const int C = img.dim(0);
    const std::size_t hw = static_cast<std::size_t>(img.dim(1)) * img.dim(2);
    const auto truth = labels[i].level(labels[i].num_levels() - 1);
    const auto& d = img.data();
    for (std::size_t p = 0; p < hw; ++p) {
      if (truth[p] == labels[i].ignore()) continue;
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < means.size(); ++k) {
        double s = 0.0;
        for (int c = 0; c < C; ++c) {
          const double e = d[c * hw + p] - means[k][c];
          s += e * e;
        }
        if (s < bd) {
          bd = s;
          best = static_cast<int>(k);
        }
      }
      hit += best == truth[p];
      ++total;
    }
  }
  return total == 0 ? 1.0 : static_cast<double>(hit) / static_cast<double>(total);
}

Dataset generate(SceneSpec spec, const Hierarchy& h, int n_images) {
  if (n_images < 1) throw InputError("datagen: need at least one image");
  resolve_means(spec, h);
  Dataset ds(h);
  ds.channels = spec.channels;
  ds.height = spec.height;
  ds.width = spec.width;
  const int leaves = h.num_classes(h.finest());
  for (int i = 0; i < n_images; ++i) {
    render(spec, h, derive_seed(spec.seed, "image/" + std::to_string(i)), spec.means,
           [&](Rng& rng) {
             const int leaf = static_cast<int>(rng.below(leaves));
             return std::pair{leaf, leaf};
           },
           ds);
  }
  ds.nearest_mean_accuracy = nearest_mean_accuracy(ds.images, ds.labels, spec.means);
  ds.spec = spec.to_json();
  ds.spec["kind"] = "source";
  return ds;
}

Dataset make_crop_target(SceneSpec spec, const Hierarchy& source, int split_l2,
                         const Hierarchy& crop, int n_images) {
  if (n_images < 1) throw InputError("datagen: need at least one image");
  if (source.num_levels() < 2 || split_l2 < 0 || split_l2 >= source.num_classes(1)) {
    throw InputError("datagen: split class out of range for the source tree");
  }
  const int crop_leaves = crop.num_classes(crop.finest());
  if (crop_leaves < 2) throw InputError("datagen: crop tree needs at least two leaves");
  resolve_means(spec, source);

  const int src_fine = source.finest();
  const int split_root = source.ancestor(1, split_l2, 0);
  std::vector<double> centroid(spec.channels, 0.0);
  int members = 0;
  std::vector<int> others;
  for (int leaf = 0; leaf < source.num_classes(src_fine); ++leaf) {
    if (source.ancestor(src_fine, leaf, 1) == split_l2) {
      for (int c = 0; c < spec.channels; ++c) centroid[c] += spec.means[leaf][c];
      ++members;
    } else if (source.ancestor(src_fine, leaf, 0) != split_root) {
      others.push_back(leaf);
    }
  }
  if (members == 0 || others.empty()) {
    throw InputError("datagen: split class leaves no crop or background leaves");
  }
  for (auto& v : centroid) v /= members;

  // Rows 0..n_src-1: source means; then one row per crop leaf but the last.
  std::vector<std::vector<double>> rows = spec.means;
  const int n_src = static_cast<int>(rows.size());
  Rng rng(derive_seed(spec.means_seed, "crop-means"));
  const double s = spec.level_spread.empty() ? 0.5 : spec.level_spread.back();
  for (int k = 0; k + 1 < crop_leaves; ++k) {
    auto off = random_offset(rng, spec.channels, s);
    for (int c = 0; c < spec.channels; ++c) off[c] += centroid[c];
    rows.push_back(std::move(off));
  }

  Dataset ds(crop);
  ds.channels = spec.channels;
  ds.height = spec.height;
  ds.width = spec.width;
  const int other_leaf = crop_leaves - 1;
  // Half of the regions are crops, half background.
  for (int i = 0; i < n_images; ++i) {
    render(spec, crop, derive_seed(spec.seed, "crop-image/" + std::to_string(i)), rows,
           [&](Rng& r) {
             if (r.below(2) == 0) {
               const int k = static_cast<int>(r.below(crop_leaves - 1));
               return std::pair{k, n_src + k};
             }
             return std::pair{other_leaf, others[r.below(others.size())]};
           },
           ds);
  }
  // Nearest-mean accuracy at the crop level: "others" owns every background mean.
  std::uint64_t hit = 0, total = 0;
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const auto& d = ds.images[i].data();
    const std::size_t hw = static_cast<std::size_t>(ds.height) * ds.width;
    const auto truth = ds.labels[i].level(crop.finest());
    for (std::size_t p = 0; p < hw; ++p) {
      int best = -1;
      double bd = std::numeric_limits<double>::infinity();
      auto consider = [&](int row, int label) {
        double e2 = 0.0;
        for (int c = 0; c < spec.channels; ++c) {
          const double e = d[c * hw + p] - rows[row][c];
          e2 += e * e;
        }
        if (e2 < bd) {
          bd = e2;
          best = label;
        }
      };
      for (int leaf : others) consider(leaf, other_leaf);
      for (int k = 0; k + 1 < crop_leaves; ++k) consider(n_src + k, k);
      hit += best == truth[p];
      ++total;
    }
  }
  ds.nearest_mean_accuracy = static_cast<double>(hit) / static_cast<double>(total);
  ds.spec = spec.to_json();
  ds.spec["kind"] = "crop";
  ds.spec["split_class"] = source.class_name(1, split_l2);
  ds.spec["source_hierarchy_hash"] = source.hash_hex();
  ds.spec["crop_means"] = std::vector<std::vector<double>>(rows.begin() + n_src, rows.end());
  return ds;
}

std::string index_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", i);
  return buf;
}

void save_dataset(const fs::path& dir, const Dataset& ds, std::uint64_t seed) {
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) throw IoError("cannot create " + (dir / "images").string() + ": " + ec.message());
  nlohmann::ordered_json sums = nlohmann::ordered_json::object();
  auto put = [&](const fs::path& rel, const std::vector<std::uint8_t>& bytes) {
    write_file_bytes(dir / rel, bytes);
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(std::string_view(
                      reinterpret_cast<const char*>(bytes.data()), bytes.size()))));
    sums[rel.generic_string()] = hex;
  };
  const Hierarchy& h = ds.hierarchy;
  for (int l = 0; l < h.num_levels(); ++l) {
    fs::create_directories(dir / "labels" / ("L" + std::to_string(l + 1)), ec);
    if (ec) throw IoError("cannot create label directory under " + dir.string());
  }
  for (int i = 0; i < ds.size(); ++i) {
    const std::string name = index_name(i) + ".htf";
    put(fs::path("images") / name, encode_htf(ds.images[i]));
    for (int l = 0; l < h.num_levels(); ++l) {
      const auto lv = ds.labels[i].level(l);
      std::vector<double> raster(lv.begin(), lv.end());
      put(fs::path("labels") / ("L" + std::to_string(l + 1)) / name,
          encode_htf(Tensor::from_data({ds.height, ds.width}, std::move(raster))));
    }
  }
  save_hierarchy(h, dir / "hierarchy.json");
  nlohmann::ordered_json m;
  m["seed"] = seed;
  m["count"] = ds.size();
  m["channels"] = ds.channels;
  m["height"] = ds.height;
  m["width"] = ds.width;
  m["hierarchy_hash"] = h.hash_hex();
  m["nearest_mean_accuracy"] = ds.nearest_mean_accuracy;
  m["spec"] = ds.spec;
  m["checksums"] = sums;
  const std::string text = m.dump(2) + "\n";
  write_file_bytes(dir / "manifest.json",
                   std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  Hierarchy h = load_hierarchy(dir / "hierarchy.json");
  const auto mbytes = read_file_bytes(dir / "manifest.json");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(mbytes.begin(), mbytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("dataset manifest: " + std::string(e.what()));
  }
  Dataset ds(h);
  const int count = m.value("count", 0);
  ds.spec = m.value("spec", nlohmann::ordered_json::object());
  ds.nearest_mean_accuracy = m.value("nearest_mean_accuracy", 0.0);
  if (m.contains("hierarchy_hash") && m["hierarchy_hash"] != h.hash_hex()) {
    throw InputError("dataset manifest hierarchy hash does not match hierarchy.json");
  }
  for (int i = 0; i < count; ++i) {
    const std::string name = index_name(i) + ".htf";
    Tensor img = read_htf(dir / "images" / name);
    if (img.ndim() != 3) throw InputError("dataset image " + name + " is not [C, H, W]");
    if (i == 0) {
      ds.channels = img.dim(0);
      ds.height = img.dim(1);
      ds.width = img.dim(2);
    } else if (img.dim(0) != ds.channels || img.dim(1) != ds.height || img.dim(2) != ds.width) {
      throw InputError("dataset image " + name + " has a different shape");
    }
    LevelLabels lab(h.num_levels(), 1, ds.height, ds.width);
    for (int l = 0; l < h.num_levels(); ++l) {
      const fs::path f = dir / "labels" / ("L" + std::to_string(l + 1)) / name;
      if (!fs::exists(f)) continue;
      int lh = 0, lw = 0;
      auto raster = read_label_raster(f, lh, lw);
      if (lh != ds.height || lw != ds.width) {
        throw InputError("label " + f.string() + " does not match its image size");
      }
      lab.set_level(l, std::move(raster));
    }
    lab.validate(h);
    ds.images.push_back(std::move(img));
    ds.labels.push_back(std::move(lab));
  }
  if (ds.images.empty()) throw InputError("dataset has no images: " + dir.string());
  return ds;
}

Tensor batch_images(const Dataset& ds, const std::vector<int>& idx) {
  const std::size_t per = static_cast<std::size_t>(ds.channels) * ds.height * ds.width;
  std::vector<double> out;
  out.reserve(per * idx.size());
  for (int i : idx) {
    check_index(ds, i);
    const auto& d = ds.images[i].data();
    out.insert(out.end(), d.begin(), d.end());
  }
  return Tensor::from_data({static_cast<int>(idx.size()), ds.channels, ds.height, ds.width},
                           std::move(out));
}

LevelLabels batch_labels(const Dataset& ds, const std::vector<int>& idx) {
  std::vector<LevelLabels> items;
  items.reserve(idx.size());
  for (int i : idx) {
    check_index(ds, i);
    items.push_back(ds.labels[i]);
  }
  return LevelLabels::stack(items);
}

}  // namespace hiera
