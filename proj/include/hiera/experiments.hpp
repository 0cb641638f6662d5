#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hiera/datagen.hpp"
#include "hiera/training.hpp"
#include "hiera/translu.hpp"
#include "json.hpp"

namespace hiera {

// Everything one source-task run needs besides the hierarchy and seed.
struct SourceProfile {
  SceneSpec scene;
  int train_images = 64;
  int test_images = 16;
  std::vector<int> widths = {16, 32, 64};
  int dec_channels = 32;
  TrainConfig train;
  int eval_batch = 8;

  nlohmann::ordered_json to_json() const;
};

// 64x64 images, 2000 iterations, batch 8.
SourceProfile desk_profile();
// Reduced sizes used by the acceptance suite.
SourceProfile quick_profile();

struct TransferProfile {
  SourceProfile source;         // Branch 2 pretraining
  int pretrain_iterations = 600;
  int target_train_images = 48;
  int target_test_images = 16;
  TrainConfig transfer;         // Branch 1 budget
  std::string split_class = "cropland";
  bool cdsa_residual = true;  // Z * (1 + F); the plain product trains slower at this budget

  nlohmann::ordered_json to_json() const;
};

TransferProfile desk_transfer_profile();
TransferProfile quick_transfer_profile();

// Train/test pair sharing one spectral model: means come from the "scene"
// seed, images from "data/train" and "data/test".
struct SplitData {
  Dataset train;
  Dataset test;
};
SplitData make_source_split(const SourceProfile& p, const Hierarchy& h, std::uint64_t seed);
SplitData make_crop_split(const TransferProfile& p, const Hierarchy& source, const Hierarchy& crop,
                          std::uint64_t seed);

SegNetConfig source_net_config(const SourceProfile& p, const Hierarchy& h, HeadKind head,
                               FusionMode fusion);

struct SuiteRow {
  std::string name;
  std::vector<std::vector<double>> miou;  // [seed][level]
  std::vector<double> consistency;        // [seed]
  std::vector<double> final_loss;         // [seed]

  double mean_finest() const;
};

struct SuiteResult {
  std::string suite;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> level_names;
  std::vector<SuiteRow> rows;
  nlohmann::ordered_json profile;

  const SuiteRow& row(const std::string& name) const;
  nlohmann::ordered_json to_json() const;
  std::string to_table() const;
};

// Worker count from HIERA_SEG_THREADS (default 1, at least 1).
int worker_threads();

// Rows: flat, no-fusion, c2f, f2c, bidir+hce, bidir+hsc. Every row of a seed
// shares data and initialization labels (paired runs).
SuiteResult run_bhccm_suite(const SourceProfile& p, const Hierarchy& h,
                            const std::vector<std::uint64_t>& seeds, int threads = 1);

// Rows: pretrained (Branch 1 from Branch 2 weights, no interaction),
// cdks, cdks+cdsa. Branch 2 is pretrained per seed on the source task.
SuiteResult run_transfer_suite(const TransferProfile& p, const Hierarchy& source,
                               const Hierarchy& crop, const std::vector<CdsaLink>& links,
                               const std::vector<std::uint64_t>& seeds, int threads = 1);

// Rows: argmax, jsps, both decoded from one bidir+hsc model per seed.
SuiteResult run_jsps_suite(const SourceProfile& p, const Hierarchy& h,
                           const std::vector<std::uint64_t>& seeds, int threads = 1);

}  // namespace hiera
