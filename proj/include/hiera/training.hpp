#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "hiera/datagen.hpp"
#include "hiera/decode.hpp"
#include "hiera/evalkit.hpp"
#include "hiera/losses.hpp"
#include "hiera/segnet.hpp"
#include "hiera/translu.hpp"
#include "json.hpp"

namespace hiera {

struct TrainConfig {
  int iterations = 2000;
  int batch = 8;
  double lr = 0.02;
  double momentum = 0.9;
  double lr_power = 0.9;   // poly decay lr * (1 - it/iterations)^power; 0 keeps lr constant
  double clip_norm = 5.0;  // global gradient norm cap; 0 disables
  double gate_lr_mult = 0.01;  // step scale for TransLU whole-map scalar gates
  LossMode loss = LossMode::kHsc;
  LossConfig loss_cfg;
  int log_every = 100;
  std::uint64_t seed = 0;  // batch order comes from derive_seed(seed, "batches")

  nlohmann::ordered_json to_json() const;
};

struct TrainLog {
  std::vector<double> loss;  // one entry per iteration
};

// Called every log_every iterations with (iteration, loss).
using ProgressFn = std::function<void(int, double)>;

// Plain SGD loop. A non-finite loss raises NumericalError. A flat head only
// accepts the ce loss.
TrainLog train_segnet(ToySegNet& net, const Dataset& data, const TrainConfig& cfg,
                      const ProgressFn& progress = {});

// Same loop over a TransLU model; only Branch 1, the interaction units and
// the fusion scalars are registered. Any unfrozen Branch 2 parameter or
// optimizer overlap with Branch 2 is a hard error.
TrainLog transfer_train(TransLuModel& model, const Dataset& data, const TrainConfig& cfg,
                        const ProgressFn& progress = {});

struct EvalOptions {
  DecodeMode mode = DecodeMode::kArgmax;
  ScoreMode scores = ScoreMode::kSigmoid;
  int batch = 8;
};

// Per-level logits for one batch of the dataset, whatever the model.
using LogitsFn = std::function<std::vector<Tensor>(const Tensor&)>;

// Decodes every image and scores it against the dataset labels. A
// single-level output is treated as a flat finest-level prediction and
// lifted to the coarser levels through the tree.
EvalReport evaluate(const LogitsFn& logits, const Dataset& data, const EvalOptions& opts);
EvalReport evaluate(const ToySegNet& net, const Dataset& data, const EvalOptions& opts);
EvalReport evaluate(const TransLuModel& model, const Dataset& data, const EvalOptions& opts);

// Decoded predictions for a batch of logits; flat output is lifted.
LevelLabels predict_labels(const std::vector<Tensor>& logits, const Hierarchy& h,
                           const EvalOptions& opts);

nlohmann::ordered_json segnet_config_json(const SegNetConfig& cfg);
SegNetConfig segnet_config_from_json(const nlohmann::json& j);

}  // namespace hiera
