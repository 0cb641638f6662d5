#include "hiera/training.hpp"

#include <cmath>
#include <set>

#include "hiera/error.hpp"
#include "hiera/optim.hpp"
#include "hiera/rng.hpp"

namespace hiera {

nlohmann::ordered_json TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["iterations"] = iterations;
  j["batch"] = batch;
  j["lr"] = lr;
  j["momentum"] = momentum;
  j["lr_power"] = lr_power;
  j["clip_norm"] = clip_norm;
  j["gate_lr_mult"] = gate_lr_mult;
  j["loss"] = to_string(loss);
  j["lambda"] = loss_cfg.lambda;
  j["alpha"] = loss_cfg.alpha;
  j["path_target"] = loss_cfg.path_target == PathTarget::kRaw ? "raw" : "normalized";
  j["seed"] = seed;
  return j;
}

namespace {

void check_config(const TrainConfig& cfg, const Dataset& data) {
  if (cfg.iterations < 0) throw InputError("train: iterations must be >= 0");
  if (cfg.batch < 1) throw InputError("train: batch must be >= 1");
  if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr)) throw InputError("train: lr must be positive");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) throw InputError("train: momentum in [0, 1)");
  if (!(cfg.lr_power >= 0.0)) throw InputError("train: lr power must be >= 0");
  if (!(cfg.clip_norm >= 0.0)) throw InputError("train: clip norm must be >= 0");
  if (!(cfg.gate_lr_mult >= 0.0)) throw InputError("train: gate lr multiplier must be >= 0");
  if (data.size() == 0) throw InputError("train: empty dataset");
  cfg.loss_cfg.validate(data.hierarchy.num_levels());
}

std::vector<int> sample_batch(Rng& rng, int n, int batch) {
  std::vector<int> idx(batch);
  for (auto& i : idx) i = static_cast<int>(rng.below(n));
  return idx;
}

template <typename Forward>
TrainLog run_loop(SgdOptimizer& opt, const Dataset& data, const TrainConfig& cfg,
                  const ProgressFn& progress, Forward forward) {
  TrainLog log;
  Rng rng(derive_seed(cfg.seed, "batches"));
  opt.set_clip_norm(cfg.clip_norm);
  for (int it = 0; it < cfg.iterations; ++it) {
    opt.set_lr(cfg.lr * std::pow(1.0 - static_cast<double>(it) / cfg.iterations, cfg.lr_power));
    const auto idx = sample_batch(rng, data.size(), cfg.batch);
    const Tensor x = batch_images(data, idx);
    const LevelLabels y = batch_labels(data, idx);
    Tensor loss = compute_loss(cfg.loss, forward(x), y, cfg.loss_cfg);
    const double v = loss.item();
    if (!std::isfinite(v)) {
      throw NumericalError("non-finite loss at iteration " + std::to_string(it));
    }
    loss.backward();
    opt.step();
    log.loss.push_back(v);
    if (progress && cfg.log_every > 0 && (it + 1) % cfg.log_every == 0) progress(it + 1, v);
  }
  return log;
}

}  // namespace

TrainLog train_segnet(ToySegNet& net, const Dataset& data, const TrainConfig& cfg,
                      const ProgressFn& progress) {
  check_config(cfg, data);
  if (!net.hierarchical() && cfg.loss != LossMode::kCe) {
    throw InputError("train: a flat head trains with the ce loss only");
  }
  SgdOptimizer opt(cfg.lr, cfg.momentum);
  opt.add(net.params());
  return run_loop(opt, data, cfg, progress, [&](const Tensor& x) { return net.forward(x); });
}

TrainLog transfer_train(TransLuModel& model, const Dataset& data, const TrainConfig& cfg,
                        const ProgressFn& progress) {
  check_config(cfg, data);
  std::set<const void*> frozen;
  for (const auto& [name, t] : model.branch2_params()) {
    if (!t.frozen()) throw InputError("transfer: Branch 2 parameter '" + name + "' is not frozen");
    frozen.insert(t.id());
  }
  std::set<const void*> gates;
  for (const auto& [name, t] : model.gate_params()) gates.insert(t.id());
  SgdOptimizer opt(cfg.lr, cfg.momentum);
  for (const auto& [name, t] : model.trainable_params()) {
    if (frozen.count(t.id())) {
      throw InputError("transfer: optimizer would update Branch 2 parameter via '" + name + "'");
    }
    opt.add(name, t, gates.count(t.id()) ? cfg.gate_lr_mult : 1.0);
  }
  return run_loop(opt, data, cfg, progress,
                  [&](const Tensor& x) { return model.forward(x).logits; });
}

LevelLabels predict_labels(const std::vector<Tensor>& logits, const Hierarchy& h,
                           const EvalOptions& opts) {
  if (logits.size() == 1 && h.num_levels() > 1) {
    const LevelLabels top = argmax_per_level(logits);
    LevelLabels fine(h.num_levels(), top.batch(), top.height(), top.width());
    fine.set_level(h.finest(), std::vector<int>(top.level(0).begin(), top.level(0).end()));
    return aggregate_flat_prediction(h, fine, h.finest());
  }
  return decode(logits, h, opts.mode, opts.scores);
}

EvalReport evaluate(const LogitsFn& logits, const Dataset& data, const EvalOptions& opts) {
  if (opts.batch < 1) throw InputError("eval: batch must be >= 1");
  HierarchicalEvaluator ev(data.hierarchy);
  for (int start = 0; start < data.size(); start += opts.batch) {
    std::vector<int> idx;
    for (int i = start; i < std::min(data.size(), start + opts.batch); ++i) idx.push_back(i);
    const auto z = logits(batch_images(data, idx));
    ev.accumulate(predict_labels(z, data.hierarchy, opts), batch_labels(data, idx));
  }
  return ev.report();
}

EvalReport evaluate(const ToySegNet& net, const Dataset& data, const EvalOptions& opts) {
  return evaluate([&](const Tensor& x) { return net.forward(x); }, data, opts);
}

EvalReport evaluate(const TransLuModel& model, const Dataset& data, const EvalOptions& opts) {
  return evaluate([&](const Tensor& x) { return model.forward(x).logits; }, data, opts);
}

nlohmann::ordered_json segnet_config_json(const SegNetConfig& cfg) {
  nlohmann::ordered_json j;
  j["in_channels"] = cfg.in_channels;
  j["widths"] = cfg.widths;
  j["dec_channels"] = cfg.dec_channels;
  j["head"] = cfg.head == HeadKind::kFlat ? "flat" : "bhccm";
  j["level_classes"] = cfg.level_classes;
  j["fusion"] = to_string(cfg.fusion);
  j["mb_hidden"] = cfg.mb_hidden;
  j["mb_bias"] = cfg.mb_bias;
  return j;
}

SegNetConfig segnet_config_from_json(const nlohmann::json& j) {
  SegNetConfig c;
  try {
    c.in_channels = j.at("in_channels").get<int>();
    c.widths = j.at("widths").get<std::vector<int>>();
    c.dec_channels = j.at("dec_channels").get<int>();
    const std::string head = j.at("head").get<std::string>();
    if (head != "flat" && head != "bhccm") throw InputError("unknown head '" + head + "'");
    c.head = head == "flat" ? HeadKind::kFlat : HeadKind::kBhccm;
    c.level_classes = j.at("level_classes").get<std::vector<int>>();
    c.fusion = parse_fusion_mode(j.at("fusion").get<std::string>());
    c.mb_hidden = j.value("mb_hidden", 0);
    c.mb_bias = j.value("mb_bias", true);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("model config: ") + e.what());
  }
  return c;
}

}  // namespace hiera
