#include "hiera/experiments.hpp"

#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <sstream>
#include <thread>

#include "hiera/error.hpp"
#include "hiera/rng.hpp"

namespace hiera {

nlohmann::ordered_json SourceProfile::to_json() const {
  nlohmann::ordered_json j;
  nlohmann::ordered_json s = scene.to_json();
  s.erase("means");
  s.erase("seed");
  j["scene"] = s;
  j["train_images"] = train_images;
  j["test_images"] = test_images;
  j["widths"] = widths;
  j["dec_channels"] = dec_channels;
  nlohmann::ordered_json t = train.to_json();
  t.erase("loss");
  t.erase("seed");
  j["train"] = t;
  j["eval_batch"] = eval_batch;
  return j;
}

SourceProfile desk_profile() { return SourceProfile{}; }

SourceProfile quick_profile() {
  SourceProfile p;
  p.scene.height = 16;
  p.scene.width = 16;
  p.scene.regions = 5;
  p.train_images = 64;
  p.test_images = 32;
  p.widths = {8, 16, 32};
  p.dec_channels = 16;
  p.train.batch = 4;
  p.eval_batch = 16;
  return p;
}

nlohmann::ordered_json TransferProfile::to_json() const {
  nlohmann::ordered_json j;
  j["source"] = source.to_json();
  j["pretrain_iterations"] = pretrain_iterations;
  j["target_train_images"] = target_train_images;
  j["target_test_images"] = target_test_images;
  nlohmann::ordered_json t = transfer.to_json();
  t.erase("seed");
  j["transfer"] = t;
  j["split_class"] = split_class;
  j["cdsa_residual"] = cdsa_residual;
  return j;
}

TransferProfile desk_transfer_profile() {
  TransferProfile p;
  p.source.scene.height = 32;
  p.source.scene.width = 32;
  p.source.scene.regions = 8;
  p.source.train.batch = 4;
  p.transfer.iterations = 300;
  p.transfer.batch = 4;
  return p;
}

TransferProfile quick_transfer_profile() {
  TransferProfile p;
  p.source = quick_profile();
  p.pretrain_iterations = 600;
  p.target_train_images = 48;
  p.target_test_images = 32;
  p.transfer.iterations = 300;
  p.transfer.batch = 4;
  return p;
}

namespace {

SceneSpec scene_for(const SceneSpec& base, const Hierarchy& h, std::uint64_t seed) {
  SceneSpec s = base;
  s.means_seed = derive_seed(seed, "scene");
  s.means.clear();
  resolve_means(s, h);
  return s;
}

}  // namespace

SplitData make_source_split(const SourceProfile& p, const Hierarchy& h, std::uint64_t seed) {
  SceneSpec s = scene_for(p.scene, h, seed);
  SceneSpec tr = s, te = s;
  tr.seed = derive_seed(seed, "data/train");
  te.seed = derive_seed(seed, "data/test");
  return SplitData{generate(tr, h, p.train_images), generate(te, h, p.test_images)};
}

SplitData make_crop_split(const TransferProfile& p, const Hierarchy& source, const Hierarchy& crop,
                          std::uint64_t seed) {
  if (source.num_levels() < 2) throw InputError("transfer: source tree needs two levels");
  const int split = source.find_class(1, p.split_class);
  if (split < 0) throw InputError("transfer: unknown split class '" + p.split_class + "'");
  SceneSpec s = scene_for(p.source.scene, source, seed);
  SceneSpec tr = s, te = s;
  tr.seed = derive_seed(seed, "crop/train");
  te.seed = derive_seed(seed, "crop/test");
  return SplitData{make_crop_target(tr, source, split, crop, p.target_train_images),
                   make_crop_target(te, source, split, crop, p.target_test_images)};
}

SegNetConfig source_net_config(const SourceProfile& p, const Hierarchy& h, HeadKind head,
                               FusionMode fusion) {
  SegNetConfig c;
  c.in_channels = p.scene.channels;
  c.widths = p.widths;
  c.dec_channels = p.dec_channels;
  c.head = head;
  for (int l = 0; l < h.num_levels(); ++l) c.level_classes.push_back(h.num_classes(l));
  c.fusion = fusion;
  return c;
}

double SuiteRow::mean_finest() const {
  double s = 0.0;
  for (const auto& m : miou) s += m.back();
  return miou.empty() ? 0.0 : s / static_cast<double>(miou.size());
}

const SuiteRow& SuiteResult::row(const std::string& name) const {
  for (const auto& r : rows) {
    if (r.name == name) return r;
  }
  throw InputError("suite " + suite + " has no row '" + name + "'");
}

nlohmann::ordered_json SuiteResult::to_json() const {
  nlohmann::ordered_json j;
  j["suite"] = suite;
  j["seeds"] = seeds;
  j["levels"] = level_names;
  j["profile"] = profile;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json o;
    o["name"] = r.name;
    o["miou"] = r.miou;
    o["consistency"] = r.consistency;
    o["final_loss"] = r.final_loss;
    o["mean_finest_miou"] = r.mean_finest();
    j["rows"].push_back(o);
  }
  return j;
}

std::string SuiteResult::to_table() const {
  std::ostringstream os;
  char buf[96];
  std::snprintf(buf, sizeof buf, "%-12s", "row");
  os << buf;
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    std::snprintf(buf, sizeof buf, "%9s", ("seed" + std::to_string(seeds[s])).c_str());
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "%9s\n", ("mean " + level_names.back()).c_str());
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-12s", r.name.c_str());
    os << buf;
    for (const auto& m : r.miou) {
      std::snprintf(buf, sizeof buf, "%9.2f", 100.0 * m.back());
      os << buf;
    }
    std::snprintf(buf, sizeof buf, "%9.2f\n", 100.0 * r.mean_finest());
    os << buf;
  }
  return os.str();
}

int worker_threads() {
  const char* v = std::getenv("HIERA_SEG_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw InputError("HIERA_SEG_THREADS must be a positive integer");
  return static_cast<int>(std::min<long>(n, 256));
}

namespace {

struct Cell {
  std::vector<double> miou;
  double consistency = 1.0;
  double final_loss = 0.0;
};

// Runs fn(i) for i in [0, n) on up to `threads` workers. The first exception
// is rethrown after all workers finish.
template <typename Fn>
void parallel_for(int n, int threads, Fn fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::mutex mu;
  int next = 0;
  std::exception_ptr err;
  std::vector<std::thread> pool;
  for (int t = 0; t < std::min(threads, n); ++t) {
    pool.emplace_back([&] {
      for (;;) {
        int i;
        {
          std::lock_guard lock(mu);
          if (next >= n || err) return;
          i = next++;
        }
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!err) err = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

Cell to_cell(const EvalReport& r, const TrainLog& log) {
  Cell c;
  for (const auto& lv : r.levels) c.miou.push_back(lv.miou);
  c.consistency = r.consistency_rate.value_or(1.0);
  c.final_loss = log.loss.empty() ? 0.0 : log.loss.back();
  return c;
}

SuiteResult assemble(std::string suite, const std::vector<std::string>& rows,
                     const std::vector<std::uint64_t>& seeds, const Hierarchy& h,
                     const std::vector<Cell>& cells, nlohmann::ordered_json profile) {
  SuiteResult out;
  out.suite = std::move(suite);
  out.seeds = seeds;
  for (int l = 0; l < h.num_levels(); ++l) out.level_names.push_back(h.level(l).name);
  out.profile = std::move(profile);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    SuiteRow row;
    row.name = rows[r];
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      const Cell& c = cells[s * rows.size() + r];
      row.miou.push_back(c.miou);
      row.consistency.push_back(c.consistency);
      row.final_loss.push_back(c.final_loss);
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

struct BhccmRow {
  const char* name;
  HeadKind head;
  FusionMode fusion;
  LossMode loss;
};

const BhccmRow kBhccmRows[] = {
    {"flat", HeadKind::kFlat, FusionMode::kNone, LossMode::kCe},
    {"no-fusion", HeadKind::kBhccm, FusionMode::kNone, LossMode::kHce},
    {"c2f", HeadKind::kBhccm, FusionMode::kCoarseToFine, LossMode::kHce},
    {"f2c", HeadKind::kBhccm, FusionMode::kFineToCoarse, LossMode::kHce},
    {"bidir+hce", HeadKind::kBhccm, FusionMode::kBidirectional, LossMode::kHce},
    {"bidir+hsc", HeadKind::kBhccm, FusionMode::kBidirectional, LossMode::kHsc},
};

std::vector<SplitData> source_splits(const SourceProfile& p, const Hierarchy& h,
                                     const std::vector<std::uint64_t>& seeds) {
  std::vector<SplitData> out;
  for (auto s : seeds) out.push_back(make_source_split(p, h, s));
  return out;
}

}  // namespace

SuiteResult run_bhccm_suite(const SourceProfile& p, const Hierarchy& h,
                            const std::vector<std::uint64_t>& seeds, int threads) {
  if (seeds.empty()) throw InputError("ablate: no seeds");
  const auto data = source_splits(p, h, seeds);
  const int nrows = static_cast<int>(std::size(kBhccmRows));
  std::vector<Cell> cells(seeds.size() * nrows);
  parallel_for(static_cast<int>(cells.size()), threads, [&](int i) {
    const int s = i / nrows;
    const BhccmRow& row = kBhccmRows[i % nrows];
    ToySegNet net(source_net_config(p, h, row.head, row.fusion), derive_seed(seeds[s], "model"));
    TrainConfig tc = p.train;
    tc.loss = row.loss;
    tc.seed = seeds[s];
    const TrainLog log = train_segnet(net, data[s].train, tc);
    EvalOptions eo;
    eo.batch = p.eval_batch;
    cells[i] = to_cell(evaluate(net, data[s].test, eo), log);
  });
  std::vector<std::string> names;
  for (const auto& r : kBhccmRows) names.push_back(r.name);
  return assemble("bhccm", names, seeds, h, cells, p.to_json());
}

SuiteResult run_jsps_suite(const SourceProfile& p, const Hierarchy& h,
                           const std::vector<std::uint64_t>& seeds, int threads) {
  if (seeds.empty()) throw InputError("ablate: no seeds");
  const auto data = source_splits(p, h, seeds);
  std::vector<Cell> cells(seeds.size() * 2);
  parallel_for(static_cast<int>(seeds.size()), threads, [&](int s) {
    ToySegNet net(source_net_config(p, h, HeadKind::kBhccm, FusionMode::kBidirectional),
                  derive_seed(seeds[s], "model"));
    TrainConfig tc = p.train;
    tc.loss = LossMode::kHsc;
    tc.seed = seeds[s];
    const TrainLog log = train_segnet(net, data[s].train, tc);
    EvalOptions eo;
    eo.batch = p.eval_batch;
    cells[2 * s] = to_cell(evaluate(net, data[s].test, eo), log);
    eo.mode = DecodeMode::kJsps;
    cells[2 * s + 1] = to_cell(evaluate(net, data[s].test, eo), log);
  });
  return assemble("jsps", {"argmax", "jsps"}, seeds, h, cells, p.to_json());
}

SuiteResult run_transfer_suite(const TransferProfile& p, const Hierarchy& source,
                               const Hierarchy& crop, const std::vector<CdsaLink>& links,
                               const std::vector<std::uint64_t>& seeds, int threads) {
  if (seeds.empty()) throw InputError("ablate: no seeds");
  const std::vector<std::string> names = {"pretrained", "cdks", "cdks+cdsa"};
  const int nrows = static_cast<int>(names.size());
  std::vector<Cell> cells(seeds.size() * nrows);
  parallel_for(static_cast<int>(seeds.size()), threads, [&](int s) {
    const std::uint64_t seed = seeds[s];
    const SplitData src = make_source_split(p.source, source, seed);
    ToySegNet branch2(source_net_config(p.source, source, HeadKind::kBhccm,
                                        FusionMode::kBidirectional),
                      derive_seed(seed, "model"));
    TrainConfig pre = p.source.train;
    pre.iterations = p.pretrain_iterations;
    pre.loss = LossMode::kHsc;
    pre.seed = derive_seed(seed, "pretrain");
    train_segnet(branch2, src.train, pre);

    const SplitData tgt = make_crop_split(p, source, crop, seed);
    SegNetConfig b1 = source_net_config(p.source, crop, HeadKind::kBhccm,
                                        FusionMode::kBidirectional);
    for (int r = 0; r < nrows; ++r) {
      TransLuOptions opts;
      opts.cdks = r >= 1;
      opts.cdsa = r >= 2;
      opts.cdsa_residual = p.cdsa_residual;
      opts.links = links;
      TransLuModel model(branch2, b1, opts, derive_seed(seed, "transfer"));
      copy_matching_params(branch2.trunk_params(), model.branch1().trunk_params());
      TrainConfig tc = p.transfer;
      tc.loss = LossMode::kHsc;
      tc.seed = derive_seed(seed, "transfer");
      const TrainLog log = transfer_train(model, tgt.train, tc);
      EvalOptions eo;
      eo.batch = p.source.eval_batch;
      cells[s * nrows + r] = to_cell(evaluate(model, tgt.test, eo), log);
    }
  });
  return assemble("transfer", names, seeds, crop, cells, p.to_json());
}

}  // namespace hiera
