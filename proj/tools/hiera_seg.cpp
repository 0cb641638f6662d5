// hiera_seg: command-line front end for the hierarchical segmentation toolkit.
//
// Exit codes: 0 ok, 2 input/validation, 3 numerical failure, 4 I/O.

#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hiera/checkpoint.hpp"
#include "hiera/datagen.hpp"
#include "hiera/decode.hpp"
#include "hiera/error.hpp"
#include "hiera/evalkit.hpp"
#include "hiera/experiments.hpp"
#include "hiera/hierarchy.hpp"
#include "hiera/htf.hpp"
#include "hiera/png_writer.hpp"
#include "hiera/training.hpp"
#include "hiera/translu.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace hiera;

namespace {

enum Exit { kOk = 0, kInput = 2, kNumerical = 3, kIo = 4 };

void log(const std::string& msg) { std::fprintf(stderr, "%s\n", msg.c_str()); }

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& file, const std::string& text) {
  write_file_bytes(file, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_json(const fs::path& file, const json& j) { write_text(file, j.dump(2) + "\n"); }

json read_json(const fs::path& file) {
  const auto bytes = read_file_bytes(file);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw InputError(file.string() + ": " + e.what());
  }
}

fs::path bundled(const std::string& name) { return bundled_data_dir() / name; }

std::vector<int> level_classes(const Hierarchy& h) {
  std::vector<int> c;
  for (int l = 0; l < h.num_levels(); ++l) c.push_back(h.num_classes(l));
  return c;
}

// Options shared by the training-style subcommands.
struct TrainFlags {
  int iterations = 2000;
  int batch = 8;
  double lr = 0.02;
  double momentum = 0.9;
  double lr_power = 0.9;
  double clip_norm = 5.0;
  std::string loss = "hsc";
  std::vector<double> lambda;
  double alpha = 1.0;
  std::string path_target = "normalized";

  void add(CLI::App* app) {
    app->add_option("--iterations", iterations, "Optimizer steps")->check(CLI::NonNegativeNumber);
    app->add_option("--batch", batch, "Images per step")->check(CLI::PositiveNumber);
    app->add_option("--lr", lr, "SGD learning rate")->check(CLI::PositiveNumber);
    app->add_option("--momentum", momentum, "SGD momentum")->check(CLI::Range(0.0, 0.999999));
    app->add_option("--lr-power", lr_power, "Poly decay exponent (0 = constant lr)")
        ->check(CLI::NonNegativeNumber);
    app->add_option("--clip-norm", clip_norm, "Global gradient norm cap (0 = off)")
        ->check(CLI::NonNegativeNumber);
    app->add_option("--loss", loss, "ce | hce | hsc")
        ->check(CLI::IsMember({"ce", "hce", "hsc"}));
    app->add_option("--lambda", lambda, "Per-level loss weights")->delimiter(',');
    app->add_option("--alpha", alpha, "Weight of the path consistency term");
    app->add_option("--path-target", path_target, "normalized | raw")
        ->check(CLI::IsMember({"normalized", "raw"}));
  }

  TrainConfig resolve(std::uint64_t seed) const {
    TrainConfig c;
    c.iterations = iterations;
    c.batch = batch;
    c.lr = lr;
    c.momentum = momentum;
    c.lr_power = lr_power;
    c.clip_norm = clip_norm;
    c.loss = parse_loss_mode(loss);
    c.loss_cfg.lambda = lambda;
    c.loss_cfg.alpha = alpha;
    c.loss_cfg.path_target = path_target == "raw" ? PathTarget::kRaw : PathTarget::kNormalized;
    c.seed = seed;
    return c;
  }
};

json report_json(const EvalReport& r) { return r.to_json(); }

ProgressFn progress_logger(const std::string& tag) {
  return [tag](int it, double loss) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "[%s] iter %d loss %.6f", tag.c_str(), it, loss);
    log(buf);
  };
}

// ---- validate-hierarchy ---------------------------------------------------

struct ValidateCmd {
  std::string file;
  std::string out;

  int run() const {
    const Hierarchy h = load_hierarchy(file);
    std::printf("%s\n", describe(h).c_str());
    if (!out.empty()) {
      make_dir(out);
      json cfg;
      cfg["command"] = "validate-hierarchy";
      cfg["hierarchy"] = file;
      write_json(fs::path(out) / "config.json", cfg);
      json s;
      s["command"] = "validate-hierarchy";
      s["summary"] = describe(h);
      s["levels"] = level_classes(h);
      s["paths"] = h.num_paths();
      s["hierarchy_hash"] = h.hash_hex();
      write_json(fs::path(out) / "summary.json", s);
    }
    return kOk;
  }
};

// ---- gen-data ---------------------------------------------------------------

struct GenDataCmd {
  std::string kind = "source";
  std::string hierarchy;
  std::string source_hierarchy;
  std::string split_class = "cropland";
  int images = 16;
  int size = 64;
  int channels = 4;
  int regions = 12;
  double noise = SceneSpec{}.noise;
  std::uint64_t seed = 0;
  std::uint64_t means_seed = 0;
  std::string out = "out";

  int run() const {
    SceneSpec spec;
    spec.height = spec.width = size;
    spec.channels = channels;
    spec.regions = regions;
    spec.noise = noise;
    spec.seed = seed;
    spec.means_seed = means_seed;
    const fs::path src_file = source_hierarchy.empty() ? bundled("mm5b.json") : fs::path(source_hierarchy);
    json cfg;
    cfg["command"] = "gen-data";
    cfg["kind"] = kind;
    cfg["images"] = images;
    cfg["size"] = size;
    cfg["channels"] = channels;
    cfg["regions"] = regions;
    cfg["noise"] = noise;
    cfg["seed"] = seed;
    cfg["means_seed"] = means_seed;
    std::optional<Dataset> ds;
    if (kind == "source") {
      const fs::path hf = hierarchy.empty() ? bundled("mm5b.json") : fs::path(hierarchy);
      cfg["hierarchy"] = hf.string();
      ds.emplace(generate(spec, load_hierarchy(hf), images));
    } else {
      const fs::path hf = hierarchy.empty() ? bundled("crop.json") : fs::path(hierarchy);
      cfg["hierarchy"] = hf.string();
      cfg["source_hierarchy"] = src_file.string();
      cfg["split_class"] = split_class;
      const Hierarchy src = load_hierarchy(src_file);
      const int split = src.num_levels() > 1 ? src.find_class(1, split_class) : -1;
      if (split < 0) throw InputError("gen-data: unknown split class '" + split_class + "'");
      ds.emplace(make_crop_target(spec, src, split, load_hierarchy(hf), images));
    }
    make_dir(out);
    write_json(fs::path(out) / "config.json", cfg);
    save_dataset(out, *ds, seed);
    const json manifest = read_json(fs::path(out) / "manifest.json");
    json s;
    s["command"] = "gen-data";
    s["kind"] = kind;
    s["images"] = ds->size();
    s["hierarchy_hash"] = ds->hierarchy.hash_hex();
    s["nearest_mean_accuracy"] = ds->nearest_mean_accuracy;
    s["checksums"] = manifest["checksums"];
    write_json(fs::path(out) / "summary.json", s);
    log("wrote " + std::to_string(ds->size()) + " images to " + out);
    return kOk;
  }
};

// ---- derive-labels ----------------------------------------------------------

struct DeriveCmd {
  std::string hierarchy;
  std::string labels;
  int level = 0;  // 1-based; 0 = finest
  std::string out = "out";

  int run() const {
    const Hierarchy h = load_hierarchy(hierarchy.empty() ? bundled("mm5b.json") : fs::path(hierarchy));
    const int lv = level == 0 ? h.finest() : level - 1;
    if (lv < 0 || lv >= h.num_levels()) throw InputError("derive-labels: level out of range");
    if (!fs::is_directory(labels)) throw IoError("label directory not found: " + labels);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(labels)) {
      if (e.path().extension() == ".htf") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw InputError("derive-labels: no .htf rasters in " + labels);
    make_dir(out);
    json cfg;
    cfg["command"] = "derive-labels";
    cfg["hierarchy"] = hierarchy.empty() ? bundled("mm5b.json").string() : hierarchy;
    cfg["labels"] = labels;
    cfg["level"] = lv + 1;
    write_json(fs::path(out) / "config.json", cfg);
    for (int l = 0; l <= lv; ++l) make_dir(fs::path(out) / "labels" / ("L" + std::to_string(l + 1)));
    std::uint64_t pixels = 0, valid = 0;
    for (const auto& f : files) {
      int hh = 0, ww = 0;
      auto raster = read_label_raster(f, hh, ww);
      LevelLabels lab(h.num_levels(), 1, hh, ww);
      lab.set_level(lv, std::move(raster));
      const LevelLabels full = derive_coarse_labels(h, lab, lv);
      for (int l = 0; l <= lv; ++l) {
        write_label_raster(fs::path(out) / "labels" / ("L" + std::to_string(l + 1)) / f.filename(),
                           full.level(l), hh, ww);
      }
      std::vector<int> tuple(lv + 1);
      for (std::size_t p = 0; p < full.pixels(); ++p) {
        if (full.level(lv)[p] == full.ignore()) continue;
        for (int l = 0; l <= lv; ++l) tuple[l] = full.level(l)[p];
        ++pixels;
        bool ok = true;
        for (int l = 1; l <= lv; ++l) ok = ok && h.parent(l, tuple[l]) == tuple[l - 1];
        valid += ok;
      }
    }
    json s;
    s["command"] = "derive-labels";
    s["files"] = files.size();
    s["pixels"] = pixels;
    s["path_validity"] = pixels == 0 ? 1.0 : static_cast<double>(valid) / static_cast<double>(pixels);
    write_json(fs::path(out) / "summary.json", s);
    return kOk;
  }
};

// ---- model loading ----------------------------------------------------------

// A trained model behind one forward function, plus its output hierarchy.
struct LoadedModel {
  std::optional<Hierarchy> hierarchy;
  std::optional<ToySegNet> net;
  std::optional<TransLuModel> translu;

  std::vector<Tensor> forward(const Tensor& x) const {
    return net ? net->forward(x) : translu->forward(x).logits;
  }
};

LoadedModel load_model(const fs::path& dir) {
  const CheckpointInfo info = read_checkpoint_info(dir);
  LoadedModel m;
  m.hierarchy.emplace(info.hierarchy);
  const std::string kind = info.config.value("kind", "segnet");
  if (kind == "segnet") {
    m.net.emplace(segnet_config_from_json(info.config.at("model")), 0);
    load_checkpoint(dir, m.net->params(), info.hierarchy);
    return m;
  }
  if (kind != "translu") throw InputError("checkpoint: unknown model kind '" + kind + "'");
  const Hierarchy h2 = parse_hierarchy(info.config.at("branch2_hierarchy").get<std::string>());
  ToySegNet b2(segnet_config_from_json(info.config.at("branch2_model")), 0);
  TransLuOptions opts;
  opts.cdks = info.config.at("cdks").get<bool>();
  opts.cdsa = info.config.at("cdsa").get<bool>();
  opts.cdsa_residual = info.config.value("cdsa_residual", false);
  opts.links = parse_cdsa_mapping(info.config.at("mapping").dump(), h2, info.hierarchy);
  m.translu.emplace(b2, segnet_config_from_json(info.config.at("model")), opts, 0);
  NamedParams all = m.translu->trainable_params();
  for (auto& [name, t] : b2.params()) all.emplace_back("branch2." + name, t);
  load_checkpoint(dir, all, info.hierarchy);
  return m;
}

// ---- train ------------------------------------------------------------------

struct TrainCmd {
  std::string data;
  std::string test;
  std::string head = "bhccm";
  std::string fusion = "bidirectional";
  std::vector<int> widths = {16, 32, 64};
  int dec_channels = 32;
  TrainFlags flags;
  std::uint64_t seed = 0;
  std::string out = "out";
  CLI::Option* fusion_opt = nullptr;
  CLI::Option* loss_opt = nullptr;

  int run() const {
    if (head == "flat") {
      if (fusion_opt && fusion_opt->count() > 0) {
        throw InputError("train: --fusion does not apply to --head flat");
      }
      if (loss_opt && loss_opt->count() > 0 && flags.loss != "ce") {
        throw InputError("train: --head flat trains with --loss ce only");
      }
    } else if (flags.loss == "ce") {
      throw InputError("train: --loss ce needs --head flat");
    }
    const Dataset train = load_dataset(data);
    const Hierarchy& h = train.hierarchy;
    SegNetConfig mc;
    mc.in_channels = train.channels;
    mc.widths = widths;
    mc.dec_channels = dec_channels;
    mc.head = head == "flat" ? HeadKind::kFlat : HeadKind::kBhccm;
    mc.level_classes = level_classes(h);
    mc.fusion = head == "flat" ? FusionMode::kNone : parse_fusion_mode(fusion);
    TrainFlags f = flags;
    if (head == "flat") f.loss = "ce";
    const TrainConfig tc = f.resolve(seed);

    json cfg;
    cfg["command"] = "train";
    cfg["data"] = data;
    cfg["test"] = test;
    cfg["seed"] = seed;
    cfg["model"] = segnet_config_json(mc);
    cfg["train"] = tc.to_json();
    make_dir(out);
    write_json(fs::path(out) / "config.json", cfg);

    ToySegNet net(mc, derive_seed(seed, "model"));
    const TrainLog tl = train_segnet(net, train, tc, progress_logger("train"));
    json ck;
    ck["kind"] = "segnet";
    ck["model"] = segnet_config_json(mc);
    ck["train"] = tc.to_json();
    save_checkpoint(fs::path(out) / "checkpoint", net.params(), h, ck);
    write_json(fs::path(out) / "train_log.json", json{{"loss", tl.loss}});

    json s;
    s["command"] = "train";
    s["iterations"] = tc.iterations;
    s["final_loss"] = tl.loss.empty() ? json(nullptr) : json(tl.loss.back());
    if (!test.empty()) {
      const Dataset te = load_dataset(test);
      if (te.hierarchy.hash() != h.hash()) throw InputError("train: test set uses another hierarchy");
      const EvalReport r = evaluate(net, te, EvalOptions{});
      s["eval"] = report_json(r);
      std::printf("%s", r.to_table().c_str());
    }
    write_json(fs::path(out) / "summary.json", s);
    return kOk;
  }
};

// ---- transfer ---------------------------------------------------------------

struct TransferCmd {
  std::string branch2;
  std::string data;
  std::string test;
  std::string mapping;
  std::string cdks = "on";
  std::string cdsa = "on";
  std::string cdsa_fuse = "residual";
  double gate_lr_mult = TrainConfig{}.gate_lr_mult;
  std::string init = "pretrained";
  TrainFlags flags;
  std::uint64_t seed = 0;
  std::string out = "out";

  int run() const {
    if (flags.loss == "ce") throw InputError("transfer: Branch 1 has a hierarchical head; use hce or hsc");
    const bool use_cdks = cdks == "on", use_cdsa = cdsa == "on";
    const bool cdsa_residual = use_cdsa && cdsa_fuse == "residual";
    const CheckpointInfo b2info = read_checkpoint_info(branch2);
    if (b2info.config.value("kind", "") != "segnet") {
      throw InputError("transfer: Branch 2 checkpoint must hold a single segmentation net");
    }
    const SegNetConfig b2cfg = segnet_config_from_json(b2info.config.at("model"));
    if (b2cfg.head != HeadKind::kBhccm) throw InputError("transfer: Branch 2 needs a hierarchical head");
    ToySegNet b2(b2cfg, 0);
    load_checkpoint(branch2, b2.params(), b2info.hierarchy);

    const Dataset train = load_dataset(data);
    const Hierarchy& h1 = train.hierarchy;
    const fs::path mfile = mapping.empty() ? bundled("crop_mapping.json") : fs::path(mapping);
    TransLuOptions opts;
    opts.cdks = use_cdks;
    opts.cdsa = use_cdsa;
    opts.cdsa_residual = cdsa_residual;
    opts.links = load_cdsa_mapping(mfile, b2info.hierarchy, h1);
    SegNetConfig b1cfg = b2cfg;
    b1cfg.level_classes = level_classes(h1);
    if (train.channels != b2cfg.in_channels) throw InputError("transfer: channel count differs from Branch 2");
    TrainConfig tc = flags.resolve(seed);
    tc.gate_lr_mult = gate_lr_mult;

    json cfg;
    cfg["command"] = "transfer";
    cfg["branch2"] = branch2;
    cfg["data"] = data;
    cfg["test"] = test;
    cfg["mapping"] = mfile.string();
    cfg["cdks"] = cdks;
    cfg["cdsa"] = cdsa;
    cfg["cdsa_residual"] = cdsa_residual;
    cfg["init"] = init;
    cfg["seed"] = seed;
    cfg["train"] = tc.to_json();
    make_dir(out);
    write_json(fs::path(out) / "config.json", cfg);

    TransLuModel model(b2, b1cfg, opts, derive_seed(seed, "transfer"));
    if (init == "pretrained") copy_matching_params(b2.trunk_params(), model.branch1().trunk_params());
    const TrainLog tl = transfer_train(model, train, tc, progress_logger("transfer"));

    json mapping_json = json::array();
    for (const auto& l : opts.links) {
      mapping_json.push_back({{"node", l.node},
                              {"branch2_level", b2info.hierarchy.level(l.branch2_level).name},
                              {"branch2_class", b2info.hierarchy.class_name(l.branch2_level, l.branch2_class)},
                              {"branch1_level", h1.level(l.branch1_level).name},
                              {"branch1_class", h1.class_name(l.branch1_level, l.branch1_class)}});
    }
    json ck;
    ck["kind"] = "translu";
    ck["model"] = segnet_config_json(b1cfg);
    ck["branch2_model"] = segnet_config_json(b2cfg);
    ck["branch2_hierarchy"] = serialize_hierarchy(b2info.hierarchy);
    ck["cdks"] = use_cdks;
    ck["cdsa"] = use_cdsa;
    ck["cdsa_residual"] = cdsa_residual;
    ck["mapping"] = mapping_json;
    NamedParams all = model.trainable_params();
    for (auto& [name, t] : b2.params()) all.emplace_back("branch2." + name, t);
    save_checkpoint(fs::path(out) / "checkpoint", all, h1, ck);
    write_json(fs::path(out) / "train_log.json", json{{"loss", tl.loss}});

    json s;
    s["command"] = "transfer";
    s["cdks"] = cdks;
    s["cdsa"] = cdsa;
    s["iterations"] = tc.iterations;
    s["final_loss"] = tl.loss.empty() ? json(nullptr) : json(tl.loss.back());
    if (!test.empty()) {
      const Dataset te = load_dataset(test);
      if (te.hierarchy.hash() != h1.hash()) throw InputError("transfer: test set uses another hierarchy");
      const EvalReport r = evaluate(model, te, EvalOptions{});
      s["eval"] = report_json(r);
      std::printf("%s", r.to_table().c_str());
    }
    write_json(fs::path(out) / "summary.json", s);
    return kOk;
  }
};

// ---- decode -----------------------------------------------------------------

// Reads logits/L{k}/NNNN.htf for every level directory present.
std::vector<std::vector<Tensor>> read_logits(const fs::path& dir, const Hierarchy& h,
                                             std::vector<std::string>& names) {
  const fs::path root = fs::is_directory(dir / "logits") ? dir / "logits" : dir;
  std::vector<int> present;
  for (int l = 0; l < h.num_levels(); ++l) {
    if (fs::is_directory(root / ("L" + std::to_string(l + 1)))) present.push_back(l);
  }
  if (present.empty()) throw InputError("decode: no logits/L{k} directories under " + dir.string());
  const bool flat = present.size() == 1 && present[0] == h.finest();
  if (!flat && static_cast<int>(present.size()) != h.num_levels()) {
    throw InputError("decode: logits must cover every level, or only the finest");
  }
  names.clear();
  for (const auto& e : fs::directory_iterator(root / ("L" + std::to_string(present[0] + 1)))) {
    if (e.path().extension() == ".htf") names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw InputError("decode: no logits files found");
  std::vector<std::vector<Tensor>> out;
  for (const auto& n : names) {
    std::vector<Tensor> per;
    for (int l : present) {
      Tensor t = read_htf(root / ("L" + std::to_string(l + 1)) / n);
      if (t.ndim() == 3) t = Tensor::from_data({1, t.dim(0), t.dim(1), t.dim(2)},
                                                 std::vector<double>(t.data().begin(), t.data().end()));
      if (t.ndim() != 4 || t.dim(1) != h.num_classes(l)) {
        throw InputError("decode: logits " + n + " at level " + std::to_string(l + 1) +
                         " do not match the hierarchy");
      }
      per.push_back(t);
    }
    out.push_back(std::move(per));
  }
  return out;
}

struct DecodeCmd {
  std::string logits;
  std::string model;
  std::string data;
  std::string hierarchy;
  std::string mode = "argmax";
  std::string scores = "sigmoid";
  bool png = false;
  std::string out = "out";

  int run() const {
    EvalOptions eo;
    eo.mode = parse_decode_mode(mode);
    eo.scores = parse_score_mode(scores);
    json cfg;
    cfg["command"] = "decode";
    cfg["logits"] = logits;
    cfg["model"] = model;
    cfg["data"] = data;
    cfg["mode"] = mode;
    cfg["scores"] = scores;
    cfg["png"] = png;
    make_dir(out);
    write_json(fs::path(out) / "config.json", cfg);

    std::optional<Hierarchy> h;
    std::vector<std::string> names;
    std::vector<std::vector<Tensor>> all;
    if (!model.empty()) {
      if (data.empty()) throw InputError("decode: --model needs --data");
      const LoadedModel m = load_model(model);
      h.emplace(*m.hierarchy);
      const Dataset ds = load_dataset(data);
      if (ds.hierarchy.hash() != h->hash()) throw InputError("decode: dataset uses another hierarchy");
      for (int i = 0; i < ds.size(); ++i) {
        auto z = m.forward(batch_images(ds, {i}));
        const std::string name = index_name(i) + ".htf";
        for (std::size_t k = 0; k < z.size(); ++k) {
          const int l = z.size() == 1 ? h->finest() : static_cast<int>(k);
          const fs::path d = fs::path(out) / "logits" / ("L" + std::to_string(l + 1));
          make_dir(d);
          write_htf(d / name, z[k].detach());
        }
        names.push_back(name);
        all.push_back(std::move(z));
      }
    } else {
      fs::path hf = hierarchy.empty() ? fs::path(logits) / "hierarchy.json" : fs::path(hierarchy);
      if (hierarchy.empty() && !fs::exists(hf)) hf = bundled("mm5b.json");
      h.emplace(load_hierarchy(hf));
      all = read_logits(logits, *h, names);
    }
    std::uint64_t counted = 0;
    double consistent = 0.0;
    for (int l = 0; l < h->num_levels(); ++l) make_dir(fs::path(out) / "pred" / ("L" + std::to_string(l + 1)));
    for (std::size_t i = 0; i < all.size(); ++i) {
      const LevelLabels pred = predict_labels(all[i], *h, eo);
      const double rate = consistency_rate(pred, *h);
      counted += pred.pixels();
      consistent += rate * static_cast<double>(pred.pixels());
      for (int l = 0; l < h->num_levels(); ++l) {
        const fs::path d = fs::path(out) / "pred" / ("L" + std::to_string(l + 1));
        write_label_raster(d / names[i], pred.level(l), pred.height(), pred.width());
        if (png) {
          fs::path p = d / names[i];
          p.replace_extension(".png");
          write_indexed_png(p, pred.level(l), pred.height(), pred.width(), h->level(l).colors,
                            pred.ignore());
        }
      }
    }
    save_hierarchy(*h, fs::path(out) / "hierarchy.json");
    json s;
    s["command"] = "decode";
    s["mode"] = mode;
    s["images"] = all.size();
    s["consistency_rate"] = counted == 0 ? 1.0 : consistent / static_cast<double>(counted);
    write_json(fs::path(out) / "summary.json", s);
    return kOk;
  }
};

// ---- eval -------------------------------------------------------------------

struct EvalCmd {
  std::string pred;
  std::string data;
  std::string out = "out";

  int run() const {
    const Dataset truth = load_dataset(data);
    const Hierarchy& h = truth.hierarchy;
    const fs::path root = fs::is_directory(fs::path(pred) / "pred") ? fs::path(pred) / "pred" : fs::path(pred);
    json cfg;
    cfg["command"] = "eval";
    cfg["pred"] = pred;
    cfg["data"] = data;
    make_dir(out);
    write_json(fs::path(out) / "config.json", cfg);

    // Levels with a prediction directory are scored; each must hold exactly
    // one raster per dataset image.
    std::vector<int> levels;
    for (int l = 0; l < h.num_levels(); ++l) {
      const fs::path d = root / ("L" + std::to_string(l + 1));
      if (!fs::is_directory(d)) continue;
      int count = 0;
      for (const auto& e : fs::directory_iterator(d)) count += e.path().extension() == ".htf";
      if (count != truth.size()) {
        throw InputError("eval: " + d.string() + " holds " + std::to_string(count) +
                         " predictions for " + std::to_string(truth.size()) + " images");
      }
      levels.push_back(l);
    }
    if (levels.empty()) throw InputError("eval: no L{k} prediction directories under " + root.string());

    HierarchicalEvaluator ev(h);
    for (int i = 0; i < truth.size(); ++i) {
      const std::string name = index_name(i) + ".htf";
      LevelLabels p(h.num_levels(), 1, truth.height, truth.width);
      for (int l : levels) {
        const fs::path f = root / ("L" + std::to_string(l + 1)) / name;
        if (!fs::exists(f)) throw InputError("eval: missing prediction " + f.string());
        int hh = 0, ww = 0;
        auto r = read_label_raster(f, hh, ww);
        if (hh != truth.height || ww != truth.width) {
          throw InputError("eval: prediction " + f.string() + " has the wrong size");
        }
        p.set_level(l, std::move(r));
      }
      ev.accumulate(p, truth.labels[i]);
    }
    const EvalReport r = ev.report();
    const std::string table = r.to_table();
    std::printf("%s", table.c_str());
    write_json(fs::path(out) / "report.json", r.to_json());
    write_text(fs::path(out) / "report.txt", table);
    json s = r.to_json();
    s["command"] = "eval";
    write_json(fs::path(out) / "summary.json", s);
    return kOk;
  }
};

// ---- ablate -----------------------------------------------------------------

struct AblateCmd {
  std::string suite = "bhccm";
  int seeds = 5;
  std::string profile = "quick";
  int iterations = -1;
  std::string hierarchy;
  std::string crop_hierarchy;
  std::string mapping;
  std::string cdsa_fuse = "residual";
  std::string out = "out";

  int run() const {
    std::vector<std::uint64_t> seed_list;
    for (int s = 1; s <= seeds; ++s) seed_list.push_back(static_cast<std::uint64_t>(s));
    const int threads = worker_threads();
    const Hierarchy h = load_hierarchy(hierarchy.empty() ? bundled("mm5b.json") : fs::path(hierarchy));
    json cfg;
    cfg["command"] = "ablate";
    cfg["suite"] = suite;
    cfg["seeds"] = seed_list;
    cfg["profile"] = profile;
    SuiteResult r;
    if (suite == "transfer") {
      TransferProfile p = profile == "desk" ? desk_transfer_profile() : quick_transfer_profile();
      if (iterations >= 0) p.transfer.iterations = iterations;
      p.cdsa_residual = cdsa_fuse == "residual";
      const Hierarchy crop =
          load_hierarchy(crop_hierarchy.empty() ? bundled("crop.json") : fs::path(crop_hierarchy));
      const auto links =
          load_cdsa_mapping(mapping.empty() ? bundled("crop_mapping.json") : fs::path(mapping), h, crop);
      cfg["resolved"] = p.to_json();
      make_dir(out);
      write_json(fs::path(out) / "config.json", cfg);
      r = run_transfer_suite(p, h, crop, links, seed_list, threads);
    } else {
      SourceProfile p = profile == "desk" ? desk_profile() : quick_profile();
      if (iterations >= 0) p.train.iterations = iterations;
      cfg["resolved"] = p.to_json();
      make_dir(out);
      write_json(fs::path(out) / "config.json", cfg);
      r = suite == "bhccm" ? run_bhccm_suite(p, h, seed_list, threads)
                           : run_jsps_suite(p, h, seed_list, threads);
    }
    const std::string table = r.to_table();
    std::printf("%s", table.c_str());
    write_text(fs::path(out) / "table.txt", table);
    json s = r.to_json();
    s["command"] = "ablate";
    write_json(fs::path(out) / "summary.json", s);
    return kOk;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical segmentation toolkit"};
  app.require_subcommand(1);
  std::function<int()> action;

  ValidateCmd validate;
  auto* v = app.add_subcommand("validate-hierarchy", "Check a hierarchy document");
  v->add_option("file", validate.file, "Hierarchy JSON")->required();
  v->add_option("--out", validate.out, "Optional output directory for summary.json");
  v->callback([&] { action = [&] { return validate.run(); }; });

  GenDataCmd gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  g->add_option("--kind", gen.kind, "source | crop")->check(CLI::IsMember({"source", "crop"}));
  g->add_option("--hierarchy", gen.hierarchy, "Label tree of the generated data");
  g->add_option("--source-hierarchy", gen.source_hierarchy, "Source tree for --kind crop");
  g->add_option("--split-class", gen.split_class, "Source level-2 class split into crops");
  g->add_option("--images", gen.images, "Number of images")->check(CLI::PositiveNumber);
  g->add_option("--size", gen.size, "Image height and width")->check(CLI::PositiveNumber);
  g->add_option("--channels", gen.channels, "Spectral bands")->check(CLI::PositiveNumber);
  g->add_option("--regions", gen.regions, "Voronoi regions per image")->check(CLI::PositiveNumber);
  g->add_option("--noise", gen.noise, "Pixel noise std")->check(CLI::NonNegativeNumber);
  g->add_option("--seed", gen.seed, "Seed for the image draws");
  g->add_option("--means-seed", gen.means_seed, "Seed for the class spectra; keep equal across splits");
  g->add_option("--out", gen.out, "Output directory");
  g->callback([&] { action = [&] { return gen.run(); }; });

  DeriveCmd derive;
  auto* d = app.add_subcommand("derive-labels", "Fill coarse levels from fine label rasters");
  d->add_option("--hierarchy", derive.hierarchy, "Hierarchy JSON");
  d->add_option("--labels", derive.labels, "Directory of fine .htf rasters")->required();
  d->add_option("--level", derive.level, "1-based level of the input rasters (default finest)");
  d->add_option("--out", derive.out, "Output directory");
  d->callback([&] { action = [&] { return derive.run(); }; });

  TrainCmd train;
  auto* t = app.add_subcommand("train", "Train a segmentation net on a dataset");
  t->add_option("--data", train.data, "Training dataset directory")->required();
  t->add_option("--test", train.test, "Optional held-out dataset");
  t->add_option("--head", train.head, "flat | bhccm")->check(CLI::IsMember({"flat", "bhccm"}));
  train.fusion_opt = t->add_option("--fusion", train.fusion, "none | c2f | f2c | bidirectional")
                         ->check(CLI::IsMember({"none", "c2f", "f2c", "bidirectional"}));
  t->add_option("--widths", train.widths, "Encoder widths")->delimiter(',');
  t->add_option("--dec-channels", train.dec_channels, "Decoder width")->check(CLI::PositiveNumber);
  train.flags.add(t);
  train.loss_opt = t->get_option("--loss");
  t->add_option("--seed", train.seed, "Random seed");
  t->add_option("--out", train.out, "Output directory");
  t->callback([&] { action = [&] { return train.run(); }; });

  TransferCmd transfer;
  auto* x = app.add_subcommand("transfer", "Train a TransLU Branch 1 against a frozen Branch 2");
  x->add_option("--branch2", transfer.branch2, "Branch 2 checkpoint directory")->required();
  x->add_option("--data", transfer.data, "Target training dataset")->required();
  x->add_option("--test", transfer.test, "Optional held-out target dataset");
  x->add_option("--mapping", transfer.mapping, "Cross-domain mapping JSON");
  x->add_option("--cdks", transfer.cdks, "on | off")->check(CLI::IsMember({"on", "off"}));
  x->add_option("--cdsa", transfer.cdsa, "on | off")->check(CLI::IsMember({"on", "off"}));
  x->add_option("--cdsa-fuse", transfer.cdsa_fuse, "residual: Z * (1 + F) | product: Z * F")
      ->check(CLI::IsMember({"residual", "product"}));
  x->add_option("--gate-lr-mult", transfer.gate_lr_mult, "Step scale for the interaction scalars")
      ->check(CLI::NonNegativeNumber);
  x->add_option("--init", transfer.init, "pretrained | scratch")
      ->check(CLI::IsMember({"pretrained", "scratch"}));
  transfer.flags.iterations = 300;
  transfer.flags.batch = 4;
  transfer.flags.add(x);
  x->add_option("--seed", transfer.seed, "Random seed");
  x->add_option("--out", transfer.out, "Output directory");
  x->callback([&] { action = [&] { return transfer.run(); }; });

  DecodeCmd decode_cmd;
  auto* c = app.add_subcommand("decode", "Turn per-level logits into label maps");
  auto* lo = c->add_option("--logits", decode_cmd.logits, "Directory with logits/L{k}/*.htf");
  auto* mo = c->add_option("--model", decode_cmd.model, "Checkpoint to run on --data");
  lo->excludes(mo);
  c->add_option("--data", decode_cmd.data, "Dataset for --model");
  c->add_option("--hierarchy", decode_cmd.hierarchy, "Hierarchy JSON for --logits");
  c->add_option("--mode", decode_cmd.mode, "argmax | jsps")->check(CLI::IsMember({"argmax", "jsps"}));
  c->add_option("--scores", decode_cmd.scores, "sigmoid | softmax")
      ->check(CLI::IsMember({"sigmoid", "softmax"}));
  c->add_flag("--png", decode_cmd.png, "Also write palette PNGs");
  c->add_option("--out", decode_cmd.out, "Output directory");
  c->callback([&] {
    action = [&] {
      if (decode_cmd.logits.empty() && decode_cmd.model.empty()) {
        throw InputError("decode: one of --logits or --model is required");
      }
      return decode_cmd.run();
    };
  });

  EvalCmd eval_cmd;
  auto* e = app.add_subcommand("eval", "Score predictions against a dataset");
  e->add_option("--pred", eval_cmd.pred, "Decode output directory")->required();
  e->add_option("--data", eval_cmd.data, "Dataset with ground truth")->required();
  e->add_option("--out", eval_cmd.out, "Output directory");
  e->callback([&] { action = [&] { return eval_cmd.run(); }; });

  AblateCmd ablate;
  auto* a = app.add_subcommand("ablate", "Run an ablation suite");
  a->add_option("--suite", ablate.suite, "bhccm | transfer | jsps")
      ->check(CLI::IsMember({"bhccm", "transfer", "jsps"}));
  a->add_option("--seeds", ablate.seeds, "Seeds 1..N")->check(CLI::PositiveNumber);
  a->add_option("--profile", ablate.profile, "quick | desk")->check(CLI::IsMember({"quick", "desk"}));
  a->add_option("--iterations", ablate.iterations, "Override the training budget")
      ->check(CLI::NonNegativeNumber);
  a->add_option("--hierarchy", ablate.hierarchy, "Source hierarchy");
  a->add_option("--crop-hierarchy", ablate.crop_hierarchy, "Target hierarchy (transfer)");
  a->add_option("--mapping", ablate.mapping, "Cross-domain mapping (transfer)");
  a->add_option("--cdsa-fuse", ablate.cdsa_fuse, "residual | product (transfer)")
      ->check(CLI::IsMember({"residual", "product"}));
  a->add_option("--out", ablate.out, "Output directory");
  a->callback([&] { action = [&] { return ablate.run(); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kInput;
  }
  try {
    return action();
  } catch (const InputError& err) {
    log(std::string("error: ") + err.what());
    return kInput;
  } catch (const NumericalError& err) {
    log(std::string("numerical error: ") + err.what());
    return kNumerical;
  } catch (const IoError& err) {
    log(std::string("io error: ") + err.what());
    return kIo;
  }
}
