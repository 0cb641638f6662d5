#include "hiera/evalkit.hpp"

#include <cstdio>
#include <sstream>

#include "hiera/error.hpp"

namespace hiera {

ConfusionMatrix::ConfusionMatrix(int classes)
    : classes_(classes), counts_(static_cast<std::size_t>(classes) * classes, 0) {}

void ConfusionMatrix::accumulate(std::span<const int> pred, std::span<const int> truth,
                                 int ignore) {
  if (pred.size() != truth.size()) {
    throw InputError("confusion: prediction has " + std::to_string(pred.size()) +
                     " pixels, truth has " + std::to_string(truth.size()));
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int t = truth[i];
    if (t == ignore) {
      ++ignored_;
      continue;
    }
    const int p = pred[i];
    if (t < 0 || t >= classes_ || p < 0 || p >= classes_) {
      throw InputError("confusion: class index out of range at pixel " + std::to_string(i));
    }
    ++counts_[static_cast<std::size_t>(t) * classes_ + p];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw InputError("confusion: cannot merge different sizes");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  ignored_ += other.ignored_;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t s = 0;
  for (auto v : counts_) s += v;
  return s;
}

std::vector<std::optional<double>> ConfusionMatrix::per_class_iou() const {
  std::vector<std::optional<double>> out(classes_);
  for (int c = 0; c < classes_; ++c) {
    std::uint64_t row = 0, col = 0;
    for (int k = 0; k < classes_; ++k) {
      row += at(c, k);
      col += at(k, c);
    }
    const std::uint64_t tp = at(c, c);
    const std::uint64_t uni = row + col - tp;
    if (uni > 0) out[c] = static_cast<double>(tp) / static_cast<double>(uni);
  }
  return out;
}

std::vector<std::optional<double>> ConfusionMatrix::per_class_acc() const {
  std::vector<std::optional<double>> out(classes_);
  for (int c = 0; c < classes_; ++c) {
    std::uint64_t row = 0;
    for (int k = 0; k < classes_; ++k) row += at(c, k);
    if (row > 0) out[c] = static_cast<double>(at(c, c)) / static_cast<double>(row);
  }
  return out;
}

namespace {

double mean_present(const std::vector<std::optional<double>>& v) {
  double s = 0.0;
  int n = 0;
  for (const auto& x : v) {
    if (x) {
      s += *x;
      ++n;
    }
  }
  return s / n;
}

}  // namespace

double ConfusionMatrix::miou() const {
  if (total() == 0) throw InputError("confusion: no evaluated pixels");
  return mean_present(per_class_iou());
}

double ConfusionMatrix::macc() const {
  if (total() == 0) throw InputError("confusion: no evaluated pixels");
  return mean_present(per_class_acc());
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["pixels"] = pixels;
  j["levels"] = nlohmann::ordered_json::array();
  for (const auto& lv : levels) {
    nlohmann::ordered_json l;
    l["name"] = lv.name;
    l["miou"] = lv.miou;
    l["macc"] = lv.macc;
    nlohmann::ordered_json iou = nlohmann::ordered_json::object();
    for (std::size_t c = 0; c < lv.iou.size(); ++c) {
      iou[lv.class_names[c]] = lv.iou[c] ? nlohmann::ordered_json(*lv.iou[c]) : nullptr;
    }
    l["iou"] = iou;
    j["levels"].push_back(l);
  }
  j["consistency_rate"] = consistency_rate ? nlohmann::ordered_json(*consistency_rate) : nullptr;
  return j;
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  char buf[64];
  os << "metric ";
  for (const auto& lv : levels) {
    std::snprintf(buf, sizeof buf, "%9s", lv.name.c_str());
    os << buf;
  }
  os << '\n';
  auto row = [&](const char* name, auto get) {
    std::snprintf(buf, sizeof buf, "%-7s", name);
    os << buf;
    for (const auto& lv : levels) {
      std::snprintf(buf, sizeof buf, "%9.2f", 100.0 * get(lv));
      os << buf;
    }
    os << '\n';
  };
  row("mIoU", [](const LevelMetrics& m) { return m.miou; });
  row("mAcc", [](const LevelMetrics& m) { return m.macc; });
  if (consistency_rate) {
    std::snprintf(buf, sizeof buf, "consistency %.6f\n", *consistency_rate);
    os << buf;
  }
  return os.str();
}

HierarchicalEvaluator::HierarchicalEvaluator(const Hierarchy& h)
    : h_(&h), seen_(h.num_levels(), false) {
  for (int l = 0; l < h.num_levels(); ++l) cms_.emplace_back(h.num_classes(l));
}

void HierarchicalEvaluator::accumulate(const LevelLabels& pred, const LevelLabels& truth) {
  if (pred.pixels() != truth.pixels() || pred.height() != truth.height() ||
      pred.width() != truth.width()) {
    throw InputError("eval: prediction and truth rasters differ in shape");
  }
  const int n = h_->num_levels();
  if (pred.num_levels() != n || truth.num_levels() != n) {
    throw InputError("eval: label level count does not match hierarchy");
  }
  bool all = true;
  for (int l = 0; l < n; ++l) {
    if (pred.has(l) && truth.has(l)) {
      cms_[l].accumulate(pred.level(l), truth.level(l), truth.ignore());
      seen_[l] = true;
    } else {
      all = false;
    }
  }
  all_levels_ = all_levels_ && all;
  if (!all) return;
  std::vector<int> tuple(n);
  for (std::size_t p = 0; p < pred.pixels(); ++p) {
    bool ignored = false;
    for (int l = 0; l < n; ++l) {
      tuple[l] = pred.level(l)[p];
      ignored = ignored || truth.level(l)[p] == truth.ignore();
    }
    if (ignored) continue;
    ++counted_;
    if (h_->path_index(tuple) >= 0) ++consistent_;
  }
}

void HierarchicalEvaluator::merge(const HierarchicalEvaluator& other) {
  for (std::size_t l = 0; l < cms_.size(); ++l) {
    cms_[l].merge(other.cms_[l]);
    seen_[l] = seen_[l] || other.seen_[l];
  }
  counted_ += other.counted_;
  consistent_ += other.consistent_;
  all_levels_ = all_levels_ && other.all_levels_;
}

EvalReport HierarchicalEvaluator::report() const {
  EvalReport r;
  for (int l = 0; l < h_->num_levels(); ++l) {
    if (!seen_[l] || cms_[l].total() == 0) continue;
    LevelMetrics m;
    m.name = h_->level(l).name;
    m.miou = cms_[l].miou();
    m.macc = cms_[l].macc();
    m.class_names = h_->level(l).classes;
    m.iou = cms_[l].per_class_iou();
    r.levels.push_back(std::move(m));
    r.pixels = std::max<std::uint64_t>(r.pixels, cms_[l].total());
  }
  if (r.levels.empty()) throw InputError("eval: no evaluated pixels");
  if (all_levels_) {
    r.consistency_rate = counted_ == 0 ? 1.0
                                       : static_cast<double>(consistent_) /
                                             static_cast<double>(counted_);
  }
  return r;
}

}  // namespace hiera
