#include "hiera/decode.hpp"

#include <cmath>

#include "hiera/error.hpp"

namespace hiera {

DecodeMode parse_decode_mode(std::string_view s) {
  if (s == "argmax") return DecodeMode::kArgmax;
  if (s == "jsps") return DecodeMode::kJsps;
  throw InputError("unknown decode mode '" + std::string(s) + "' (expected argmax|jsps)");
}

ScoreMode parse_score_mode(std::string_view s) {
  if (s == "sigmoid") return ScoreMode::kSigmoid;
  if (s == "softmax") return ScoreMode::kSoftmax;
  throw InputError("unknown score mode '" + std::string(s) + "' (expected sigmoid|softmax)");
}

std::string to_string(DecodeMode m) { return m == DecodeMode::kArgmax ? "argmax" : "jsps"; }
std::string to_string(ScoreMode m) { return m == ScoreMode::kSigmoid ? "sigmoid" : "softmax"; }

namespace {

struct Geometry {
  int batch, height, width;
  std::size_t hw() const { return static_cast<std::size_t>(height) * width; }
};

Geometry check_logits(const std::vector<Tensor>& logits) {
  if (logits.empty()) throw InputError("decode: no logits");
  const Tensor& f = logits.front();
  if (f.ndim() != 4) throw InputError("decode: logits must be [B,C,H,W], got " + shape_str(f.shape()));
  for (const auto& t : logits) {
    if (t.ndim() != 4 || t.dim(0) != f.dim(0) || t.dim(2) != f.dim(2) || t.dim(3) != f.dim(3)) {
      throw InputError("decode: level logits disagree in shape: " + shape_str(f.shape()) +
                       " vs " + shape_str(t.shape()));
    }
  }
  return {f.dim(0), f.dim(2), f.dim(3)};
}

void check_against(const std::vector<Tensor>& logits, const Hierarchy& h) {
  if (static_cast<int>(logits.size()) != h.num_levels()) {
    throw InputError("decode: " + std::to_string(logits.size()) + " logit levels for a " +
                     std::to_string(h.num_levels()) + "-level hierarchy");
  }
  for (int l = 0; l < h.num_levels(); ++l) {
    if (logits[l].dim(1) != h.num_classes(l)) {
      throw InputError("decode: level " + h.level(l).name + " has " +
                       std::to_string(logits[l].dim(1)) + " channels, hierarchy has " +
                       std::to_string(h.num_classes(l)) + " classes");
    }
  }
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Per-level class scores laid out [pixel][class].
std::vector<double> level_scores(const Tensor& t, const Geometry& g, ScoreMode mode) {
  const int c = t.dim(1);
  const std::size_t hw = g.hw();
  const auto d = t.data();
  std::vector<double> out(static_cast<std::size_t>(g.batch) * hw * c);
  for (int b = 0; b < g.batch; ++b) {
    for (std::size_t i = 0; i < hw; ++i) {
      double* o = out.data() + (b * hw + i) * c;
      for (int k = 0; k < c; ++k) o[k] = d[(static_cast<std::size_t>(b) * c + k) * hw + i];
      if (mode == ScoreMode::kSigmoid) {
        for (int k = 0; k < c; ++k) o[k] = sigmoid(o[k]);
      } else {
        double mx = o[0];
        for (int k = 1; k < c; ++k) mx = std::max(mx, o[k]);
        double total = 0.0;
        for (int k = 0; k < c; ++k) {
          o[k] = std::exp(o[k] - mx);
          total += o[k];
        }
        for (int k = 0; k < c; ++k) o[k] /= total;
      }
    }
  }
  return out;
}

}  // namespace

LevelLabels argmax_per_level(const std::vector<Tensor>& logits, int ignore) {
  const Geometry g = check_logits(logits);
  const std::size_t hw = g.hw();
  LevelLabels out(static_cast<int>(logits.size()), g.batch, g.height, g.width, ignore);
  for (std::size_t l = 0; l < logits.size(); ++l) {
    const int c = logits[l].dim(1);
    const auto d = logits[l].data();
    std::vector<int> r(static_cast<std::size_t>(g.batch) * hw);
    for (int b = 0; b < g.batch; ++b) {
      for (std::size_t i = 0; i < hw; ++i) {
        int best = 0;
        double bv = d[static_cast<std::size_t>(b) * c * hw + i];
        for (int k = 1; k < c; ++k) {
          const double v = d[(static_cast<std::size_t>(b) * c + k) * hw + i];
          if (v > bv) {
            bv = v;
            best = k;
          }
        }
        r[b * hw + i] = best;
      }
    }
    out.set_level(static_cast<int>(l), std::move(r));
  }
  return out;
}

double consistency_rate(const LevelLabels& pred, const Hierarchy& h) {
  if (pred.num_levels() != h.num_levels() || !pred.complete()) {
    throw InputError("consistency: prediction must carry every hierarchy level");
  }
  std::size_t counted = 0, consistent = 0;
  std::vector<int> tuple(h.num_levels());
  for (std::size_t p = 0; p < pred.pixels(); ++p) {
    bool ignored = false;
    for (int l = 0; l < h.num_levels(); ++l) {
      tuple[l] = pred.level(l)[p];
      ignored = ignored || tuple[l] == pred.ignore();
    }
    if (ignored) continue;
    ++counted;
    if (h.path_index(tuple) >= 0) ++consistent;
  }
  return counted == 0 ? 1.0 : static_cast<double>(consistent) / static_cast<double>(counted);
}

std::vector<double> path_scores(const std::vector<Tensor>& logits, const Hierarchy& h,
                                ScoreMode mode) {
  const Geometry g = check_logits(logits);
  check_against(logits, h);
  const int n = h.num_levels();
  const std::size_t pixels = static_cast<std::size_t>(g.batch) * g.hw();
  std::vector<std::vector<double>> per_level;
  for (int l = 0; l < n; ++l) per_level.push_back(level_scores(logits[l], g, mode));
  const auto& paths = h.paths();
  const std::size_t np = paths.size();
  std::vector<double> out(pixels * np);
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t k = 0; k < np; ++k) {
      double s = 0.0;
      for (int l = 0; l < n; ++l) s += per_level[l][p * h.num_classes(l) + paths[k][l]];
      out[p * np + k] = s;
    }
  }
  return out;
}

LevelLabels jsps_decode(const std::vector<Tensor>& logits, const Hierarchy& h, ScoreMode mode,
                        int ignore) {
  const Geometry g = check_logits(logits);
  const auto scores = path_scores(logits, h, mode);
  const int n = h.num_levels();
  const std::size_t np = h.paths().size();
  const std::size_t pixels = static_cast<std::size_t>(g.batch) * g.hw();
  std::vector<std::vector<int>> rasters(n, std::vector<int>(pixels));
  for (std::size_t p = 0; p < pixels; ++p) {
    const double* s = scores.data() + p * np;
    std::size_t best = 0;
    for (std::size_t k = 1; k < np; ++k) {
      if (s[k] > s[best]) best = k;
    }
    for (int l = 0; l < n; ++l) rasters[l][p] = h.paths()[best][l];
  }
  LevelLabels out(n, g.batch, g.height, g.width, ignore);
  for (int l = 0; l < n; ++l) out.set_level(l, std::move(rasters[l]));
  return out;
}

LevelLabels decode(const std::vector<Tensor>& logits, const Hierarchy& h, DecodeMode mode,
                   ScoreMode scores, int ignore) {
  if (mode == DecodeMode::kJsps) return jsps_decode(logits, h, scores, ignore);
  check_against(logits, h);
  return argmax_per_level(logits, ignore);
}

}  // namespace hiera
