#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "hiera/hierarchy.hpp"
#include "hiera/labels.hpp"
#include "hiera/tensor.hpp"

namespace hiera {

enum class DecodeMode { kArgmax, kJsps };
enum class ScoreMode {
  kSigmoid,  // sigma(logit), as in the path-scoring rule
  kSoftmax,  // per-level softmax probability, for sensitivity studies
};

DecodeMode parse_decode_mode(std::string_view s);
ScoreMode parse_score_mode(std::string_view s);
std::string to_string(DecodeMode m);
std::string to_string(ScoreMode m);

// Independent argmax per level; ties go to the lower class index.
LevelLabels argmax_per_level(const std::vector<Tensor>& logits, int ignore = kDefaultIgnore);

// Fraction of non-ignore pixels whose level tuple is a valid path. A pixel
// counts as ignored when any level is ignore. Returns 1 when no pixel counts.
double consistency_rate(const LevelLabels& pred, const Hierarchy& h);

// Per-pixel joint path scores, laid out [pixel][path] in h.paths() order:
// score(path) = sum_l s(logit of the path's class at level l).
std::vector<double> path_scores(const std::vector<Tensor>& logits, const Hierarchy& h,
                                ScoreMode mode = ScoreMode::kSigmoid);

// Joint-score path selection: per pixel, the valid path with the highest
// summed level score; ties go to the lowest path index. Always consistent.
LevelLabels jsps_decode(const std::vector<Tensor>& logits, const Hierarchy& h,
                        ScoreMode mode = ScoreMode::kSigmoid, int ignore = kDefaultIgnore);

LevelLabels decode(const std::vector<Tensor>& logits, const Hierarchy& h, DecodeMode mode,
                   ScoreMode scores = ScoreMode::kSigmoid, int ignore = kDefaultIgnore);

}  // namespace hiera
