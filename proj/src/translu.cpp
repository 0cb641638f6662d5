#include "hiera/translu.hpp"

#include <cmath>

#include "hiera/error.hpp"
#include "hiera/htf.hpp"
#include "hiera/ops.hpp"
#include "hiera/rng.hpp"
#include "json.hpp"

namespace hiera {

BranchInteractionUnit::BranchInteractionUnit(int c1, int c2, Rng& rng)
    : fc(c2, c1, false, rng),
      norm_q(c1),
      norm_kv(c1),
      norm_ffn(c1),
      wq(c1, c1, true, rng),
      wk(c1, c1, true, rng),
      wv(c1, c1, false, rng),
      wo(c1, c1, false, rng),
      ffn1(c1, 2 * c1, true, rng),
      ffn2(2 * c1, c1, true, rng),
      gamma(make_scalar_param(0.0)),
      tau(make_scalar_param(0.0)) {}

Tensor BranchInteractionUnit::attention(const Tensor& q_tokens, const Tensor& kv_tokens) const {
  const Tensor q = wq(q_tokens);
  const Tensor k = wk(kv_tokens);
  const Tensor v = wv(kv_tokens);
  const double s = 1.0 / std::sqrt(static_cast<double>(q.dim(-1)));
  const Tensor a = ops::softmax(ops::scale(ops::bmm(q, k, true), s), 2);
  return wo(ops::bmm(a, v));
}

Tensor BranchInteractionUnit::ffn(const Tensor& tokens) const {
  return ffn2(ops::relu(ffn1(tokens)));
}

Tensor BranchInteractionUnit::forward_tokens(const Tensor& t1, const Tensor& t2) const {
  if (t1.ndim() != 3 || t2.ndim() != 3 || t1.dim(0) != t2.dim(0) || t1.dim(1) != t2.dim(1)) {
    throw InputError("biu: token mismatch " + shape_str(t1.shape()) + " vs " +
                     shape_str(t2.shape()));
  }
  const Tensor att = attention(norm_q(t1), norm_kv(fc(t2)));
  const Tensor hat = ops::add(t1, ops::mul(gamma, att));
  return ops::add(hat, ops::mul(tau, ffn(norm_ffn(hat))));
}

Tensor BranchInteractionUnit::operator()(const Tensor& f1, const Tensor& f2) const {
  if (f1.ndim() != 4 || f2.ndim() != 4) throw InputError("biu: expected [B, C, H, W] inputs");
  if (f1.dim(2) * f1.dim(3) != f2.dim(2) * f2.dim(3)) {
    throw InputError("biu: token count " + std::to_string(f1.dim(2) * f1.dim(3)) + " vs " +
                     std::to_string(f2.dim(2) * f2.dim(3)));
  }
  const Tensor out = forward_tokens(ops::to_tokens(f1), ops::to_tokens(f2));
  return ops::from_tokens(out, f1.dim(2), f1.dim(3));
}

void BranchInteractionUnit::collect(NamedParams& out, const std::string& prefix) const {
  fc.collect(out, prefix + ".fc");
  norm_q.collect(out, prefix + ".norm_q");
  norm_kv.collect(out, prefix + ".norm_kv");
  norm_ffn.collect(out, prefix + ".norm_ffn");
  wq.collect(out, prefix + ".wq");
  wk.collect(out, prefix + ".wk");
  wv.collect(out, prefix + ".wv");
  wo.collect(out, prefix + ".wo");
  ffn1.collect(out, prefix + ".ffn1");
  ffn2.collect(out, prefix + ".ffn2");
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".tau", tau);
}

namespace {

int resolve_level(const Hierarchy& h, const nlohmann::json& e, const char* key) {
  const int l = h.find_level(e.at(key).get<std::string>());
  if (l < 0) throw InputError(std::string("cdsa mapping: unknown ") + key + " '" +
                              e.at(key).get<std::string>() + "'");
  return l;
}

int resolve_class(const Hierarchy& h, int level, const nlohmann::json& e, const char* key) {
  const int c = h.find_class(level, e.at(key).get<std::string>());
  if (c < 0) throw InputError(std::string("cdsa mapping: unknown ") + key + " '" +
                              e.at(key).get<std::string>() + "'");
  return c;
}

}  // namespace

std::vector<CdsaLink> parse_cdsa_mapping(const std::string& text, const Hierarchy& branch2,
                                         const Hierarchy& branch1) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(std::string("cdsa mapping: ") + e.what());
  }
  if (!doc.is_array()) throw InputError("cdsa mapping: expected a JSON list");
  std::vector<CdsaLink> links;
  try {
    for (const auto& e : doc) {
      CdsaLink l;
      l.node = e.at("node").get<std::string>();
      l.branch2_level = resolve_level(branch2, e, "branch2_level");
      l.branch2_class = resolve_class(branch2, l.branch2_level, e, "branch2_class");
      l.branch1_level = resolve_level(branch1, e, "branch1_level");
      l.branch1_class = resolve_class(branch1, l.branch1_level, e, "branch1_class");
      if (l.branch1_level == branch1.finest()) {
        throw InputError("cdsa mapping: node '" + l.node + "' targets the finest level");
      }
      for (const auto& prev : links) {
        if (prev.branch1_level == l.branch1_level && prev.branch1_class == l.branch1_class) {
          throw InputError("cdsa mapping: node '" + l.node + "' mapped twice");
        }
      }
      links.push_back(std::move(l));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("cdsa mapping: ") + e.what());
  }
  return links;
}

std::vector<CdsaLink> load_cdsa_mapping(const std::filesystem::path& file,
                                        const Hierarchy& branch2, const Hierarchy& branch1) {
  const auto bytes = read_file_bytes(file);
  return parse_cdsa_mapping(std::string(bytes.begin(), bytes.end()), branch2, branch1);
}

std::vector<Tensor> cdsa_masks(const std::vector<Tensor>& branch2_logits,
                               const std::vector<CdsaLink>& links) {
  std::vector<Tensor> masks;
  for (const auto& l : links) {
    if (l.branch2_level < 0 || l.branch2_level >= static_cast<int>(branch2_logits.size())) {
      throw InputError("cdsa: level out of range for node '" + l.node + "'");
    }
    const Tensor& z = branch2_logits[l.branch2_level];
    if (l.branch2_class < 0 || l.branch2_class >= z.dim(1)) {
      throw InputError("cdsa: class out of range for node '" + l.node + "'");
    }
    masks.push_back(ops::channel_slice(ops::softmax(z, 1), l.branch2_class, 1));
  }
  return masks;
}

std::vector<Tensor> cdsa_fuse(const std::vector<Tensor>& z_in, const std::vector<Tensor>& masks,
                              const std::vector<CdsaLink>& links, bool residual) {
  if (masks.size() != links.size()) throw InputError("cdsa: one mask per link expected");
  std::vector<Tensor> out = z_in;
  const int finest = static_cast<int>(z_in.size()) - 1;
  for (std::size_t i = 0; i < links.size(); ++i) {
    const CdsaLink& l = links[i];
    if (l.branch1_level < 0 || l.branch1_level >= finest) continue;
    const Tensor& z = out[l.branch1_level];
    const Tensor& m = masks[i];
    const int c = l.branch1_class;
    if (c < 0 || c >= z.dim(1)) throw InputError("cdsa: channel out of range for '" + l.node + "'");
    if (m.ndim() != 4 || m.dim(0) != z.dim(0) || m.dim(1) != 1 || m.dim(2) != z.dim(2) ||
        m.dim(3) != z.dim(3)) {
      throw InputError("cdsa: mask " + shape_str(m.shape()) + " does not fit " +
                       shape_str(z.shape()));
    }
    const Tensor ch = ops::channel_slice(z, c, 1);
    const Tensor gated = residual ? ops::add(ch, ops::mul(ch, m)) : ops::mul(ch, m);
    std::vector<Tensor> parts;
    if (c > 0) parts.push_back(ops::channel_slice(z, 0, c));
    parts.push_back(gated);
    if (c + 1 < z.dim(1)) parts.push_back(ops::channel_slice(z, c + 1, z.dim(1) - c - 1));
    out[l.branch1_level] = parts.size() == 1 ? parts[0] : ops::concat(parts, 1);
  }
  return out;
}

TransLuModel::TransLuModel(ToySegNet branch2, const SegNetConfig& branch1_cfg,
                           TransLuOptions opts, std::uint64_t seed)
    : branch2_(std::move(branch2)), branch1_(branch1_cfg, derive_seed(seed, "branch1")),
      opts_(std::move(opts)) {
  if (!branch2_.hierarchical() || !branch1_.hierarchical()) {
    throw InputError("translu: both branches need a hierarchical head");
  }
  if (branch2_.config().widths != branch1_cfg.widths ||
      branch2_.config().in_channels != branch1_cfg.in_channels) {
    throw InputError("translu: branch encoders must share widths and input channels");
  }
  branch2_.freeze();
  Rng rng(derive_seed(seed, "interaction"));
  for (int k = 0; k < branch1_.num_stages(); ++k) {
    const int c = branch1_cfg.widths[k];
    units_.emplace_back(c, c, rng);
    w1_.push_back(make_scalar_param(1.0));
    w2_.push_back(make_scalar_param(0.0));
  }
}

std::vector<Tensor> TransLuModel::branch2_forward(const Tensor& img) const {
  return branch2_.forward_hiera(img);
}

TransLuOutput TransLuModel::forward(const Tensor& img) const {
  TransLuOutput out;
  const std::vector<Tensor> f2 = branch2_.encode(img);
  out.branch2_logits = branch2_.forward_head(branch2_.decode(f2)).out;

  std::vector<Tensor> feats;
  Tensor x = img;
  for (int k = 0; k < branch1_.num_stages(); ++k) {
    Tensor f1 = branch1_.encode_stage(k, x);
    if (opts_.cdks) {
      f1 = ops::add(ops::mul(w1_[k], units_[k](f1, f2[k])), ops::mul(w2_[k], f2[k]));
    }
    feats.push_back(f1);
    x = f1;
  }
  const Tensor dec = branch1_.decode(feats);
  std::vector<Tensor> z = branch1_.head().project(dec);
  if (opts_.cdsa) {
    out.masks = cdsa_masks(out.branch2_logits, opts_.links);
    z = cdsa_fuse(z, out.masks, opts_.links, opts_.cdsa_residual);
  }
  out.logits = branch1_.head().fuse(std::move(z)).out;
  return out;
}

NamedParams TransLuModel::trainable_params() const {
  NamedParams p;
  for (auto& [name, t] : branch1_.params()) p.emplace_back("branch1." + name, t);
  if (opts_.cdks) {
    for (int k = 0; k < num_units(); ++k) {
      units_[k].collect(p, "biu." + std::to_string(k));
      p.emplace_back("fuse." + std::to_string(k) + ".w1", w1_[k]);
      p.emplace_back("fuse." + std::to_string(k) + ".w2", w2_[k]);
    }
  }
  return p;
}

NamedParams TransLuModel::gate_params() const {
  NamedParams p;
  if (!opts_.cdks) return p;
  for (int k = 0; k < num_units(); ++k) {
    const std::string s = std::to_string(k);
    p.emplace_back("biu." + s + ".gamma", units_[k].gamma);
    p.emplace_back("biu." + s + ".tau", units_[k].tau);
    p.emplace_back("fuse." + s + ".w1", w1_[k]);
    p.emplace_back("fuse." + s + ".w2", w2_[k]);
  }
  return p;
}

}  // namespace hiera
