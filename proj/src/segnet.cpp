#include "hiera/segnet.hpp"

#include <algorithm>
#include <map>

#include "hiera/error.hpp"
#include "hiera/ops.hpp"

namespace hiera {

ToySegNet::ToySegNet(const SegNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.widths.empty()) throw InputError("segnet: at least one encoder stage required");
  if (cfg_.level_classes.empty()) throw InputError("segnet: no output classes configured");
  const int k = num_stages();
  int prev = cfg_.in_channels;
  for (int s = 0; s < k; ++s) {
    Rng rng(derive_seed(seed, "enc." + std::to_string(s)));
    enc_.emplace_back(prev, cfg_.widths[s], 3, true, rng);
    prev = cfg_.widths[s];
  }
  if (k == 1) {
    Rng rng(derive_seed(seed, "dec.0"));
    dec_.emplace_back(cfg_.widths[0], cfg_.dec_channels, 3, true, rng);
  } else {
    dec_.resize(k - 1);
    int below = cfg_.widths[k - 1];
    for (int s = k - 2; s >= 0; --s) {
      Rng rng(derive_seed(seed, "dec." + std::to_string(s)));
      const int out = s == 0 ? cfg_.dec_channels : cfg_.widths[s];
      dec_[s] = Conv2d(below + cfg_.widths[s], out, 3, true, rng);
      below = out;
    }
  }
  if (cfg_.head == HeadKind::kFlat) {
    Rng rng(derive_seed(seed, "head.flat"));
    flat_ = Conv2d(cfg_.dec_channels, cfg_.level_classes.back(), 1, true, rng);
  } else {
    head_.emplace(BhccmConfig{cfg_.dec_channels, cfg_.level_classes, cfg_.fusion,
                              cfg_.mb_hidden, 3, cfg_.mb_bias},
                  derive_seed(seed, "head.bhccm"));
  }
}

void ToySegNet::check_image(const Tensor& img) const {
  if (img.ndim() != 4 || img.dim(1) != cfg_.in_channels) {
    throw InputError("segnet: expected [B," + std::to_string(cfg_.in_channels) +
                     ",H,W] image, got " + shape_str(img.shape()));
  }
  const int div = 1 << (num_stages() - 1);
  if (img.dim(2) % div || img.dim(3) % div) {
    throw InputError("segnet: spatial size must be divisible by " + std::to_string(div) +
                     ", got " + shape_str(img.shape()));
  }
}

Tensor ToySegNet::encode_stage(int k, const Tensor& x) const {
  const Tensor in = k == 0 ? x : ops::avg_pool2(x);
  return ops::relu(enc_.at(k)(in));
}

std::vector<Tensor> ToySegNet::encode(const Tensor& img) const {
  check_image(img);
  std::vector<Tensor> feats;
  Tensor x = img;
  for (int k = 0; k < num_stages(); ++k) {
    x = encode_stage(k, x);
    feats.push_back(x);
  }
  return feats;
}

Tensor ToySegNet::decode(const std::vector<Tensor>& feats) const {
  const int k = num_stages();
  if (static_cast<int>(feats.size()) != k) {
    throw InputError("segnet: decoder expects " + std::to_string(k) + " feature maps");
  }
  if (k == 1) return ops::relu(dec_[0](feats[0]));
  Tensor d = feats[k - 1];
  for (int s = k - 2; s >= 0; --s) {
    const Tensor up = ops::upsample_bilinear(d, feats[s].dim(2), feats[s].dim(3));
    d = ops::relu(dec_[s](ops::concat({up, feats[s]}, 1)));
  }
  return d;
}

BhccmOutput ToySegNet::forward_head(const Tensor& dec) const {
  if (!head_) throw InputError("segnet: network has a flat head");
  return head_->forward(dec);
}

std::vector<Tensor> ToySegNet::forward(const Tensor& img) const {
  const Tensor dec = decode(encode(img));
  if (cfg_.head == HeadKind::kFlat) return {flat_(dec)};
  return head_->forward(dec).out;
}

Tensor ToySegNet::forward_flat(const Tensor& img) const {
  if (cfg_.head != HeadKind::kFlat) throw InputError("segnet: network has a BHCCM head");
  return forward(img).front();
}

std::vector<Tensor> ToySegNet::forward_hiera(const Tensor& img) const {
  if (cfg_.head != HeadKind::kBhccm) throw InputError("segnet: network has a flat head");
  return forward(img);
}

NamedParams ToySegNet::trunk_params() const {
  NamedParams out;
  for (int s = 0; s < num_stages(); ++s) enc_[s].collect(out, "enc." + std::to_string(s));
  for (std::size_t s = 0; s < dec_.size(); ++s) dec_[s].collect(out, "dec." + std::to_string(s));
  return out;
}

NamedParams ToySegNet::params() const {
  NamedParams out = trunk_params();
  if (cfg_.head == HeadKind::kFlat) {
    flat_.collect(out, "head.flat");
  } else {
    head_->collect(out, "head");
  }
  return out;
}

void ToySegNet::freeze() { freeze_all(params()); }

int copy_matching_params(const NamedParams& src, const NamedParams& dst) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : src) by_name[name] = &t;
  int copied = 0;
  for (const auto& [name, t] : dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) continue;
    if (it->second->shape() != t.shape()) {
      throw InputError("parameter '" + name + "' shape mismatch: " +
                       shape_str(it->second->shape()) + " vs " + shape_str(t.shape()));
    }
    Tensor target = t;
    const auto s = it->second->data();
    std::copy(s.begin(), s.end(), target.mutable_data().begin());
    ++copied;
  }
  return copied;
}

}  // namespace hiera
