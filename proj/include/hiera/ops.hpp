#pragma once

#include <span>
#include <vector>

#include "hiera/tensor.hpp"

// Differentiable tensor operations. Every op validates shapes and throws
// InputError naming the op and the offending shapes. Forward values are
// computed in a fixed loop order, so results are bit-reproducible.
namespace hiera::ops {

// Elementwise with numpy-style broadcasting (size-1 dims stretch; lower rank
// operands are left-padded with 1s).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

// [M,K] x [K,N] -> [M,N].
Tensor matmul(const Tensor& a, const Tensor& b);
// [B,M,K] x [B,K,N] -> [B,M,N]; with transpose_b, b is [B,N,K].
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);
// Affine map over the last axis: x[..., in] * w[out, in]^T + bias[out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = {});

// Stride 1, zero "same" padding, odd square kernels (1x1 and 3x3 are used).
// x [B,Ci,H,W], w [Co,Ci,k,k], bias [Co] (optional).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias = {});

// 2x2 average pooling with stride 2; H and W must be even.
Tensor avg_pool2(const Tensor& x);
// [B,C,H,W] -> [B,C,1,1].
Tensor global_avg_pool(const Tensor& x);
Tensor global_max_pool(const Tensor& x);
// [B,C,H,W] -> [B,1,H,W].
Tensor channel_avg_pool(const Tensor& x);
Tensor channel_max_pool(const Tensor& x);

Tensor concat(const std::vector<Tensor>& xs, int axis = 1);
// Channels [start, start+count) of a 4-D tensor.
Tensor channel_slice(const Tensor& x, int start, int count);
Tensor reshape(const Tensor& x, Shape shape);

// Half-pixel-centre bilinear resampling (align_corners = false).
Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softmax(const Tensor& x, int axis = 1);
Tensor log_softmax(const Tensor& x, int axis = 1);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Normalizes over the last axis with learned gain and shift.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// [B,C,H,W] <-> [B,H*W,C].
Tensor to_tokens(const Tensor& x);
Tensor from_tokens(const Tensor& t, int height, int width);

// Mean over non-ignore pixels of -logp[label]; logp is [B,C,H,W] and labels
// are [b][y][x]. Throws when every pixel is ignored.
Tensor nll_mean(const Tensor& logp, std::span<const int> labels, int ignore);

// Mean over valid pixels of sum_c t_c * (log t_c - logp_c), with 0*log 0 = 0.
// `target` has logp's shape and carries no gradient; valid is per pixel.
Tensor kl_div_mean(const Tensor& logp, std::span<const double> target,
                   std::span<const unsigned char> valid);

}  // namespace hiera::ops
