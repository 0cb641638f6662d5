#include "hiera/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "hiera/error.hpp"

namespace hiera::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

bool needs(const Tensor& t) { return t.defined() && t.requires_grad(); }
std::span<double> gbuf(const Tensor& t) { return t.impl().grad_buffer(); }

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw InputError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                   " and " + shape_str(b.shape()));
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const std::string& want) {
  throw InputError(std::string(op) + ": got shape " + shape_str(a.shape()) + ", expected " +
                   want);
}

void require_rank(const char* op, const Tensor& x, int rank) {
  if (!x.defined()) throw InputError(std::string(op) + ": undefined input");
  if (x.ndim() != rank) shape_error(op, x, std::to_string(rank) + "-D tensor");
}

struct Broadcast {
  Shape out;
  std::array<std::size_t, 4> dims{};
  std::array<std::size_t, 4> sa{};
  std::array<std::size_t, 4> sb{};
};

Broadcast broadcast(const char* op, const Tensor& a, const Tensor& b) {
  const int rank = std::max(a.ndim(), b.ndim());
  std::array<std::size_t, 4> da{1, 1, 1, 1}, db{1, 1, 1, 1};
  for (int i = 0; i < a.ndim(); ++i) da[4 - a.ndim() + i] = a.shape()[i];
  for (int i = 0; i < b.ndim(); ++i) db[4 - b.ndim() + i] = b.shape()[i];
  Broadcast bc;
  std::size_t stride_a = 1, stride_b = 1;
  for (int i = 3; i >= 0; --i) {
    if (da[i] != db[i] && da[i] != 1 && db[i] != 1) shape_error(op, a, b);
    bc.dims[i] = std::max(da[i], db[i]);
    bc.sa[i] = da[i] == 1 ? 0 : stride_a;
    bc.sb[i] = db[i] == 1 ? 0 : stride_b;
    stride_a *= da[i];
    stride_b *= db[i];
  }
  for (int i = 4 - rank; i < 4; ++i) bc.out.push_back(static_cast<int>(bc.dims[i]));
  return bc;
}

template <typename F>
void for_each_bcast(const Broadcast& bc, F&& f) {
  std::size_t o = 0;
  for (std::size_t i0 = 0; i0 < bc.dims[0]; ++i0) {
    for (std::size_t i1 = 0; i1 < bc.dims[1]; ++i1) {
      for (std::size_t i2 = 0; i2 < bc.dims[2]; ++i2) {
        std::size_t ia = i0 * bc.sa[0] + i1 * bc.sa[1] + i2 * bc.sa[2];
        std::size_t ib = i0 * bc.sb[0] + i1 * bc.sb[1] + i2 * bc.sb[2];
        for (std::size_t i3 = 0; i3 < bc.dims[3]; ++i3, ++o) {
          f(o, ia, ib);
          ia += bc.sa[3];
          ib += bc.sb[3];
        }
      }
    }
  }
}

// Decomposes a shape around `axis` into (outer, n, inner).
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const char* op, const Tensor& x, int& axis) {
  if (axis < 0) axis += x.ndim();
  if (axis < 0 || axis >= x.ndim()) {
    throw InputError(std::string(op) + ": axis out of range for " + shape_str(x.shape()));
  }
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= x.shape()[i];
  s.n = x.shape()[axis];
  for (int i = axis + 1; i < x.ndim(); ++i) s.inner *= x.shape()[i];
  return s;
}

// Column buffer for a k x k same-padded convolution of one image.
void im2col(const double* x, int ci, int h, int w, int k, double* col) {
  const int pad = k / 2;
  const int hw = h * w;
  for (int c = 0; c < ci; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = col + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          for (int xx = 0; xx < w; ++xx) {
            const int sx = xx + kx - pad;
            row[y * w + xx] = (sy < 0 || sy >= h || sx < 0 || sx >= w)
                                  ? 0.0
                                  : x[(static_cast<std::size_t>(c) * h + sy) * w + sx];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, int ci, int h, int w, int k, double* dx) {
  const int pad = k / 2;
  const int hw = h * w;
  for (int c = 0; c < ci; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = col + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          for (int xx = 0; xx < w; ++xx) {
            const int sx = xx + kx - pad;
            if (sx < 0 || sx >= w) continue;
            dx[(static_cast<std::size_t>(c) * h + sy) * w + sx] += row[y * w + xx];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const Broadcast bc = broadcast("add", a, b);
  std::vector<double> out(shape_numel(bc.out));
  const auto da = a.data(), db = b.data();
  for_each_bcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    out[o] = da[ia] + db[ib];
  });
  return Tensor::make_result(bc.out, std::move(out), {a, b},
                             [a, b, bc](detail::TensorImpl& self) {
    const auto& g = self.grad;
    if (needs(a)) {
      auto ga = gbuf(a);
      for_each_bcast(bc, [&](std::size_t o, std::size_t ia, std::size_t) { ga[ia] += g[o]; });
    }
    if (needs(b)) {
      auto gb = gbuf(b);
      for_each_bcast(bc, [&](std::size_t o, std::size_t, std::size_t ib) { gb[ib] += g[o]; });
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const Broadcast bc = broadcast("sub", a, b);
  std::vector<double> out(shape_numel(bc.out));
  const auto da = a.data(), db = b.data();
  for_each_bcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    out[o] = da[ia] - db[ib];
  });
  return Tensor::make_result(bc.out, std::move(out), {a, b},
                             [a, b, bc](detail::TensorImpl& self) {
    const auto& g = self.grad;
    if (needs(a)) {
      auto ga = gbuf(a);
      for_each_bcast(bc, [&](std::size_t o, std::size_t ia, std::size_t) { ga[ia] += g[o]; });
    }
    if (needs(b)) {
      auto gb = gbuf(b);
      for_each_bcast(bc, [&](std::size_t o, std::size_t, std::size_t ib) { gb[ib] -= g[o]; });
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const Broadcast bc = broadcast("mul", a, b);
  std::vector<double> out(shape_numel(bc.out));
  const auto da = a.data(), db = b.data();
  for_each_bcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    out[o] = da[ia] * db[ib];
  });
  return Tensor::make_result(bc.out, std::move(out), {a, b},
                             [a, b, bc](detail::TensorImpl& self) {
    const auto& g = self.grad;
    const auto da = a.data(), db = b.data();
    if (needs(a)) {
      auto ga = gbuf(a);
      for_each_bcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        ga[ia] += g[o] * db[ib];
      });
    }
    if (needs(b)) {
      auto gb = gbuf(b);
      for_each_bcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        gb[ib] += g[o] * da[ia];
      });
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= s;
  return Tensor::make_result(a.shape(), std::move(out), {a}, [a, s](detail::TensorImpl& self) {
    auto ga = gbuf(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * self.grad[i];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  if (a.dim(1) != b.dim(0)) shape_error("matmul", a, b);
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  MapMat(out.data(), m, n).noalias() =
      CMapMat(a.data().data(), m, k) * CMapMat(b.data().data(), k, n);
  return Tensor::make_result({m, n}, std::move(out), {a, b},
                             [a, b, m, k, n](detail::TensorImpl& self) {
    CMapMat g(self.grad.data(), m, n);
    if (needs(a)) MapMat(gbuf(a).data(), m, k).noalias() += g * CMapMat(b.data().data(), k, n).transpose();
    if (needs(b)) MapMat(gbuf(b).data(), k, n).noalias() += CMapMat(a.data().data(), m, k).transpose() * g;
  });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  require_rank("bmm", a, 3);
  require_rank("bmm", b, 3);
  const int batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const int n = transpose_b ? b.dim(1) : b.dim(2);
  const int bk = transpose_b ? b.dim(2) : b.dim(1);
  if (b.dim(0) != batch || bk != k) shape_error("bmm", a, b);
  const std::size_t sa = static_cast<std::size_t>(m) * k, sb = static_cast<std::size_t>(k) * n,
                    so = static_cast<std::size_t>(m) * n;
  std::vector<double> out(so * batch);
  for (int i = 0; i < batch; ++i) {
    CMapMat am(a.data().data() + i * sa, m, k);
    MapMat om(out.data() + i * so, m, n);
    if (transpose_b) {
      om.noalias() = am * CMapMat(b.data().data() + i * sb, n, k).transpose();
    } else {
      om.noalias() = am * CMapMat(b.data().data() + i * sb, k, n);
    }
  }
  return Tensor::make_result({batch, m, n}, std::move(out), {a, b},
                             [=](detail::TensorImpl& self) {
    for (int i = 0; i < batch; ++i) {
      CMapMat g(self.grad.data() + i * so, m, n);
      CMapMat am(a.data().data() + i * sa, m, k);
      if (transpose_b) {
        CMapMat bm(b.data().data() + i * sb, n, k);
        if (needs(a)) MapMat(gbuf(a).data() + i * sa, m, k).noalias() += g * bm;
        if (needs(b)) MapMat(gbuf(b).data() + i * sb, n, k).noalias() += g.transpose() * am;
      } else {
        CMapMat bm(b.data().data() + i * sb, k, n);
        if (needs(a)) MapMat(gbuf(a).data() + i * sa, m, k).noalias() += g * bm.transpose();
        if (needs(b)) MapMat(gbuf(b).data() + i * sb, k, n).noalias() += am.transpose() * g;
      }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank("linear", w, 2);
  const int in = w.dim(1), outc = w.dim(0);
  if (x.dim(-1) != in) shape_error("linear", x, w);
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != outc)) shape_error("linear", w, bias);
  const int rows = static_cast<int>(x.numel() / in);
  Shape out_shape = x.shape();
  out_shape.back() = outc;
  std::vector<double> out(static_cast<std::size_t>(rows) * outc);
  MapMat om(out.data(), rows, outc);
  om.noalias() = CMapMat(x.data().data(), rows, in) * CMapMat(w.data().data(), outc, in).transpose();
  if (bias.defined()) {
    om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), outc);
  }
  return Tensor::make_result(out_shape, std::move(out), {x, w, bias},
                             [=](detail::TensorImpl& self) {
    CMapMat g(self.grad.data(), rows, outc);
    if (needs(x)) {
      MapMat(gbuf(x).data(), rows, in).noalias() += g * CMapMat(w.data().data(), outc, in);
    }
    if (needs(w)) {
      MapMat(gbuf(w).data(), outc, in).noalias() += g.transpose() * CMapMat(x.data().data(), rows, in);
    }
    if (needs(bias)) {
      Eigen::Map<Eigen::RowVectorXd>(gbuf(bias).data(), outc) += g.colwise().sum();
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", w, 4);
  const int batch = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int co = w.dim(0), k = w.dim(2);
  if (w.dim(1) != ci || w.dim(3) != k || k % 2 == 0) shape_error("conv2d", x, w);
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != co)) shape_error("conv2d", w, bias);
  const int hw = h * wd;
  const int kk = ci * k * k;
  std::vector<double> out(static_cast<std::size_t>(batch) * co * hw);
  std::vector<double> col(k == 1 ? 0 : static_cast<std::size_t>(kk) * hw);
  CMapMat wm(w.data().data(), co, kk);
  for (int b = 0; b < batch; ++b) {
    const double* xb = x.data().data() + static_cast<std::size_t>(b) * ci * hw;
    const double* cb = xb;
    if (k != 1) {
      im2col(xb, ci, h, wd, k, col.data());
      cb = col.data();
    }
    MapMat om(out.data() + static_cast<std::size_t>(b) * co * hw, co, hw);
    om.noalias() = wm * CMapMat(cb, kk, hw);
    if (bias.defined()) {
      om.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.data().data(), co);
    }
  }
  return Tensor::make_result({batch, co, h, wd}, std::move(out), {x, w, bias},
                             [=](detail::TensorImpl& self) {
    std::vector<double> colbuf(k == 1 ? 0 : static_cast<std::size_t>(kk) * hw);
    std::vector<double> dcol(needs(x) ? static_cast<std::size_t>(kk) * hw : 0);
    CMapMat wmat(w.data().data(), co, kk);
    for (int b = 0; b < batch; ++b) {
      CMapMat g(self.grad.data() + static_cast<std::size_t>(b) * co * hw, co, hw);
      const double* xb = x.data().data() + static_cast<std::size_t>(b) * ci * hw;
      if (needs(w)) {
        const double* cb = xb;
        if (k != 1) {
          im2col(xb, ci, h, wd, k, colbuf.data());
          cb = colbuf.data();
        }
        MapMat(gbuf(w).data(), co, kk).noalias() += g * CMapMat(cb, kk, hw).transpose();
      }
      if (needs(bias)) {
        Eigen::Map<Eigen::VectorXd>(gbuf(bias).data(), co) += g.rowwise().sum();
      }
      if (needs(x)) {
        double* dxb = gbuf(x).data() + static_cast<std::size_t>(b) * ci * hw;
        if (k == 1) {
          MapMat(dxb, kk, hw).noalias() += wmat.transpose() * g;
        } else {
          MapMat(dcol.data(), kk, hw).noalias() = wmat.transpose() * g;
          col2im_add(dcol.data(), ci, h, wd, k, dxb);
        }
      }
    }
  });
}

Tensor avg_pool2(const Tensor& x) {
  require_rank("avg_pool2", x, 4);
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2) shape_error("avg_pool2", x, "even spatial dims");
  const int oh = h / 2, ow = w / 2;
  const std::size_t planes = static_cast<std::size_t>(b) * c;
  std::vector<double> out(planes * oh * ow);
  const auto d = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = d.data() + p * h * w;
    double* dst = out.data() + p * oh * ow;
    for (int y = 0; y < oh; ++y) {
      for (int xx = 0; xx < ow; ++xx) {
        const double* s = src + 2 * y * w + 2 * xx;
        dst[y * ow + xx] = 0.25 * (s[0] + s[1] + s[w] + s[w + 1]);
      }
    }
  }
  return Tensor::make_result({b, c, oh, ow}, std::move(out), {x},
                             [=](detail::TensorImpl& self) {
    auto gx = gbuf(x);
    for (std::size_t p = 0; p < planes; ++p) {
      double* dst = gx.data() + p * h * w;
      const double* g = self.grad.data() + p * oh * ow;
      for (int y = 0; y < oh; ++y) {
        for (int xx = 0; xx < ow; ++xx) {
          const double v = 0.25 * g[y * ow + xx];
          double* s = dst + 2 * y * w + 2 * xx;
          s[0] += v;
          s[1] += v;
          s[w] += v;
          s[w + 1] += v;
        }
      }
    }
  });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank("global_avg_pool", x, 4);
  const int b = x.dim(0), c = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const std::size_t planes = static_cast<std::size_t>(b) * c;
  std::vector<double> out(planes);
  const auto d = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += d[p * hw + i];
    out[p] = s / static_cast<double>(hw);
  }
  return Tensor::make_result({b, c, 1, 1}, std::move(out), {x}, [=](detail::TensorImpl& self) {
    auto gx = gbuf(x);
    for (std::size_t p = 0; p < planes; ++p) {
      const double v = self.grad[p] / static_cast<double>(hw);
      for (std::size_t i = 0; i < hw; ++i) gx[p * hw + i] += v;
    }
  });
}

Tensor global_max_pool(const Tensor& x) {
  require_rank("global_max_pool", x, 4);
  const int b = x.dim(0), c = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const std::size_t planes = static_cast<std::size_t>(b) * c;
  std::vector<double> out(planes);
  std::vector<std::size_t> arg(planes);
  const auto d = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < hw; ++i) {
      if (d[p * hw + i] > d[p * hw + best]) best = i;
    }
    arg[p] = p * hw + best;
    out[p] = d[arg[p]];
  }
  return Tensor::make_result({b, c, 1, 1}, std::move(out), {x},
                             [x, arg = std::move(arg)](detail::TensorImpl& self) {
    auto gx = gbuf(x);
    for (std::size_t p = 0; p < arg.size(); ++p) gx[arg[p]] += self.grad[p];
  });
}

Tensor channel_avg_pool(const Tensor& x) {
  require_rank("channel_avg_pool", x, 4);
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  std::vector<double> out(static_cast<std::size_t>(b) * hw, 0.0);
  const auto d = x.data();
  for (int bi = 0; bi < b; ++bi) {
    double* o = out.data() + bi * hw;
    for (int ci = 0; ci < c; ++ci) {
      const double* s = d.data() + (static_cast<std::size_t>(bi) * c + ci) * hw;
      for (std::size_t i = 0; i < hw; ++i) o[i] += s[i];
    }
    for (std::size_t i = 0; i < hw; ++i) o[i] /= c;
  }
  return Tensor::make_result({b, 1, h, w}, std::move(out), {x}, [=](detail::TensorImpl& self) {
    auto gx = gbuf(x);
    for (int bi = 0; bi < b; ++bi) {
      const double* g = self.grad.data() + bi * hw;
      for (int ci = 0; ci < c; ++ci) {
        double* s = gx.data() + (static_cast<std::size_t>(bi) * c + ci) * hw;
        for (std::size_t i = 0; i < hw; ++i) s[i] += g[i] / c;
      }
    }
  });
}

Tensor channel_max_pool(const Tensor& x) {
  require_rank("channel_max_pool", x, 4);
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  std::vector<double> out(static_cast<std::size_t>(b) * hw);
  std::vector<std::size_t> arg(out.size());
  const auto d = x.data();
  for (int bi = 0; bi < b; ++bi) {
    for (std::size_t i = 0; i < hw; ++i) {
      std::size_t best = static_cast<std::size_t>(bi) * c * hw + i;
      for (int ci = 1; ci < c; ++ci) {
        const std::size_t j = (static_cast<std::size_t>(bi) * c + ci) * hw + i;
        if (d[j] > d[best]) best = j;
      }
      arg[bi * hw + i] = best;
      out[bi * hw + i] = d[best];
    }
  }
  return Tensor::make_result({b, 1, h, w}, std::move(out), {x},
                             [x, arg = std::move(arg)](detail::TensorImpl& self) {
    auto gx = gbuf(x);
    for (std::size_t p = 0; p < arg.size(); ++p) gx[arg[p]] += self.grad[p];
  });
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw InputError("concat: no inputs");
  const Tensor& first = xs.front();
  int ax = axis;
  split_axis("concat", first, ax);
  Shape out_shape = first.shape();
  out_shape[ax] = 0;
  for (const auto& t : xs) {
    if (t.ndim() != first.ndim()) shape_error("concat", first, t);
    for (int i = 0; i < first.ndim(); ++i) {
      if (i != ax && t.shape()[i] != first.shape()[i]) shape_error("concat", first, t);
    }
    out_shape[ax] += t.shape()[ax];
  }
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= out_shape[i];
  for (int i = ax + 1; i < first.ndim(); ++i) inner *= out_shape[i];
  const std::size_t out_row = static_cast<std::size_t>(out_shape[ax]) * inner;
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& t : xs) {
    offsets.push_back(off);
    const std::size_t row = static_cast<std::size_t>(t.shape()[ax]) * inner;
    const auto d = t.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(d.data() + o * row, row, out.data() + o * out_row + off);
    }
    off += row;
  }
  return Tensor::make_result(out_shape, std::move(out), xs,
                             [xs, offsets, outer, inner, out_row, ax](detail::TensorImpl& self) {
    for (std::size_t k = 0; k < xs.size(); ++k) {
      if (!needs(xs[k])) continue;
      auto g = gbuf(xs[k]);
      const std::size_t row = static_cast<std::size_t>(xs[k].shape()[ax]) * inner;
      for (std::size_t o = 0; o < outer; ++o) {
        const double* src = self.grad.data() + o * out_row + offsets[k];
        double* dst = g.data() + o * row;
        for (std::size_t i = 0; i < row; ++i) dst[i] += src[i];
      }
    }
  });
}

Tensor channel_slice(const Tensor& x, int start, int count) {
  require_rank("channel_slice", x, 4);
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (start < 0 || count <= 0 || start + count > c) {
    shape_error("channel_slice", x, "channel range [" + std::to_string(start) + ", " +
                                        std::to_string(start + count) + ")");
  }
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  std::vector<double> out(static_cast<std::size_t>(b) * count * hw);
  const auto d = x.data();
  for (int bi = 0; bi < b; ++bi) {
    std::copy_n(d.data() + (static_cast<std::size_t>(bi) * c + start) * hw, count * hw,
                out.data() + static_cast<std::size_t>(bi) * count * hw);
  }
  return Tensor::make_result({b, count, h, w}, std::move(out), {x},
                             [=](detail::TensorImpl& self) {
    auto gx = gbuf(x);
    for (int bi = 0; bi < b; ++bi) {
      double* dst = gx.data() + (static_cast<std::size_t>(bi) * c + start) * hw;
      const double* src = self.grad.data() + static_cast<std::size_t>(bi) * count * hw;
      for (std::size_t i = 0; i < count * hw; ++i) dst[i] += src[i];
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) shape_error("reshape", x, shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return Tensor::make_result(std::move(shape), std::move(out), {x},
                             [x](detail::TensorImpl& self) {
    auto gx = gbuf(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w) {
  require_rank("upsample_bilinear", x, 4);
  if (out_h <= 0 || out_w <= 0) shape_error("upsample_bilinear", x, "positive output size");
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  struct Tap {
    int i0, i1;
    double l1;
  };
  auto taps = [](int in, int out) {
    std::vector<Tap> t(out);
    const double sc = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
      double src = (o + 0.5) * sc - 0.5;
      if (src < 0) src = 0;
      int i0 = static_cast<int>(src);
      if (i0 > in - 1) i0 = in - 1;
      const int i1 = std::min(i0 + 1, in - 1);
      t[o] = {i0, i1, src - i0};
    }
    return t;
  };
  const auto ty = taps(h, out_h), tx = taps(w, out_w);
  const std::size_t planes = static_cast<std::size_t>(b) * c;
  std::vector<double> out(planes * out_h * out_w);
  const auto d = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* s = d.data() + p * h * w;
    double* o = out.data() + p * out_h * out_w;
    for (int y = 0; y < out_h; ++y) {
      const auto& a = ty[y];
      for (int xx = 0; xx < out_w; ++xx) {
        const auto& q = tx[xx];
        const double top = (1 - q.l1) * s[a.i0 * w + q.i0] + q.l1 * s[a.i0 * w + q.i1];
        const double bot = (1 - q.l1) * s[a.i1 * w + q.i0] + q.l1 * s[a.i1 * w + q.i1];
        o[y * out_w + xx] = (1 - a.l1) * top + a.l1 * bot;
      }
    }
  }
  return Tensor::make_result({b, c, out_h, out_w}, std::move(out), {x},
                             [=](detail::TensorImpl& self) {
    auto gx = gbuf(x);
    for (std::size_t p = 0; p < planes; ++p) {
      double* s = gx.data() + p * h * w;
      const double* g = self.grad.data() + p * out_h * out_w;
      for (int y = 0; y < out_h; ++y) {
        const auto& a = ty[y];
        for (int xx = 0; xx < out_w; ++xx) {
          const auto& q = tx[xx];
          const double v = g[y * out_w + xx];
          s[a.i0 * w + q.i0] += (1 - a.l1) * (1 - q.l1) * v;
          s[a.i0 * w + q.i1] += (1 - a.l1) * q.l1 * v;
          s[a.i1 * w + q.i0] += a.l1 * (1 - q.l1) * v;
          s[a.i1 * w + q.i1] += a.l1 * q.l1 * v;
        }
      }
    }
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return Tensor::make_result(x.shape(), std::move(out), {x}, [x](detail::TensorImpl& self) {
    auto gx = gbuf(x);
    const auto d = x.data();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (d[i] > 0.0) gx[i] += self.grad[i];
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto d = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (d[i] >= 0) {
      out[i] = 1.0 / (1.0 + std::exp(-d[i]));
    } else {
      const double e = std::exp(d[i]);
      out[i] = e / (1.0 + e);
    }
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, [x](detail::TensorImpl& self) {
    auto gx = gbuf(x);
    const auto& y = self.data;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * y[i] * (1.0 - y[i]);
  });
}

Tensor softmax(const Tensor& x, int axis) {
  const AxisSplit s = split_axis("softmax", x, axis);
  std::vector<double> out(x.numel());
  const auto d = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.n; ++j) mx = std::max(mx, d[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const double e = std::exp(d[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] /= total;
    }
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, [x, s](detail::TensorImpl& self) {
    auto gx = gbuf(x);
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.n * s.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.n; ++j) {
          dot += g[base + j * s.inner] * y[base + j * s.inner];
        }
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t i = base + j * s.inner;
          gx[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, int axis) {
  const AxisSplit s = split_axis("log_softmax", x, axis);
  std::vector<double> out(x.numel());
  const auto d = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.n; ++j) mx = std::max(mx, d[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) total += std::exp(d[base + j * s.inner] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t j = 0; j < s.n; ++j) {
        out[base + j * s.inner] = d[base + j * s.inner] - lse;
      }
    }
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, [x, s](detail::TensorImpl& self) {
    auto gx = gbuf(x);
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.n * s.inner + in;
        double gsum = 0.0;
        for (std::size_t j = 0; j < s.n; ++j) gsum += g[base + j * s.inner];
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t i = base + j * s.inner;
          gx[i] += g[i] - std::exp(y[i]) * gsum;
        }
      }
    }
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return Tensor::make_result({1}, {s}, {x}, [x](detail::TensorImpl& self) {
    auto gx = gbuf(x);
    const double g = self.grad[0];
    for (double& v : gx) v += g;
  });
}

Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const int c = x.dim(-1);
  if (gamma.numel() != static_cast<std::size_t>(c) || beta.numel() != static_cast<std::size_t>(c)) {
    shape_error("layer_norm", x, gamma);
  }
  const std::size_t rows = x.numel() / c;
  std::vector<double> out(x.numel()), xhat(x.numel()), rstd(rows);
  const auto d = x.data(), gm = gamma.data(), bt = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = d.data() + r * c;
    double mu = 0.0;
    for (int j = 0; j < c; ++j) mu += xr[j];
    mu /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= c;
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < c; ++j) {
      const std::size_t i = r * c + j;
      xhat[i] = (xr[j] - mu) * rstd[r];
      out[i] = xhat[i] * gm[j] + bt[j];
    }
  }
  return Tensor::make_result(x.shape(), std::move(out), {x, gamma, beta},
                             [x, gamma, beta, c, rows, xhat = std::move(xhat),
                              rstd = std::move(rstd)](detail::TensorImpl& self) {
    const auto& g = self.grad;
    const auto gm = gamma.data();
    if (needs(gamma) || needs(beta)) {
      std::vector<double> dg(c, 0.0), db(c, 0.0);
      for (std::size_t r = 0; r < rows; ++r) {
        for (int j = 0; j < c; ++j) {
          dg[j] += g[r * c + j] * xhat[r * c + j];
          db[j] += g[r * c + j];
        }
      }
      if (needs(gamma)) {
        auto gg = gbuf(gamma);
        for (int j = 0; j < c; ++j) gg[j] += dg[j];
      }
      if (needs(beta)) {
        auto gb = gbuf(beta);
        for (int j = 0; j < c; ++j) gb[j] += db[j];
      }
    }
    if (needs(x)) {
      auto gx = gbuf(x);
      for (std::size_t r = 0; r < rows; ++r) {
        double s1 = 0.0, s2 = 0.0;
        for (int j = 0; j < c; ++j) {
          const double dxh = g[r * c + j] * gm[j];
          s1 += dxh;
          s2 += dxh * xhat[r * c + j];
        }
        for (int j = 0; j < c; ++j) {
          const double dxh = g[r * c + j] * gm[j];
          gx[r * c + j] += rstd[r] / c * (c * dxh - s1 - xhat[r * c + j] * s2);
        }
      }
    }
  });
}

Tensor to_tokens(const Tensor& x) {
  require_rank("to_tokens", x, 4);
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int n = h * w;
  std::vector<double> out(x.numel());
  const auto d = x.data();
  for (int bi = 0; bi < b; ++bi) {
    for (int ci = 0; ci < c; ++ci) {
      for (int i = 0; i < n; ++i) {
        out[(static_cast<std::size_t>(bi) * n + i) * c + ci] =
            d[(static_cast<std::size_t>(bi) * c + ci) * n + i];
      }
    }
  }
  return Tensor::make_result({b, n, c}, std::move(out), {x}, [=](detail::TensorImpl& self) {
    auto gx = gbuf(x);
    for (int bi = 0; bi < b; ++bi) {
      for (int ci = 0; ci < c; ++ci) {
        for (int i = 0; i < n; ++i) {
          gx[(static_cast<std::size_t>(bi) * c + ci) * n + i] +=
              self.grad[(static_cast<std::size_t>(bi) * n + i) * c + ci];
        }
      }
    }
  });
}

Tensor from_tokens(const Tensor& t, int height, int width) {
  require_rank("from_tokens", t, 3);
  const int b = t.dim(0), n = t.dim(1), c = t.dim(2);
  if (n != height * width) {
    shape_error("from_tokens", t, std::to_string(height * width) + " tokens");
  }
  std::vector<double> out(t.numel());
  const auto d = t.data();
  for (int bi = 0; bi < b; ++bi) {
    for (int ci = 0; ci < c; ++ci) {
      for (int i = 0; i < n; ++i) {
        out[(static_cast<std::size_t>(bi) * c + ci) * n + i] =
            d[(static_cast<std::size_t>(bi) * n + i) * c + ci];
      }
    }
  }
  return Tensor::make_result({b, c, height, width}, std::move(out), {t},
                             [=](detail::TensorImpl& self) {
    auto gt = gbuf(t);
    for (int bi = 0; bi < b; ++bi) {
      for (int ci = 0; ci < c; ++ci) {
        for (int i = 0; i < n; ++i) {
          gt[(static_cast<std::size_t>(bi) * n + i) * c + ci] +=
              self.grad[(static_cast<std::size_t>(bi) * c + ci) * n + i];
        }
      }
    }
  });
}

Tensor nll_mean(const Tensor& logp, std::span<const int> labels, int ignore) {
  require_rank("nll_mean", logp, 4);
  const int b = logp.dim(0), c = logp.dim(1);
  const std::size_t hw = static_cast<std::size_t>(logp.dim(2)) * logp.dim(3);
  if (labels.size() != b * hw) {
    throw InputError("nll_mean: " + std::to_string(labels.size()) + " labels for logits " +
                     shape_str(logp.shape()));
  }
  const auto d = logp.data();
  double total = 0.0;
  std::size_t count = 0;
  for (int bi = 0; bi < b; ++bi) {
    for (std::size_t i = 0; i < hw; ++i) {
      const int y = labels[bi * hw + i];
      if (y == ignore) continue;
      if (y < 0 || y >= c) {
        throw InputError("nll_mean: label " + std::to_string(y) + " out of range for " +
                         std::to_string(c) + " classes");
      }
      total -= d[(static_cast<std::size_t>(bi) * c + y) * hw + i];
      ++count;
    }
  }
  if (count == 0) throw InputError("nll_mean: every pixel is ignored");
  const double inv = 1.0 / static_cast<double>(count);
  std::vector<int> lab(labels.begin(), labels.end());
  return Tensor::make_result({1}, {total * inv}, {logp},
                             [=, lab = std::move(lab)](detail::TensorImpl& self) {
    auto g = gbuf(logp);
    const double v = self.grad[0] * inv;
    for (int bi = 0; bi < b; ++bi) {
      for (std::size_t i = 0; i < hw; ++i) {
        const int y = lab[bi * hw + i];
        if (y == ignore) continue;
        g[(static_cast<std::size_t>(bi) * c + y) * hw + i] -= v;
      }
    }
  });
}

Tensor kl_div_mean(const Tensor& logp, std::span<const double> target,
                   std::span<const unsigned char> valid) {
  require_rank("kl_div_mean", logp, 4);
  const int b = logp.dim(0), c = logp.dim(1);
  const std::size_t hw = static_cast<std::size_t>(logp.dim(2)) * logp.dim(3);
  if (target.size() != logp.numel() || valid.size() != b * hw) {
    throw InputError("kl_div_mean: target/mask do not match logits " + shape_str(logp.shape()));
  }
  const auto d = logp.data();
  double total = 0.0;
  std::size_t count = 0;
  for (int bi = 0; bi < b; ++bi) {
    for (std::size_t i = 0; i < hw; ++i) {
      if (!valid[bi * hw + i]) continue;
      ++count;
      for (int ci = 0; ci < c; ++ci) {
        const std::size_t j = (static_cast<std::size_t>(bi) * c + ci) * hw + i;
        const double t = target[j];
        if (t > 0.0) total += t * (std::log(t) - d[j]);
      }
    }
  }
  if (count == 0) throw InputError("kl_div_mean: every pixel is ignored");
  const double inv = 1.0 / static_cast<double>(count);
  std::vector<double> tgt(target.begin(), target.end());
  std::vector<unsigned char> mask(valid.begin(), valid.end());
  return Tensor::make_result({1}, {total * inv}, {logp},
                             [=, tgt = std::move(tgt), mask = std::move(mask)](
                                 detail::TensorImpl& self) {
    auto g = gbuf(logp);
    const double v = self.grad[0] * inv;
    for (int bi = 0; bi < b; ++bi) {
      for (std::size_t i = 0; i < hw; ++i) {
        if (!mask[bi * hw + i]) continue;
        for (int ci = 0; ci < c; ++ci) {
          const std::size_t j = (static_cast<std::size_t>(bi) * c + ci) * hw + i;
          g[j] -= v * tgt[j];
        }
      }
    }
  });
}

}  // namespace hiera::ops
