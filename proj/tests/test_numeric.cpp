#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "hiera/error.hpp"
#include "hiera/htf.hpp"
#include "hiera/layers.hpp"
#include "hiera/ops.hpp"
#include "hiera/optim.hpp"
#include "gradcheck_cases.hpp"
#include "support.hpp"

using namespace hiera;
using testsupport::gradcheck;
using testsupport::param;
using testsupport::rand_away;
using testsupport::randn;
using testsupport::weighted_sum;

namespace {

// Naive same-padding convolution.
std::vector<double> conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b) {
  const int B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(0), k = w.dim(2), r = k / 2;
  std::vector<double> out(static_cast<std::size_t>(B) * Co * H * W, 0.0);
  for (int n = 0; n < B; ++n)
    for (int o = 0; o < Co; ++o)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
          double s = b.defined() ? b.data()[o] : 0.0;
          for (int c = 0; c < Ci; ++c)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int sy = y + ky - r, sx = xx + kx - r;
                if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                s += x.at(n, c, sy, sx) * w.at(o, c, ky, kx);
              }
          out[((static_cast<std::size_t>(n) * Co + o) * H + y) * W + xx] = s;
        }
  return out;
}

double bilinear_oracle(const Tensor& x, int n, int c, int oy, int ox, int oh, int ow) {
  const int H = x.dim(2), W = x.dim(3);
  auto src = [](int o, int in, int out) {
    return std::max(0.0, (o + 0.5) * static_cast<double>(in) / out - 0.5);
  };
  const double fy = src(oy, H, oh), fx = src(ox, W, ow);
  const int y0 = std::min(static_cast<int>(fy), H - 1), x0 = std::min(static_cast<int>(fx), W - 1);
  const int y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
  const double dy = fy - y0, dx = fx - x0;
  return (1 - dy) * ((1 - dx) * x.at(n, c, y0, x0) + dx * x.at(n, c, y0, x1)) +
         dy * ((1 - dx) * x.at(n, c, y1, x0) + dx * x.at(n, c, y1, x1));
}

}  // namespace

TEST_CASE("broadcast add matches explicit loop") {
  Rng rng(1);
  const Tensor a = randn({2, 3, 4, 5}, rng), b = randn({3, 1, 5}, rng);
  const Tensor c = ops::add(a, b);
  REQUIRE(c.shape() == Shape{2, 3, 4, 5});
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j)
        for (int k = 0; k < 5; ++k)
          CHECK(c.at(n, i, j, k) == a.at(n, i, j, k) + b.data()[i * 5 + k]);
  CHECK_THROWS_AS(ops::add(a, randn({4, 4}, rng)), InputError);
}

TEST_CASE("matmul and bmm match loops") {
  Rng rng(2);
  const Tensor a = randn({3, 4}, rng), b = randn({4, 5}, rng);
  const Tensor c = ops::matmul(a, b);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j) {
      double s = 0.0;
      for (int k = 0; k < 4; ++k) s += a.data()[i * 4 + k] * b.data()[k * 5 + j];
      CHECK(c.data()[i * 5 + j] == doctest::Approx(s).epsilon(1e-14));
    }
  const Tensor x = randn({2, 3, 4}, rng), y = randn({2, 5, 4}, rng);
  const Tensor z = ops::bmm(x, y, true);
  REQUIRE(z.shape() == Shape{2, 3, 5});
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 5; ++j) {
        double s = 0.0;
        for (int k = 0; k < 4; ++k) s += x.data()[(n * 3 + i) * 4 + k] * y.data()[(n * 5 + j) * 4 + k];
        CHECK(z.data()[(n * 3 + i) * 5 + j] == doctest::Approx(s).epsilon(1e-14));
      }
}

TEST_CASE("conv2d matches naive loops for 1x1 and 3x3") {
  Rng rng(3);
  for (int k : {1, 3}) {
    const Tensor x = randn({2, 3, 5, 6}, rng), w = randn({4, 3, k, k}, rng), b = randn({4}, rng);
    const Tensor y = ops::conv2d(x, w, b);
    const auto ref = conv_oracle(x, w, b);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
  CHECK_THROWS_AS(ops::conv2d(randn({1, 2, 4, 4}, rng), randn({3, 3, 3, 3}, rng)), InputError);
}

TEST_CASE("bilinear upsample follows half-pixel centres") {
  Rng rng(4);
  const Tensor x = randn({1, 2, 3, 4}, rng);
  const Tensor y = ops::upsample_bilinear(x, 6, 8);
  for (int c = 0; c < 2; ++c)
    for (int oy = 0; oy < 6; ++oy)
      for (int ox = 0; ox < 8; ++ox)
        CHECK(y.at(0, c, oy, ox) == doctest::Approx(bilinear_oracle(x, 0, c, oy, ox, 6, 8)).epsilon(1e-13));
  // Same size is a copy.
  const Tensor same = ops::upsample_bilinear(x, 3, 4);
  CHECK(testsupport::bitwise_equal(same, x));
}

TEST_CASE("softmax, log_softmax and layer_norm values") {
  Rng rng(5);
  const Tensor x = randn({2, 5, 3, 3}, rng, 3.0);
  const Tensor p = ops::softmax(x, 1), lp = ops::log_softmax(x, 1);
  for (int n = 0; n < 2; ++n)
    for (int y = 0; y < 3; ++y)
      for (int xx = 0; xx < 3; ++xx) {
        double z = 0.0;
        for (int c = 0; c < 5; ++c) z += std::exp(x.at(n, c, y, xx));
        for (int c = 0; c < 5; ++c) {
          CHECK(p.at(n, c, y, xx) == doctest::Approx(std::exp(x.at(n, c, y, xx)) / z).epsilon(1e-13));
          CHECK(lp.at(n, c, y, xx) == doctest::Approx(x.at(n, c, y, xx) - std::log(z)).epsilon(1e-13));
        }
      }
  const Tensor t = randn({2, 3, 6}, rng), g = randn({6}, rng), b = randn({6}, rng);
  const Tensor ln = ops::layer_norm(t, g, b);
  for (int r = 0; r < 6; ++r) {
    double m = 0.0, v = 0.0;
    for (int c = 0; c < 6; ++c) m += t.data()[r * 6 + c] / 6.0;
    for (int c = 0; c < 6; ++c) v += (t.data()[r * 6 + c] - m) * (t.data()[r * 6 + c] - m) / 6.0;
    for (int c = 0; c < 6; ++c) {
      const double e = (t.data()[r * 6 + c] - m) / std::sqrt(v + 1e-5) * g.data()[c] + b.data()[c];
      CHECK(ln.data()[r * 6 + c] == doctest::Approx(e).epsilon(1e-12));
    }
  }
}

TEST_CASE("pooling and token reshapes") {
  Rng rng(6);
  const Tensor x = randn({2, 3, 4, 4}, rng);
  const Tensor gmp = ops::global_max_pool(x), cavg = ops::channel_avg_pool(x);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c) {
      double m = -1e300;
      for (int y = 0; y < 4; ++y)
        for (int xx = 0; xx < 4; ++xx) m = std::max(m, x.at(n, c, y, xx));
      CHECK(gmp.data()[n * 3 + c] == m);
    }
  CHECK(cavg.at(1, 0, 2, 3) == doctest::Approx((x.at(1, 0, 2, 3) + x.at(1, 1, 2, 3) + x.at(1, 2, 2, 3)) / 3));
  const Tensor tok = ops::to_tokens(x);
  CHECK(tok.shape() == Shape{2, 16, 3});
  CHECK(tok.data()[(1 * 16 + 2 * 4 + 3) * 3 + 2] == x.at(1, 2, 2, 3));
  CHECK(testsupport::bitwise_equal(ops::from_tokens(tok, 4, 4), x));
  CHECK_THROWS_AS(ops::avg_pool2(randn({1, 1, 3, 4}, rng)), InputError);
}

TEST_CASE("every op passes finite-difference gradient checks on three seeds") {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    for (const auto& [name, err] : testsupport::op_gradcheck_errors(seed)) {
      CAPTURE(seed);
      CAPTURE(name);
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("backward accumulates through shared subexpressions") {
  Tensor x = Tensor::from_data({2}, {1.5, -2.0}, true);
  const Tensor y = ops::mul(x, x);
  ops::sum(ops::add(y, y)).backward();
  CHECK(x.grad()[0] == doctest::Approx(6.0));
  CHECK(x.grad()[1] == doctest::Approx(-8.0));
}

TEST_CASE("sgd with momentum follows the closed form") {
  // f(p) = 0.5 * p^2, so g = p. v1 = g0; p1 = p0 - lr v1; v2 = m v1 + p1; p2 = p1 - lr v2.
  const double lr = 0.1, m = 0.9, p0 = 2.0;
  Tensor p = Tensor::from_data({1}, {p0}, true);
  SgdOptimizer opt(lr, m);
  opt.add("p", p);
  auto step = [&] {
    ops::scale(ops::mul(p, p), 0.5).backward();
    opt.step();
  };
  step();
  const double p1 = p0 - lr * p0;
  CHECK(p.item() == doctest::Approx(p1).epsilon(1e-15));
  step();
  const double p2 = p1 - lr * (m * p0 + p1);
  CHECK(p.item() == doctest::Approx(p2).epsilon(1e-15));
  CHECK((!p.has_grad() || p.grad()[0] == 0.0));
}

TEST_CASE("sgd clipping and per-parameter multipliers follow the closed form") {
  // f = 3a + 4b: gradient (3, 4) with norm 5.
  Tensor a = Tensor::scalar(1.0), b = Tensor::scalar(1.0);
  SgdOptimizer opt(0.1, 0.0);
  opt.add("a", a);
  opt.add("b", b, 0.25);
  opt.set_clip_norm(1.0);
  ops::add(ops::scale(a, 3.0), ops::scale(b, 4.0)).backward();
  opt.step();
  CHECK(opt.last_grad_norm() == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(a.item() == doctest::Approx(1.0 - 0.1 * 3.0 / 5.0).epsilon(1e-15));
  CHECK(b.item() == doctest::Approx(1.0 - 0.1 * 0.25 * 4.0 / 5.0).epsilon(1e-15));

  // Below the cap the gradient is untouched.
  opt.set_clip_norm(10.0);
  ops::add(ops::scale(a, 3.0), ops::scale(b, 4.0)).backward();
  const double a1 = a.item();
  opt.step();
  CHECK(a.item() == doctest::Approx(a1 - 0.1 * 3.0).epsilon(1e-15));

  Tensor c = Tensor::scalar(1.0);
  CHECK_THROWS_AS(opt.add("c", c, -1.0), InputError);
  CHECK_THROWS_AS(opt.add("c", c, std::nan("")), InputError);
}

TEST_CASE("optimizer refuses frozen and duplicate parameters") {
  Tensor a = Tensor::scalar(1.0, true);
  Tensor f = Tensor::scalar(1.0, true);
  f.freeze();
  SgdOptimizer opt(0.1, 0.0);
  CHECK_THROWS_AS(opt.add("f", f), InputError);
  opt.add("a", a);
  CHECK_THROWS_AS(opt.add("a2", a), InputError);
  CHECK_THROWS_AS(opt.step(), InputError);
}

TEST_CASE("frozen tensors never receive gradients") {
  Tensor w = Tensor::from_data({2}, {1.0, 2.0}, true);
  w.freeze();
  Tensor x = Tensor::from_data({2}, {3.0, 4.0}, true);
  ops::sum(ops::mul(w, x)).backward();
  CHECK_FALSE(w.has_grad());
  CHECK(x.grad()[1] == 2.0);
}

TEST_CASE("htf round trip and byte layout") {
  Rng rng(7);
  const Tensor t = randn({2, 3, 4}, rng);
  const auto bytes = encode_htf(t);
  REQUIRE(bytes.size() == 4 + 1 + 1 + 3 * 4 + 24 * 8);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "HTF1");
  CHECK(bytes[4] == 0);
  CHECK(bytes[5] == 3);
  CHECK(bytes[6] == 2);
  CHECK(bytes[10] == 3);
  CHECK(bytes[14] == 4);
  const Tensor back = decode_htf(bytes);
  CHECK(testsupport::bitwise_equal(back, t));
  auto cut = bytes;
  cut.pop_back();
  CHECK_THROWS_AS(decode_htf(cut), InputError);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_htf(bad), InputError);
  CHECK_THROWS_AS(read_htf("/nonexistent/x.htf"), IoError);
}

TEST_CASE("rng is reproducible and seeds differ by label") {
  std::uint64_t s = 0;
  CHECK(splitmix64(s) == 0xE220A8397B1DCDAFULL);  // published splitmix64 reference
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(derive_seed(1, "model") != derive_seed(1, "data"));
  CHECK(derive_seed(1, "model") == derive_seed(1, "model"));
  Rng n(3);
  double m = 0.0, v = 0.0;
  const int N = 20000;
  for (int i = 0; i < N; ++i) {
    const double x = n.normal();
    m += x / N;
    v += x * x / N;
  }
  CHECK(std::abs(m) < 0.03);
  CHECK(std::abs(v - 1.0) < 0.05);
}
