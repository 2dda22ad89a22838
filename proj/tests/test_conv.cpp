#include <doctest.h>

#include <omp.h>

#include <vector>

#include "resnext/conv_kernels.hpp"
#include "resnext/layers.hpp"
#include "support.hpp"

using namespace resnext;
using resnext::testing::random_tensor;

namespace {

// Direct evaluation of the convolution sum, written independently of the
// library's reference kernels.
Tensord oracle_conv(const Tensord& x, const Tensord& w, std::size_t stride, std::size_t pad,
                    std::size_t groups) {
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  const std::size_t k = ws.h;
  const std::size_t oh = (xs.h + 2 * pad - k) / stride + 1;
  const std::size_t ow = (xs.w + 2 * pad - k) / stride + 1;
  const std::size_t icg = xs.c / groups;
  const std::size_t ocg = ws.n / groups;
  Tensord y(Shape{xs.n, ws.n, oh, ow});
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t o = 0; o < ws.n; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double s = 0.0;
          const std::size_t g = o / ocg;
          for (std::size_t cc = 0; cc < icg; ++cc)
            for (std::size_t u = 0; u < k; ++u)
              for (std::size_t v = 0; v < k; ++v) {
                const long r = long(i * stride + u) - long(pad);
                const long q = long(j * stride + v) - long(pad);
                if (r < 0 || q < 0 || r >= long(xs.h) || q >= long(xs.w)) continue;
                s += w(o, cc, u, v) * x(n, g * icg + cc, std::size_t(r), std::size_t(q));
              }
          y(n, o, i, j) = s;
        }
  return y;
}

struct Case {
  std::size_t batch, in, out, hw, k, stride, pad, groups;
};

std::vector<Case> grid() {
  std::vector<Case> cases;
  // groups 1, 2, 4 and C (= channel count, depthwise)
  for (std::size_t groups : {1u, 2u, 4u, 8u})
    for (std::size_t stride : {1u, 2u})
      for (std::size_t pad : {0u, 1u})
        for (std::size_t k : {1u, 3u}) cases.push_back({2, 8, 8, 7, k, stride, pad, groups});
  cases.push_back({3, 4, 12, 5, 3, 1, 1, 2});
  cases.push_back({1, 6, 3, 9, 3, 2, 1, 3});
  return cases;
}

}  // namespace

TEST_CASE("im2col kernels match the direct sum") {
  for (const Case& c : grid()) {
    CAPTURE(c.groups);
    CAPTURE(c.stride);
    CAPTURE(c.pad);
    CAPTURE(c.k);
    const auto x = random_tensor<double>(Shape{c.batch, c.in, c.hw, c.hw}, 100 + c.groups);
    const auto w = random_tensor<double>(Shape{c.out, c.in / c.groups, c.k, c.k}, 200 + c.k);
    const auto g = ConvGeometry::make(x.shape(), w.shape(), c.stride, c.pad, c.groups);
    const Tensord expect = oracle_conv(x, w, c.stride, c.pad, c.groups);

    Tensord fast(g.output_shape());
    kernels::conv2d_forward<double>(g, x.raw(), w.raw(), nullptr, fast.raw());
    CHECK(max_abs_diff(fast, expect) <= 1e-10);

    Tensord ref(g.output_shape());
    kernels::reference::conv2d_forward<double>(g, x.raw(), w.raw(), nullptr, ref.raw());
    CHECK(max_abs_diff(ref, expect) <= 1e-10);

    // float path
    const Tensorf xf = x.cast<float>();
    const Tensorf wf = w.cast<float>();
    Tensorf ff(g.output_shape());
    kernels::conv2d_forward<float>(g, xf.raw(), wf.raw(), nullptr, ff.raw());
    CHECK(max_abs_diff(ff.cast<double>(), expect) <= 1e-5);

    // Backward: the adjoint identity <dy, conv(dx)> = <conv^T(dy), dx>, and
    // agreement with the nested-loop versions.
    const auto dy = random_tensor<double>(g.output_shape(), 300);
    Tensord dx(g.input_shape());
    Tensord dx_ref(g.input_shape());
    kernels::conv2d_backward_input<double>(g, dy.raw(), w.raw(), dx.raw());
    kernels::reference::conv2d_backward_input<double>(g, dy.raw(), w.raw(), dx_ref.raw());
    CHECK(max_abs_diff(dx, dx_ref) <= 1e-10);
    double lhs = 0.0;
    double rhs = 0.0;
    for (std::size_t i = 0; i < dy.size(); ++i) lhs += dy[i] * expect[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs += dx[i] * x[i];
    CHECK(std::abs(lhs - rhs) <= 1e-9 * (1.0 + std::abs(lhs)));

    Tensord dw(g.weight_shape());
    Tensord dw_ref(g.weight_shape());
    kernels::conv2d_backward_weight<double>(g, x.raw(), dy.raw(), dw.raw());
    kernels::reference::conv2d_backward_weight<double>(g, x.raw(), dy.raw(), dw_ref.raw());
    CHECK(max_abs_diff(dw, dw_ref) <= 1e-10);
    double rhs_w = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) rhs_w += dw[i] * w[i];
    CHECK(std::abs(lhs - rhs_w) <= 1e-9 * (1.0 + std::abs(lhs)));
  }
}

TEST_CASE("grouped conv equals split, dense convs, concat") {
  for (std::size_t groups : {1u, 2u, 4u}) {
    for (std::size_t stride : {1u, 2u}) {
      const std::size_t in = 8;
      const std::size_t out = 12;
      const auto x = random_tensor<float>(Shape{2, in, 6, 6}, 7);
      const auto w = random_tensor<float>(Shape{out, in / groups, 3, 3}, 8);
      const auto g = ConvGeometry::make(x.shape(), w.shape(), stride, 1, groups);
      Tensorf y(g.output_shape());
      kernels::conv2d_forward<float>(g, x.raw(), w.raw(), nullptr, y.raw());

      const std::vector<std::size_t> in_sizes(groups, in / groups);
      const std::vector<std::size_t> out_sizes(groups, out / groups);
      const auto xs = split_channels(x, in_sizes);
      const auto ws = split_batch(w, out_sizes);
      std::vector<Tensorf> parts;
      for (std::size_t i = 0; i < groups; ++i) {
        const auto gi = ConvGeometry::make(xs[i].shape(), ws[i].shape(), stride, 1, 1);
        Tensorf yi(gi.output_shape());
        kernels::conv2d_forward<float>(gi, xs[i].raw(), ws[i].raw(), nullptr, yi.raw());
        parts.push_back(std::move(yi));
      }
      CHECK(max_abs_diff(concat_channels<float>(parts), y) <= 1e-6);
    }
  }
}

TEST_CASE("depthwise conv equals per-channel filtering") {
  const auto x = random_tensor<double>(Shape{2, 5, 6, 6}, 21);
  const auto w = random_tensor<double>(Shape{5, 1, 3, 3}, 22);
  const auto g = ConvGeometry::make(x.shape(), w.shape(), 1, 1, 5);
  Tensord y(g.output_shape());
  kernels::conv2d_forward<double>(g, x.raw(), w.raw(), nullptr, y.raw());
  double worst = 0.0;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 5; ++c)
      for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j) {
          double s = 0.0;
          for (int u = -1; u <= 1; ++u)
            for (int v = -1; v <= 1; ++v) {
              const int r = int(i) + u;
              const int q = int(j) + v;
              if (r < 0 || q < 0 || r >= 6 || q >= 6) continue;
              s += w(c, 0, std::size_t(u + 1), std::size_t(v + 1)) *
                   x(n, c, std::size_t(r), std::size_t(q));
            }
          worst = std::max(worst, std::abs(s - y(n, c, i, j)));
        }
  CHECK(worst <= 1e-12);
}

TEST_CASE("conv2d layer shapes and identity") {
  Rng rng(1);
  const auto stem = Conv2d<float>::make(3, 64, 3, 1, 1, 1, rng);
  const Variable<float> x(random_tensor<float>(Shape{1, 3, 32, 32}, 2));
  CHECK(conv2d<float>(nullptr, x, stem).shape() == Shape{1, 64, 32, 32});

  Conv2d<float> ident{Variable<float>(Tensorf(Shape{4, 1, 1, 1}, 1.0f)), std::nullopt, 1, 0, 4};
  const Variable<float> z(random_tensor<float>(Shape{2, 4, 5, 5}, 3));
  CHECK(max_abs_diff(conv2d<float>(nullptr, z, ident).value(), z.value()) == 0.0);
}

TEST_CASE("conv geometry validation") {
  CHECK_THROWS_AS(ConvGeometry::make(Shape{1, 6, 5, 5}, Shape{4, 3, 3, 3}, 1, 1, 4), ShapeError);
  CHECK_THROWS_AS(ConvGeometry::make(Shape{1, 6, 5, 5}, Shape{4, 2, 3, 3}, 1, 1, 2), ShapeError);
  CHECK_THROWS_AS(ConvGeometry::make(Shape{1, 4, 2, 2}, Shape{4, 4, 5, 5}, 1, 0, 1), ShapeError);
}

TEST_CASE("parallel kernels are reproducible and agree with one thread") {
  const auto x = random_tensor<float>(Shape{6, 8, 9, 9}, 31);
  const auto w = random_tensor<float>(Shape{8, 4, 3, 3}, 32);
  const auto dy = random_tensor<float>(Shape{6, 8, 9, 9}, 33);
  const auto g = ConvGeometry::make(x.shape(), w.shape(), 1, 1, 2);
  auto run = [&](int threads) {
    omp_set_num_threads(threads);
    Tensorf dw(g.weight_shape());
    kernels::conv2d_backward_weight<float>(g, x.raw(), dy.raw(), dw.raw());
    return dw;
  };
  const Tensorf a = run(3);
  const Tensorf b = run(3);
  const Tensorf one = run(1);
  omp_set_num_threads(1);
  CHECK(max_abs_diff(a, b) == 0.0);
  CHECK(max_abs_diff(a, one) <= 1e-4);
}
