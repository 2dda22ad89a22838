#include "resnext/conv_kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <vector>

#include "resnext/gemm.hpp"

namespace resnext {

ConvGeometry ConvGeometry::make(const Shape& input, const Shape& weight, std::size_t stride,
                                std::size_t pad, std::size_t groups) {
  if (groups == 0 || stride == 0) throw ShapeError("conv2d: stride and groups must be positive");
  if (weight.h != weight.w) throw ShapeError("conv2d: kernel must be square, got " + to_string(weight));
  if (input.c % groups != 0 || weight.n % groups != 0) {
    throw ShapeError("conv2d: channels in=" + std::to_string(input.c) +
                     " out=" + std::to_string(weight.n) + " not divisible by groups=" +
                     std::to_string(groups));
  }
  if (weight.c * groups != input.c) {
    throw ShapeError("conv2d: input " + to_string(input) + " does not match weight " +
                     to_string(weight) + " with groups=" + std::to_string(groups));
  }
  if (input.h + 2 * pad < weight.h || input.w + 2 * pad < weight.w) {
    throw ShapeError("conv2d: input " + to_string(input) + " smaller than kernel after padding");
  }
  ConvGeometry g;
  g.batch = input.n;
  g.in_channels = input.c;
  g.in_h = input.h;
  g.in_w = input.w;
  g.out_channels = weight.n;
  g.kernel = weight.h;
  g.stride = stride;
  g.pad = pad;
  g.groups = groups;
  return g;
}

namespace kernels {
namespace {

bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.pad == 0; }

// cols[(c * k + u) * k + v][oi * ow + oj] = x_pad[c][oi * s + u][oj * s + v]
template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* cols) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(g.in_h);
  const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(g.in_w);
  for (std::size_t c = 0; c < g.in_per_group(); ++c) {
    const T* plane = x + c * g.in_h * g.in_w;
    for (std::size_t u = 0; u < k; ++u) {
      for (std::size_t v = 0; v < k; ++v) {
        T* row = cols + ((c * k + u) * k + v) * oh * ow;
        for (std::size_t oi = 0; oi < oh; ++oi) {
          const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * g.stride + u) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          T* out = row + oi * ow;
          if (ii < 0 || ii >= H) {
            std::fill_n(out, ow, T(0));
            continue;
          }
          const T* src = plane + ii * W;
          for (std::size_t oj = 0; oj < ow; ++oj) {
            const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * g.stride + v) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            out[oj] = (jj < 0 || jj >= W) ? T(0) : src[jj];
          }
        }
      }
    }
  }
}

// Scatter-add inverse of im2col into an already zeroed dx group.
template <typename T>
void col2im(const ConvGeometry& g, const T* cols, T* dx) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(g.in_h);
  const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(g.in_w);
  for (std::size_t c = 0; c < g.in_per_group(); ++c) {
    T* plane = dx + c * g.in_h * g.in_w;
    for (std::size_t u = 0; u < k; ++u) {
      for (std::size_t v = 0; v < k; ++v) {
        const T* row = cols + ((c * k + u) * k + v) * oh * ow;
        for (std::size_t oi = 0; oi < oh; ++oi) {
          const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * g.stride + u) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (ii < 0 || ii >= H) continue;
          T* dst = plane + ii * W;
          const T* in = row + oi * ow;
          for (std::size_t oj = 0; oj < ow; ++oj) {
            const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * g.stride + v) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (jj >= 0 && jj < W) dst[jj] += in[oj];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* weight, const T* bias, T* y) {
  const std::size_t P = g.out_h() * g.out_w();
  const std::size_t K = g.in_per_group() * g.kernel * g.kernel;
  const std::size_t Og = g.out_per_group();
  const bool direct = is_pointwise(g);
  const std::ptrdiff_t batch = static_cast<std::ptrdiff_t>(g.batch);

#pragma omp parallel
  {
    std::vector<T, DefaultInitAllocator<T>> cols(direct ? 0 : K * P);
#pragma omp for schedule(static)
    for (std::ptrdiff_t n = 0; n < batch; ++n) {
      for (std::size_t grp = 0; grp < g.groups; ++grp) {
        const T* xg = x + (n * g.in_channels + grp * g.in_per_group()) * g.in_h * g.in_w;
        T* yg = y + (n * g.out_channels + grp * Og) * P;
        const T* b = xg;
        if (!direct) {
          im2col(g, xg, cols.data());
          b = cols.data();
        }
        blas::gemm<T>(blas::Trans::no, blas::Trans::no, static_cast<int>(Og),
                      static_cast<int>(P), static_cast<int>(K), T(1), weight + grp * Og * K,
                      static_cast<int>(K), b, static_cast<int>(P), T(0), yg,
                      static_cast<int>(P));
        if (bias != nullptr) {
          for (std::size_t o = 0; o < Og; ++o) {
            const T bo = bias[grp * Og + o];
            T* row = yg + o * P;
            for (std::size_t p = 0; p < P; ++p) row[p] += bo;
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* dy, const T* weight, T* dx) {
  const std::size_t P = g.out_h() * g.out_w();
  const std::size_t K = g.in_per_group() * g.kernel * g.kernel;
  const std::size_t Og = g.out_per_group();
  const std::size_t in_group = g.in_per_group() * g.in_h * g.in_w;
  const bool direct = is_pointwise(g);
  const std::ptrdiff_t batch = static_cast<std::ptrdiff_t>(g.batch);

#pragma omp parallel
  {
    std::vector<T, DefaultInitAllocator<T>> cols(direct ? 0 : K * P);
#pragma omp for schedule(static)
    for (std::ptrdiff_t n = 0; n < batch; ++n) {
      for (std::size_t grp = 0; grp < g.groups; ++grp) {
        const T* dyg = dy + (n * g.out_channels + grp * Og) * P;
        T* dxg = dx + n * g.in_channels * g.in_h * g.in_w + grp * in_group;
        T* target = direct ? dxg : cols.data();
        blas::gemm<T>(blas::Trans::yes, blas::Trans::no, static_cast<int>(K),
                      static_cast<int>(P), static_cast<int>(Og), T(1), weight + grp * Og * K,
                      static_cast<int>(K), dyg, static_cast<int>(P), T(0), target,
                      static_cast<int>(P));
        if (!direct) {
          std::fill_n(dxg, in_group, T(0));
          col2im(g, cols.data(), dxg);
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, const T* x, const T* dy, T* dweight) {
  const std::size_t P = g.out_h() * g.out_w();
  const std::size_t K = g.in_per_group() * g.kernel * g.kernel;
  const std::size_t Og = g.out_per_group();
  const std::size_t wsize = g.out_channels * K;
  const bool direct = is_pointwise(g);
  const std::ptrdiff_t batch = static_cast<std::ptrdiff_t>(g.batch);

  const int threads = std::max(1, std::min<int>(omp_get_max_threads(), static_cast<int>(batch)));
  std::vector<std::vector<T>> partial(static_cast<std::size_t>(threads));

#pragma omp parallel num_threads(threads)
  {
    auto& acc = partial[static_cast<std::size_t>(omp_get_thread_num())];
    acc.assign(wsize, T(0));
    std::vector<T, DefaultInitAllocator<T>> cols(direct ? 0 : K * P);
#pragma omp for schedule(static)
    for (std::ptrdiff_t n = 0; n < batch; ++n) {
      for (std::size_t grp = 0; grp < g.groups; ++grp) {
        const T* xg = x + (n * g.in_channels + grp * g.in_per_group()) * g.in_h * g.in_w;
        const T* dyg = dy + (n * g.out_channels + grp * Og) * P;
        const T* b = xg;
        if (!direct) {
          im2col(g, xg, cols.data());
          b = cols.data();
        }
        blas::gemm<T>(blas::Trans::no, blas::Trans::yes, static_cast<int>(Og),
                      static_cast<int>(K), static_cast<int>(P), T(1), dyg, static_cast<int>(P),
                      b, static_cast<int>(P), T(1), acc.data() + grp * Og * K,
                      static_cast<int>(K));
      }
    }
  }

  std::copy(partial[0].begin(), partial[0].end(), dweight);
  for (std::size_t t = 1; t < partial.size(); ++t) {
    const T* src = partial[t].data();
    for (std::size_t i = 0; i < wsize; ++i) dweight[i] += src[i];
  }
}

namespace reference {
namespace {

// Returns false when the tap falls into the zero padding.
bool input_index(const ConvGeometry& g, std::size_t oi, std::size_t oj, std::size_t u,
                 std::size_t v, std::size_t& ii, std::size_t& jj) {
  const std::ptrdiff_t pi =
      static_cast<std::ptrdiff_t>(oi * g.stride + u) - static_cast<std::ptrdiff_t>(g.pad);
  const std::ptrdiff_t pj =
      static_cast<std::ptrdiff_t>(oj * g.stride + v) - static_cast<std::ptrdiff_t>(g.pad);
  if (pi < 0 || pj < 0 || pi >= static_cast<std::ptrdiff_t>(g.in_h) ||
      pj >= static_cast<std::ptrdiff_t>(g.in_w)) {
    return false;
  }
  ii = static_cast<std::size_t>(pi);
  jj = static_cast<std::size_t>(pj);
  return true;
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* weight, const T* bias, T* y) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  const std::size_t cg = g.in_per_group(), og = g.out_per_group();
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      const std::size_t first_c = (o / og) * cg;
      for (std::size_t oi = 0; oi < oh; ++oi)
        for (std::size_t oj = 0; oj < ow; ++oj) {
          T acc = bias != nullptr ? bias[o] : T(0);
          for (std::size_t c = 0; c < cg; ++c)
            for (std::size_t u = 0; u < k; ++u)
              for (std::size_t v = 0; v < k; ++v) {
                std::size_t ii = 0, jj = 0;
                if (!input_index(g, oi, oj, u, v, ii, jj)) continue;
                acc += weight[((o * cg + c) * k + u) * k + v] *
                       x[((n * g.in_channels + first_c + c) * g.in_h + ii) * g.in_w + jj];
              }
          y[((n * g.out_channels + o) * oh + oi) * ow + oj] = acc;
        }
    }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* dy, const T* weight, T* dx) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  const std::size_t cg = g.in_per_group(), og = g.out_per_group();
  std::fill_n(dx, g.batch * g.in_channels * g.in_h * g.in_w, T(0));
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      const std::size_t first_c = (o / og) * cg;
      for (std::size_t oi = 0; oi < oh; ++oi)
        for (std::size_t oj = 0; oj < ow; ++oj) {
          const T grad = dy[((n * g.out_channels + o) * oh + oi) * ow + oj];
          for (std::size_t c = 0; c < cg; ++c)
            for (std::size_t u = 0; u < k; ++u)
              for (std::size_t v = 0; v < k; ++v) {
                std::size_t ii = 0, jj = 0;
                if (!input_index(g, oi, oj, u, v, ii, jj)) continue;
                dx[((n * g.in_channels + first_c + c) * g.in_h + ii) * g.in_w + jj] +=
                    grad * weight[((o * cg + c) * k + u) * k + v];
              }
        }
    }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, const T* x, const T* dy, T* dweight) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  const std::size_t cg = g.in_per_group(), og = g.out_per_group();
  std::fill_n(dweight, g.out_channels * cg * k * k, T(0));
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      const std::size_t first_c = (o / og) * cg;
      for (std::size_t oi = 0; oi < oh; ++oi)
        for (std::size_t oj = 0; oj < ow; ++oj) {
          const T grad = dy[((n * g.out_channels + o) * oh + oi) * ow + oj];
          for (std::size_t c = 0; c < cg; ++c)
            for (std::size_t u = 0; u < k; ++u)
              for (std::size_t v = 0; v < k; ++v) {
                std::size_t ii = 0, jj = 0;
                if (!input_index(g, oi, oj, u, v, ii, jj)) continue;
                dweight[((o * cg + c) * k + u) * k + v] +=
                    grad * x[((n * g.in_channels + first_c + c) * g.in_h + ii) * g.in_w + jj];
              }
        }
    }
}

}  // namespace reference

#define RESNEXT_INSTANTIATE(T)                                                                  \
  template void conv2d_forward<T>(const ConvGeometry&, const T*, const T*, const T*, T*);       \
  template void conv2d_backward_input<T>(const ConvGeometry&, const T*, const T*, T*);          \
  template void conv2d_backward_weight<T>(const ConvGeometry&, const T*, const T*, T*);         \
  template void reference::conv2d_forward<T>(const ConvGeometry&, const T*, const T*, const T*, \
                                             T*);                                               \
  template void reference::conv2d_backward_input<T>(const ConvGeometry&, const T*, const T*,    \
                                                    T*);                                        \
  template void reference::conv2d_backward_weight<T>(const ConvGeometry&, const T*, const T*,   \
                                                     T*);

RESNEXT_INSTANTIATE(float)
RESNEXT_INSTANTIATE(double)

#undef RESNEXT_INSTANTIATE

}  // namespace kernels
}  // namespace resnext
