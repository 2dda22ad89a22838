#include "resnext/tensor.hpp"

#include <malloc.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "resnext/gemm.hpp"

namespace resnext {

namespace {

// Activations of a training step are tens of megabytes each. glibc serves
// those with fresh mmaps, and the page faults on every allocation cost more
// than the arithmetic; keep freed blocks on the heap for reuse instead.
[[maybe_unused]] const bool heap_tuned = [] {
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
  return true;
}();

}  // namespace

std::string to_string(const Shape& s) {
  return "[" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
         std::to_string(s.w) + "]";
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(shape), data_(shape.numel(), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data)
    : shape_(shape), data_(data.begin(), data.end()) {
  if (data_.size() != shape_.numel()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + to_string(shape_));
  }
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const& {
  return Tensor(*this).reshaped(shape);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) && {
  if (shape.numel() != shape_.numel()) {
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  shape_ = shape;
  return std::move(*this);
}

template <typename T>
void Tensor<T>::add_(const Tensor& other) {
  if (other.shape_ != shape_) {
    throw ShapeError("add_: shape mismatch " + to_string(shape_) + " vs " +
                     to_string(other.shape_));
  }
  T* dst = data_.data();
  const T* src = other.data_.data();
  const std::size_t count = data_.size();
#pragma omp simd
  for (std::size_t i = 0; i < count; ++i) dst[i] += src[i];
}

template <typename T>
void Tensor<T>::fill_(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  auto out = Tensor<T>::uninitialized(a.shape());
  const T* pa = a.raw();
  const T* pb = b.raw();
  T* po = out.raw();
  const std::size_t count = a.size();
#pragma omp simd
  for (std::size_t i = 0; i < count; ++i) po[i] = pa[i] + pb[i];
  return out;
}

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: empty part list");
  const Shape first = parts.front().shape();
  std::size_t channels = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: " + to_string(s) + " does not match " +
                       to_string(first) + " in batch or spatial extent");
    }
    channels += s.c;
  }
  Shape out_shape{first.n, channels, first.h, first.w};
  Tensor<T> out(out_shape);
  for (std::size_t n = 0; n < first.n; ++n) {
    T* dst = out.raw() + n * out_shape.sample();
    for (const auto& p : parts) {
      const std::size_t chunk = p.shape().sample();
      std::copy_n(p.raw() + n * chunk, chunk, dst);
      dst += chunk;
    }
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& x, std::span<const std::size_t> sizes) {
  const Shape s = x.shape();
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (total != s.c || sizes.empty()) {
    throw ShapeError("split_channels: sizes sum to " + std::to_string(total) + " but input " +
                     to_string(s) + " has " + std::to_string(s.c) + " channels");
  }
  std::vector<Tensor<T>> out;
  out.reserve(sizes.size());
  std::size_t first_channel = 0;
  for (std::size_t part : sizes) {
    Tensor<T> t(Shape{s.n, part, s.h, s.w});
    const std::size_t chunk = part * s.plane();
    for (std::size_t n = 0; n < s.n; ++n) {
      std::copy_n(x.raw() + n * s.sample() + first_channel * s.plane(), chunk,
                  t.raw() + n * chunk);
    }
    out.push_back(std::move(t));
    first_channel += part;
  }
  return out;
}

template <typename T>
Tensor<T> concat_batch(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_batch: empty part list");
  const Shape first = parts.front().shape();
  std::size_t batch = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.c != first.c || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_batch: " + to_string(s) + " does not match " + to_string(first));
    }
    batch += s.n;
  }
  std::vector<T> data;
  data.reserve(batch * first.sample());
  for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  return Tensor<T>(Shape{batch, first.c, first.h, first.w}, std::move(data));
}

template <typename T>
std::vector<Tensor<T>> split_batch(const Tensor<T>& x, std::span<const std::size_t> sizes) {
  const Shape s = x.shape();
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (total != s.n || sizes.empty()) {
    throw ShapeError("split_batch: sizes sum to " + std::to_string(total) + " but input " +
                     to_string(s) + " has batch " + std::to_string(s.n));
  }
  std::vector<Tensor<T>> out;
  const T* src = x.raw();
  for (std::size_t part : sizes) {
    const std::size_t count = part * s.sample();
    out.emplace_back(Shape{part, s.c, s.h, s.w}, std::vector<T>(src, src + count));
    src += count;
  }
  return out;
}

template <typename T>
Tensor<T> pad2d(const Tensor<T>& x, std::size_t pad) {
  if (pad == 0) return x;
  const Shape s = x.shape();
  const Shape o{s.n, s.c, s.h + 2 * pad, s.w + 2 * pad};
  Tensor<T> out(o);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t i = 0; i < s.h; ++i) {
        std::copy_n(&x(n, c, i, 0), s.w, &out(n, c, i + pad, pad));
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (!sa.is_matrix() || !sb.is_matrix() || sa.c != sb.n) {
    throw ShapeError("matmul: cannot multiply " + to_string(sa) + " by " + to_string(sb));
  }
  const int m = static_cast<int>(sa.n);
  const int k = static_cast<int>(sa.c);
  const int n = static_cast<int>(sb.c);
  Tensor<T> out(Shape{sa.n, sb.c, 1, 1});
  blas::gemm<T>(blas::Trans::no, blas::Trans::no, m, n, k, T(1), a.raw(), k, b.raw(), n, T(0),
                out.raw(), n);
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& m) {
  const Shape s = m.shape();
  if (!s.is_matrix()) throw ShapeError("transpose: " + to_string(s) + " is not a matrix");
  Tensor<T> out(Shape{s.c, s.n, 1, 1});
  for (std::size_t i = 0; i < s.n; ++i)
    for (std::size_t j = 0; j < s.c; ++j) out[j * s.n + i] = m[i * s.c + j];
  return out;
}

template <typename T>
double sum(const Tensor<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += static_cast<double>(v);
  return acc;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return worst;
}

#define RESNEXT_INSTANTIATE(T)                                                            \
  template class Tensor<T>;                                                               \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> concat_channels(std::span<const Tensor<T>>);                         \
  template std::vector<Tensor<T>> split_channels(const Tensor<T>&,                        \
                                                 std::span<const std::size_t>);           \
  template Tensor<T> concat_batch(std::span<const Tensor<T>>);                            \
  template std::vector<Tensor<T>> split_batch(const Tensor<T>&, std::span<const std::size_t>); \
  template Tensor<T> pad2d(const Tensor<T>&, std::size_t);                                \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> transpose(const Tensor<T>&);                                         \
  template double sum(const Tensor<T>&);                                                  \
  template double max_abs_diff(const Tensor<T>&, const Tensor<T>&);

RESNEXT_INSTANTIATE(float)
RESNEXT_INSTANTIATE(double)

#undef RESNEXT_INSTANTIATE

}  // namespace resnext
