#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace resnext {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Batch-channel-height-width extent. Matrices use [rows, cols, 1, 1].
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t numel() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  constexpr std::size_t sample() const { return c * h * w; }
  constexpr bool is_matrix() const { return h == 1 && w == 1; }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

// Value-initialises nothing on resize, so a kernel that overwrites its whole
// output skips the zero fill.
template <typename T>
struct DefaultInitAllocator : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = DefaultInitAllocator<U>;
  };
  DefaultInitAllocator() = default;
  template <typename U>
  DefaultInitAllocator(const DefaultInitAllocator<U>&) noexcept {}

  template <typename U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor zeros(Shape shape) { return Tensor(shape, T(0)); }
  // Contents are indeterminate; every element must be written before use.
  static Tensor uninitialized(Shape shape) {
    Tensor t;
    t.shape_ = shape;
    t.data_.resize(shape.numel());
    return t;
  }
  static Tensor ones(Shape shape) { return Tensor(shape, T(1)); }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> data) {
    return Tensor(Shape{rows, cols, 1, 1}, std::move(data));
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* raw() { return data_.data(); }
  const T* raw() const { return data_.data(); }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[offset(n, c, h, w)];
  }
  const T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[offset(n, c, h, w)];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Same buffer, different extent; element counts must agree.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  // In-place accumulate; the one mutating kernel, used for gradient slots.
  void add_(const Tensor& other);
  void fill_(T value);

  bool all_finite() const;

 private:
  Shape shape_{};
  std::vector<T, DefaultInitAllocator<T>> data_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

// Parts laid out along the channel axis in list order.
template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts);

template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& x, std::span<const std::size_t> sizes);

// Same as above along the batch axis; conv weights keep output channels there.
template <typename T>
Tensor<T> concat_batch(std::span<const Tensor<T>> parts);

template <typename T>
std::vector<Tensor<T>> split_batch(const Tensor<T>& x, std::span<const std::size_t> sizes);

template <typename T>
Tensor<T> pad2d(const Tensor<T>& x, std::size_t pad);

// [m,k,1,1] x [k,n,1,1] -> [m,n,1,1]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose(const Tensor<T>& m);

template <typename T>
double sum(const Tensor<T>& x);

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace resnext
