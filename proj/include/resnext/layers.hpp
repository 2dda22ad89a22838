#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "resnext/autograd.hpp"
#include "resnext/conv_kernels.hpp"
#include "resnext/tensor.hpp"

namespace resnext {

using Rng = std::mt19937_64;

enum class Mode { train, eval };

// Weight [out_channels, in_channels / groups, k, k].
template <typename T>
struct Conv2d {
  Variable<T> weight;
  std::optional<Variable<T>> bias;
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t groups = 1;

  std::size_t out_channels() const { return weight.shape().n; }
  std::size_t in_channels() const { return weight.shape().c * groups; }
  std::size_t kernel() const { return weight.shape().h; }

  // He-initialised, bias-free (every conv in the network feeds a batch norm).
  static Conv2d make(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                     std::size_t pad, std::size_t groups, Rng& rng);
};

template <typename T>
struct BatchNorm2d {
  Variable<T> gamma;  // [1, c, 1, 1]
  Variable<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T epsilon = T(1e-5);

  std::size_t channels() const { return gamma.shape().c; }

  static BatchNorm2d make(std::size_t channels);
};

// Weight [in_features, out_features], bias [1, out_features].
template <typename T>
struct Linear {
  Variable<T> weight;
  Variable<T> bias;

  static Linear make(std::size_t in, std::size_t out, Rng& rng);
};

// Zero-mean normal with std sqrt(2 / fan_in).
template <typename T>
Tensor<T> he_init(const Shape& shape, std::size_t fan_in, Rng& rng);

// Differentiable ops. A null tape, or inputs without requires_grad, runs the
// forward only.
template <typename T>
Variable<T> conv2d(Tape<T>* tape, const Variable<T>& x, const Conv2d<T>& p);

// Train mode normalises with biased batch statistics and updates running
// stats; eval mode reads running stats only.
template <typename T>
Variable<T> batchnorm2d(Tape<T>* tape, const Variable<T>& x, BatchNorm2d<T>& p, Mode mode);

template <typename T>
Variable<T> relu(Tape<T>* tape, const Variable<T>& x);

// [n, c, h, w] -> [n, c, 1, 1]
template <typename T>
Variable<T> global_avg_pool(Tape<T>* tape, const Variable<T>& x);

template <typename T>
Variable<T> linear(Tape<T>* tape, const Variable<T>& x, const Linear<T>& p);

// Mean over the batch of -log softmax(logits)[label]; returns [1,1,1,1].
template <typename T>
Variable<T> softmax_cross_entropy(Tape<T>* tape, const Variable<T>& logits,
                                  std::span<const int> labels);

template <typename T>
Variable<T> add(Tape<T>* tape, const Variable<T>& a, const Variable<T>& b);

template <typename T>
Variable<T> mul(Tape<T>* tape, const Variable<T>& a, const Variable<T>& b);

template <typename T>
Variable<T> sum(Tape<T>* tape, const Variable<T>& x);

template <typename T>
Variable<T> concat_channels(Tape<T>* tape, std::span<const Variable<T>> parts);

template <typename T>
std::vector<Variable<T>> split_channels(Tape<T>* tape, const Variable<T>& x,
                                        std::span<const std::size_t> sizes);

}  // namespace resnext
