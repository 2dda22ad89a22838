#pragma once

#include <cstddef>

#include "resnext/tensor.hpp"

namespace resnext {

// Extents of one (possibly grouped) 2-D convolution. Weight layout is
// [out_channels, in_channels / groups, kernel, kernel]; group g reads the
// contiguous input-channel range [g * in_per_group, (g + 1) * in_per_group).
struct ConvGeometry {
  std::size_t batch = 0;
  std::size_t in_channels = 0;
  std::size_t in_h = 0;
  std::size_t in_w = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t groups = 1;

  std::size_t out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  std::size_t in_per_group() const { return in_channels / groups; }
  std::size_t out_per_group() const { return out_channels / groups; }
  Shape input_shape() const { return {batch, in_channels, in_h, in_w}; }
  Shape output_shape() const { return {batch, out_channels, out_h(), out_w()}; }
  Shape weight_shape() const { return {out_channels, in_per_group(), kernel, kernel}; }

  // Validates divisibility, channel agreement and spatial fit.
  static ConvGeometry make(const Shape& input, const Shape& weight, std::size_t stride,
                           std::size_t pad, std::size_t groups);
};

namespace kernels {

// im2col + GEMM per (sample, group); OpenMP-parallel over the batch.
// All outputs are overwritten, never accumulated into.
template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* weight, const T* bias, T* y);

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* dy, const T* weight, T* dx);

// Partial sums are reduced in thread order, so results are bitwise
// reproducible for a fixed thread count.
template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, const T* x, const T* dy, T* dweight);

// Serial nested-loop versions, kept as the correctness oracle and the
// benchmark baseline.
namespace reference {

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* weight, const T* bias, T* y);

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* dy, const T* weight, T* dx);

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, const T* x, const T* dy, T* dweight);

}  // namespace reference
}  // namespace kernels
}  // namespace resnext
