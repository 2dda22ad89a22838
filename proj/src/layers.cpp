#include "resnext/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace resnext {

template <typename T>
Conv2d<T> Conv2d<T>::make(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                          std::size_t pad, std::size_t groups, Rng& rng) {
  if (groups == 0 || in % groups != 0 || out % groups != 0) {
    throw ShapeError("conv: in=" + std::to_string(in) + " out=" + std::to_string(out) +
                     " not divisible by groups=" + std::to_string(groups));
  }
  const Shape ws{out, in / groups, kernel, kernel};
  Conv2d c;
  c.weight = Variable<T>(he_init<T>(ws, ws.c * ws.h * ws.w, rng), true);
  c.stride = stride;
  c.pad = pad;
  c.groups = groups;
  return c;
}

template <typename T>
BatchNorm2d<T> BatchNorm2d<T>::make(std::size_t channels) {
  const Shape s{1, channels, 1, 1};
  BatchNorm2d bn;
  bn.gamma = Variable<T>(Tensor<T>::ones(s), true);
  bn.beta = Variable<T>(Tensor<T>::zeros(s), true);
  bn.running_mean = Tensor<T>::zeros(s);
  bn.running_var = Tensor<T>::ones(s);
  return bn;
}

template <typename T>
Linear<T> Linear<T>::make(std::size_t in, std::size_t out, Rng& rng) {
  Linear l;
  l.weight = Variable<T>(he_init<T>(Shape{in, out, 1, 1}, in, rng), true);
  l.bias = Variable<T>(Tensor<T>::zeros(Shape{1, out, 1, 1}), true);
  return l;
}

template <typename T>
Tensor<T> he_init(const Shape& shape, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) throw std::invalid_argument("he_init: fan_in must be positive");
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Variable<T> conv2d(Tape<T>* tape, const Variable<T>& x, const Conv2d<T>& p) {
  const ConvGeometry geom =
      ConvGeometry::make(x.shape(), p.weight.shape(), p.stride, p.pad, p.groups);
  if (p.bias && p.bias->value().size() != geom.out_channels) {
    throw ShapeError("conv2d: bias length does not match " + std::to_string(geom.out_channels) +
                     " output channels");
  }
  const T* bias = p.bias ? p.bias->value().raw() : nullptr;
  auto y = Tensor<T>::uninitialized(geom.output_shape());
  kernels::conv2d_forward(geom, x.value().raw(), p.weight.value().raw(), bias, y.raw());

  const bool rec = needs_record(tape, {&x, &p.weight, p.bias ? &*p.bias : nullptr});
  auto out = Variable<T>::result(std::move(y), rec);
  if (!rec) return out;

  auto xv = x.shared_value();
  auto wv = p.weight.shared_value();
  auto xs = x.slot();
  auto ws = p.weight.slot();
  auto bs = p.bias ? p.bias->slot() : nullptr;
  tape->record(out, [geom, xv, wv, xs, ws, bs](const Tensor<T>& gy) {
    if (xs->requires_grad) {
      auto dx = Tensor<T>::uninitialized(geom.input_shape());
      kernels::conv2d_backward_input(geom, gy.raw(), wv->raw(), dx.raw());
      xs->accumulate(std::move(dx));
    }
    if (ws->requires_grad) {
      auto dw = Tensor<T>::uninitialized(geom.weight_shape());
      kernels::conv2d_backward_weight(geom, xv->raw(), gy.raw(), dw.raw());
      ws->accumulate(std::move(dw));
    }
    if (bs && bs->requires_grad) {
      const Shape os = geom.output_shape();
      Tensor<T> db(Shape{1, os.c, 1, 1});
      for (std::size_t n = 0; n < os.n; ++n)
        for (std::size_t o = 0; o < os.c; ++o) {
          const T* row = &gy(n, o, 0, 0);
          T acc = 0;
          for (std::size_t i = 0; i < os.plane(); ++i) acc += row[i];
          db[o] += acc;
        }
      bs->accumulate(std::move(db));
    }
  });
  return out;
}

template <typename T>
Variable<T> batchnorm2d(Tape<T>* tape, const Variable<T>& x, BatchNorm2d<T>& p, Mode mode) {
  const Shape s = x.shape();
  if (s.c != p.channels()) {
    throw ShapeError("batchnorm2d: input " + to_string(s) + " has " + std::to_string(s.c) +
                     " channels, parameters have " + std::to_string(p.channels()));
  }
  const std::size_t count = s.n * s.plane();
  if (mode == Mode::train && count < 2) {
    throw std::invalid_argument(
        "batchnorm2d: train mode needs more than one value per channel, got input " +
        to_string(s));
  }
  const bool rec = needs_record(tape, {&x, &p.gamma, &p.beta});
  const std::ptrdiff_t channels = static_cast<std::ptrdiff_t>(s.c);
  const T* gamma = p.gamma.value().raw();
  const T* beta = p.beta.value().raw();
  const Tensor<T>& xin = x.value();

  auto y = Tensor<T>::uninitialized(s);
  auto xhat = std::make_shared<Tensor<T>>(rec ? Tensor<T>::uninitialized(s) : Tensor<T>());
  auto invstd = std::make_shared<std::vector<T>>(s.c);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ci = 0; ci < channels; ++ci) {
    const std::size_t c = static_cast<std::size_t>(ci);
    const std::size_t plane = s.plane();
    double mean = 0.0;
    double var = 0.0;
    if (mode == Mode::train) {
      // Rows are short enough to sum in T; rows are combined in double.
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* row = &xin(n, c, 0, 0);
        T acc = 0;
#pragma omp simd reduction(+ : acc)
        for (std::size_t i = 0; i < plane; ++i) acc += row[i];
        mean += acc;
      }
      mean /= static_cast<double>(count);
      const T m = static_cast<T>(mean);
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* row = &xin(n, c, 0, 0);
        T acc = 0;
#pragma omp simd reduction(+ : acc)
        for (std::size_t i = 0; i < plane; ++i) acc += (row[i] - m) * (row[i] - m);
        var += acc;
      }
      var /= static_cast<double>(count);
      p.running_mean[c] = static_cast<T>((1.0 - p.momentum) * p.running_mean[c] +
                                         p.momentum * mean);
      p.running_var[c] =
          static_cast<T>((1.0 - p.momentum) * p.running_var[c] + p.momentum * var);
    } else {
      mean = p.running_mean[c];
      var = p.running_var[c];
    }
    const double istd = 1.0 / std::sqrt(var + static_cast<double>(p.epsilon));
    (*invstd)[c] = static_cast<T>(istd);
    const T m = static_cast<T>(mean);
    const T is = static_cast<T>(istd);
    const T g = gamma[c];
    const T b = beta[c];
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* row = &xin(n, c, 0, 0);
      T* o = &y(n, c, 0, 0);
      if (rec) {
        T* xh = &(*xhat)(n, c, 0, 0);
#pragma omp simd
        for (std::size_t i = 0; i < plane; ++i) {
          xh[i] = (row[i] - m) * is;
          o[i] = g * xh[i] + b;
        }
      } else {
#pragma omp simd
        for (std::size_t i = 0; i < plane; ++i) o[i] = g * ((row[i] - m) * is) + b;
      }
    }
  }

  auto out = Variable<T>::result(std::move(y), rec);
  if (!rec) return out;

  auto gv = p.gamma.shared_value();
  auto xs = x.slot();
  auto gs = p.gamma.slot();
  auto bs = p.beta.slot();
  tape->record(out, [s, mode, xhat, invstd, gv, xs, gs, bs](const Tensor<T>& gy) {
    const std::size_t count = s.n * s.plane();
    Tensor<T> dgamma(Shape{1, s.c, 1, 1});
    Tensor<T> dbeta(Shape{1, s.c, 1, 1});
    auto dx = Tensor<T>::uninitialized(xs->requires_grad ? s : Shape{});
    const std::ptrdiff_t channels = static_cast<std::ptrdiff_t>(s.c);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ci = 0; ci < channels; ++ci) {
      const std::size_t c = static_cast<std::size_t>(ci);
      const std::size_t plane = s.plane();
      double sum_dy = 0.0;
      double sum_dy_xhat = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* g = &gy(n, c, 0, 0);
        const T* xh = &(*xhat)(n, c, 0, 0);
        T a = 0;
        T b = 0;
#pragma omp simd reduction(+ : a, b)
        for (std::size_t i = 0; i < plane; ++i) {
          a += g[i];
          b += g[i] * xh[i];
        }
        sum_dy += a;
        sum_dy_xhat += b;
      }
      dgamma[c] = static_cast<T>(sum_dy_xhat);
      dbeta[c] = static_cast<T>(sum_dy);
      if (!xs->requires_grad) continue;
      const T scale = static_cast<T>(static_cast<double>((*gv)[c]) * (*invstd)[c]);
      const T mean_dy = static_cast<T>(sum_dy / static_cast<double>(count));
      const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / static_cast<double>(count));
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* g = &gy(n, c, 0, 0);
        const T* xh = &(*xhat)(n, c, 0, 0);
        T* d = &dx(n, c, 0, 0);
        if (mode == Mode::train) {
#pragma omp simd
          for (std::size_t i = 0; i < plane; ++i)
            d[i] = scale * (g[i] - mean_dy - xh[i] * mean_dy_xhat);
        } else {
#pragma omp simd
          for (std::size_t i = 0; i < plane; ++i) d[i] = scale * g[i];
        }
      }
    }
    if (xs->requires_grad) xs->accumulate(std::move(dx));
    if (gs->requires_grad) gs->accumulate(std::move(dgamma));
    if (bs->requires_grad) bs->accumulate(std::move(dbeta));
  });
  return out;
}

template <typename T>
Variable<T> relu(Tape<T>* tape, const Variable<T>& x) {
  auto y = Tensor<T>::uninitialized(x.shape());
  const T* in = x.value().raw();
  T* o = y.raw();
  const std::size_t count = y.size();
#pragma omp simd
  for (std::size_t i = 0; i < count; ++i) o[i] = in[i] > T(0) ? in[i] : T(0);
  const bool rec = needs_record(tape, {&x});
  auto out = Variable<T>::result(std::move(y), rec);
  if (!rec) return out;
  auto yv = out.shared_value();
  auto xs = x.slot();
  // Holding the output keeps the mask; y > 0 exactly where x > 0.
  tape->record(out, [yv, xs](const Tensor<T>& gy) {
    auto dx = Tensor<T>::uninitialized(gy.shape());
    const T* yp = yv->raw();
    const T* g = gy.raw();
    T* d = dx.raw();
    const std::size_t count = dx.size();
#pragma omp simd
    for (std::size_t i = 0; i < count; ++i) d[i] = yp[i] > T(0) ? g[i] : T(0);
    xs->accumulate(std::move(dx));
  });
  return out;
}

template <typename T>
Variable<T> global_avg_pool(Tape<T>* tape, const Variable<T>& x) {
  const Shape s = x.shape();
  if (s.plane() == 0) throw ShapeError("global_avg_pool: empty spatial extent " + to_string(s));
  Tensor<T> y(Shape{s.n, s.c, 1, 1});
  const double inv = 1.0 / static_cast<double>(s.plane());
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* row = &x.value()(n, c, 0, 0);
      double acc = 0.0;
      for (std::size_t i = 0; i < s.plane(); ++i) acc += row[i];
      y(n, c, 0, 0) = static_cast<T>(acc * inv);
    }
  const bool rec = needs_record(tape, {&x});
  auto out = Variable<T>::result(std::move(y), rec);
  if (!rec) return out;
  auto xs = x.slot();
  tape->record(out, [s, inv, xs](const Tensor<T>& gy) {
    Tensor<T> dx(s);
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t c = 0; c < s.c; ++c) {
        const T g = static_cast<T>(gy(n, c, 0, 0) * inv);
        std::fill_n(&dx(n, c, 0, 0), s.plane(), g);
      }
    xs->accumulate(std::move(dx));
  });
  return out;
}

template <typename T>
Variable<T> linear(Tape<T>* tape, const Variable<T>& x, const Linear<T>& p) {
  const Shape xs_shape = x.shape();
  const Shape ws_shape = p.weight.shape();
  if (!xs_shape.is_matrix() || xs_shape.c != ws_shape.n ||
      p.bias.value().size() != ws_shape.c) {
    throw ShapeError("linear: input " + to_string(xs_shape) + " incompatible with weight " +
                     to_string(ws_shape) + " and bias " + to_string(p.bias.shape()));
  }
  Tensor<T> y = matmul(x.value(), p.weight.value());
  const std::size_t k = ws_shape.c;
  for (std::size_t n = 0; n < xs_shape.n; ++n)
    for (std::size_t j = 0; j < k; ++j) y[n * k + j] += p.bias.value()[j];

  const bool rec = needs_record(tape, {&x, &p.weight, &p.bias});
  auto out = Variable<T>::result(std::move(y), rec);
  if (!rec) return out;
  auto xv = x.shared_value();
  auto wv = p.weight.shared_value();
  auto xs = x.slot();
  auto ws = p.weight.slot();
  auto bs = p.bias.slot();
  tape->record(out, [k, xv, wv, xs, ws, bs](const Tensor<T>& gy) {
    if (xs->requires_grad) xs->accumulate(matmul(gy, transpose(*wv)));
    if (ws->requires_grad) ws->accumulate(matmul(transpose(*xv), gy));
    if (bs->requires_grad) {
      Tensor<T> db(Shape{1, k, 1, 1});
      for (std::size_t n = 0; n < gy.shape().n; ++n)
        for (std::size_t j = 0; j < k; ++j) db[j] += gy[n * k + j];
      bs->accumulate(std::move(db));
    }
  });
  return out;
}

template <typename T>
Variable<T> softmax_cross_entropy(Tape<T>* tape, const Variable<T>& logits,
                                  std::span<const int> labels) {
  const Shape s = logits.shape();
  if (!s.is_matrix() || s.n != labels.size() || s.n == 0) {
    throw ShapeError("softmax_cross_entropy: logits " + to_string(s) + " with " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t k = s.c;
  auto probs = std::make_shared<Tensor<T>>(s);
  double loss = 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    const int label = labels[n];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(label) +
                              " outside [0," + std::to_string(k) + ")");
    }
    const T* row = logits.value().raw() + n * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    const double log_z = std::log(z);
    for (std::size_t j = 0; j < k; ++j)
      (*probs)[n * k + j] = static_cast<T>(std::exp(static_cast<double>(row[j]) - mx - log_z));
    loss += log_z - (static_cast<double>(row[label]) - mx);
  }
  loss /= static_cast<double>(s.n);

  const bool rec = needs_record(tape, {&logits});
  auto out = Variable<T>::result(Tensor<T>(Shape{1, 1, 1, 1}, static_cast<T>(loss)), rec);
  if (!rec) return out;
  std::vector<int> saved(labels.begin(), labels.end());
  auto ls = logits.slot();
  tape->record(out, [probs, saved = std::move(saved), ls, k](const Tensor<T>& gy) {
    Tensor<T> d = *probs;
    const std::size_t batch = saved.size();
    const double scale = static_cast<double>(gy[0]) / static_cast<double>(batch);
    for (std::size_t n = 0; n < batch; ++n) {
      d[n * k + static_cast<std::size_t>(saved[n])] -= T(1);
      for (std::size_t j = 0; j < k; ++j) d[n * k + j] = static_cast<T>(d[n * k + j] * scale);
    }
    ls->accumulate(std::move(d));
  });
  return out;
}

template <typename T>
Variable<T> add(Tape<T>* tape, const Variable<T>& a, const Variable<T>& b) {
  const bool rec = needs_record(tape, {&a, &b});
  auto out = Variable<T>::result(add(a.value(), b.value()), rec);
  if (!rec) return out;
  auto as = a.slot();
  auto bs = b.slot();
  tape->record(out, [as, bs](const Tensor<T>& gy) {
    if (as->requires_grad) as->accumulate(gy);
    if (bs->requires_grad) bs->accumulate(gy);
  });
  return out;
}

template <typename T>
Variable<T> mul(Tape<T>* tape, const Variable<T>& a, const Variable<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] * b.value()[i];
  const bool rec = needs_record(tape, {&a, &b});
  auto out = Variable<T>::result(std::move(y), rec);
  if (!rec) return out;
  auto av = a.shared_value();
  auto bv = b.shared_value();
  auto as = a.slot();
  auto bs = b.slot();
  tape->record(out, [av, bv, as, bs](const Tensor<T>& gy) {
    if (as->requires_grad) {
      Tensor<T> d(gy.shape());
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = gy[i] * (*bv)[i];
      as->accumulate(std::move(d));
    }
    if (bs->requires_grad) {
      Tensor<T> d(gy.shape());
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = gy[i] * (*av)[i];
      bs->accumulate(std::move(d));
    }
  });
  return out;
}

template <typename T>
Variable<T> sum(Tape<T>* tape, const Variable<T>& x) {
  const bool rec = needs_record(tape, {&x});
  auto out = Variable<T>::result(
      Tensor<T>(Shape{1, 1, 1, 1}, static_cast<T>(sum(x.value()))), rec);
  if (!rec) return out;
  const Shape s = x.shape();
  auto xs = x.slot();
  tape->record(out, [s, xs](const Tensor<T>& gy) { xs->accumulate(Tensor<T>(s, gy[0])); });
  return out;
}

template <typename T>
Variable<T> concat_channels(Tape<T>* tape, std::span<const Variable<T>> parts) {
  std::vector<Tensor<T>> values;
  values.reserve(parts.size());
  bool rec = false;
  for (const auto& p : parts) {
    values.push_back(p.value());
    rec = rec || needs_record(tape, {&p});
  }
  auto out = Variable<T>::result(concat_channels(std::span<const Tensor<T>>(values)), rec);
  if (!rec) return out;
  std::vector<std::size_t> sizes;
  std::vector<std::shared_ptr<GradSlot<T>>> slots;
  for (const auto& p : parts) {
    sizes.push_back(p.shape().c);
    slots.push_back(p.slot());
  }
  tape->record(out, [sizes, slots](const Tensor<T>& gy) {
    auto pieces = split_channels(gy, std::span<const std::size_t>(sizes));
    for (std::size_t i = 0; i < slots.size(); ++i)
      if (slots[i]->requires_grad) slots[i]->accumulate(std::move(pieces[i]));
  });
  return out;
}

template <typename T>
std::vector<Variable<T>> split_channels(Tape<T>* tape, const Variable<T>& x,
                                        std::span<const std::size_t> sizes) {
  auto pieces = split_channels(x.value(), sizes);
  const bool rec = needs_record(tape, {&x});
  std::vector<Variable<T>> out;
  out.reserve(pieces.size());
  const Shape s = x.shape();
  auto xs = x.slot();
  std::size_t first = 0;
  for (auto& piece : pieces) {
    const std::size_t width = piece.shape().c;
    out.push_back(Variable<T>::result(std::move(piece), rec));
    if (rec) {
      tape->record(out.back(), [s, first, width, xs](const Tensor<T>& gy) {
        Tensor<T> dx(s);
        for (std::size_t n = 0; n < s.n; ++n)
          std::copy_n(&gy(n, 0, 0, 0), width * s.plane(), &dx(n, first, 0, 0));
        xs->accumulate(std::move(dx));
      });
    }
    first += width;
  }
  return out;
}

#define RESNEXT_INSTANTIATE(T)                                                                 \
  template struct Conv2d<T>;                                                                   \
  template struct BatchNorm2d<T>;                                                              \
  template struct Linear<T>;                                                                   \
  template Tensor<T> he_init<T>(const Shape&, std::size_t, Rng&);                              \
  template Variable<T> conv2d(Tape<T>*, const Variable<T>&, const Conv2d<T>&);                 \
  template Variable<T> batchnorm2d(Tape<T>*, const Variable<T>&, BatchNorm2d<T>&, Mode);        \
  template Variable<T> relu(Tape<T>*, const Variable<T>&);                                     \
  template Variable<T> global_avg_pool(Tape<T>*, const Variable<T>&);                          \
  template Variable<T> linear(Tape<T>*, const Variable<T>&, const Linear<T>&);                 \
  template Variable<T> softmax_cross_entropy(Tape<T>*, const Variable<T>&,                     \
                                             std::span<const int>);                            \
  template Variable<T> add(Tape<T>*, const Variable<T>&, const Variable<T>&);                  \
  template Variable<T> mul(Tape<T>*, const Variable<T>&, const Variable<T>&);                  \
  template Variable<T> sum(Tape<T>*, const Variable<T>&);                                      \
  template Variable<T> concat_channels(Tape<T>*, std::span<const Variable<T>>);                \
  template std::vector<Variable<T>> split_channels(Tape<T>*, const Variable<T>&,               \
                                                   std::span<const std::size_t>);

RESNEXT_INSTANTIATE(float)
RESNEXT_INSTANTIATE(double)

#undef RESNEXT_INSTANTIATE

}  // namespace resnext
