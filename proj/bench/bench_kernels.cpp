// Times the im2col + GEMM convolution kernels against the nested-loop
// reference on layer shapes from depth-20/29 networks.
//
//   bench_kernels [--batch N] [--reps R] [--threads T] [--skip-reference]

#include <omp.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "resnext/conv_kernels.hpp"
#include "resnext/tensor.hpp"

using namespace resnext;

namespace {

struct Layer {
  const char* name;
  std::size_t channels_in, channels_out, spatial, kernel, stride, groups;
};

double best_ms(int reps, const std::function<void()>& f) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - t0)
                              .count());
  }
  return best;
}

Tensorf random(Shape s, std::mt19937& rng) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  Tensorf t(s);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Convolution kernel benchmark"};
  std::size_t batch = 16;
  int reps = 3;
  int threads = omp_get_max_threads();
  bool skip_reference = false;
  app.add_option("--batch", batch, "Samples per call");
  app.add_option("--reps", reps, "Repetitions; the best time is reported");
  app.add_option("--threads", threads, "OpenMP threads for the im2col kernels");
  app.add_flag("--skip-reference", skip_reference, "Only time the im2col kernels");
  CLI11_PARSE(app, argc, argv);
  omp_set_num_threads(threads);

  const std::vector<Layer> layers = {
      {"stem 3x3", 3, 64, 32, 3, 1, 1},
      {"reduce 1x1 (2x8d)", 64, 16, 32, 1, 1, 1},
      {"grouped 3x3 (2x8d)", 16, 16, 32, 3, 1, 2},
      {"grouped 3x3 (8x64d)", 512, 512, 32, 3, 1, 8},
      {"grouped 3x3 s2 (8x64d)", 1024, 1024, 16, 3, 2, 8},
      {"expand 1x1 (8x64d)", 512, 256, 32, 1, 1, 1},
  };

  std::printf("batch %zu, %d thread(s), best of %d\n", batch, threads, reps);
  std::printf("%-30s %8s %11s %11s %11s %9s\n", "layer", "GFLOP", "fwd ms", "bwd-in ms",
              "bwd-w ms", "GFLOP/s");
  std::mt19937 rng(0);
  for (const Layer& l : layers) {
    const Shape xs{batch, l.channels_in, l.spatial, l.spatial};
    const Shape ws{l.channels_out, l.channels_in / l.groups, l.kernel, l.kernel};
    const ConvGeometry g = ConvGeometry::make(xs, ws, l.stride, l.kernel / 2, l.groups);
    const Shape ys = g.output_shape();
    const Tensorf x = random(xs, rng), w = random(ws, rng), dy = random(ys, rng);
    const Tensorf b(Shape{1, l.channels_out, 1, 1});
    Tensorf y(ys), dx(xs), dw(ws);
    const double flop = 2.0 * static_cast<double>(ys.numel()) *
                        static_cast<double>(l.channels_in / l.groups * l.kernel * l.kernel);

    auto row = [&](const char* impl, auto fwd, auto bwd_in, auto bwd_w) {
      const double f = best_ms(reps, [&] { fwd(g, x.raw(), w.raw(), b.raw(), y.raw()); });
      const double bi = best_ms(reps, [&] { bwd_in(g, dy.raw(), w.raw(), dx.raw()); });
      const double bw = best_ms(reps, [&] { bwd_w(g, x.raw(), dy.raw(), dw.raw()); });
      const std::string name = std::string(l.name) + " " + impl;
      std::printf("%-30s %8.3f %11.2f %11.2f %11.2f %9.1f\n", name.c_str(), flop * 1e-9, f, bi, bw,
                  3.0 * flop * 1e-6 / (f + bi + bw));
    };
    row("[gemm]", kernels::conv2d_forward<float>, kernels::conv2d_backward_input<float>,
        kernels::conv2d_backward_weight<float>);
    if (!skip_reference)
      row("[ref]", kernels::reference::conv2d_forward<float>,
          kernels::reference::conv2d_backward_input<float>,
          kernels::reference::conv2d_backward_weight<float>);
  }
  return 0;
}
