#include "resnext/equivalence.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <random>
#include <sstream>

namespace resnext {

double EquivalenceReport::max_output() const {
  double m = 0.0;
  for (const auto& r : rows) m = std::max(m, r.output);
  return m;
}

double EquivalenceReport::max_input_grad() const {
  double m = 0.0;
  for (const auto& r : rows) m = std::max(m, r.input_grad);
  return m;
}

bool EquivalenceReport::within(double tolerance) const {
  return max_output() <= tolerance && max_input_grad() <= tolerance;
}

namespace {

template <typename T>
Tensor<T> random_tensor(const Shape& s, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor<T> t(s);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
struct FormRun {
  Tensor<T> output;
  Tensor<T> input_grad;
};

// Loss sum(y * r) makes the input gradient depend on every output element.
template <typename T>
FormRun<T> run_form(Block<T>& block, const Tensor<T>& input, const Tensor<T>& probe, Mode mode) {
  Tape<T> tape;
  Variable<T> x(input, true);
  Variable<T> y = block_forward(&tape, x, block, mode);
  Variable<T> r(probe);
  Variable<T> loss = sum(&tape, mul(&tape, y, r));
  FormRun<T> out{y.value(), {}};
  tape.backward(loss);
  out.input_grad = x.grad();
  return out;
}

}  // namespace

template <typename T>
EquivalenceReport check_block_forms(const ModelConfig& cfg, std::uint64_t seed, std::size_t batch,
                                    std::size_t spatial) {
  const StagePlan plan = validate_config(cfg);
  constexpr std::array<BlockForm, 3> forms = {BlockForm::split, BlockForm::concat,
                                              BlockForm::grouped};
  EquivalenceReport report;
  Rng rng(seed);
  std::size_t in = kStemWidth;
  for (std::size_t s = 0; s < plan.size(); ++s) {
    const StageSpec& st = plan[s];
    for (std::size_t k = 0; k < std::min<std::size_t>(2, st.blocks); ++k) {
      const std::size_t stride = k == 0 ? st.first_stride : 1;
      const Block<T> hub = Block<T>::make(BlockForm::grouped, in, st.inner_width, st.out_width,
                                          stride, static_cast<std::size_t>(cfg.cardinality), rng);
      std::array<Block<T>, 3> blocks = {translate_weights(hub, forms[0]),
                                        translate_weights(hub, forms[1]),
                                        translate_weights(hub, forms[2])};
      const Tensor<T> input = random_tensor<T>(Shape{batch, in, spatial, spatial}, rng);
      const std::size_t out_spatial = (spatial - 1) / stride + 1;
      const Tensor<T> probe =
          random_tensor<T>(Shape{batch, st.out_width, out_spatial, out_spatial}, rng);
      const std::string name = "stage" + std::to_string(s + 1) + ".block" + std::to_string(k);
      for (Mode mode : {Mode::train, Mode::eval}) {
        std::array<FormRun<T>, 3> runs;
        for (std::size_t f = 0; f < 3; ++f) runs[f] = run_form(blocks[f], input, probe, mode);
        for (std::size_t a = 0; a < 3; ++a)
          for (std::size_t b = a + 1; b < 3; ++b) {
            report.rows.push_back({name, mode, forms[a], forms[b],
                                   max_abs_diff(runs[a].output, runs[b].output),
                                   max_abs_diff(runs[a].input_grad, runs[b].input_grad)});
          }
      }
      in = st.out_width;
    }
    // Remaining blocks of the stage share the second block's shape.
    in = st.out_width;
  }
  return report;
}

template EquivalenceReport check_block_forms<float>(const ModelConfig&, std::uint64_t,
                                                   std::size_t, std::size_t);
template EquivalenceReport check_block_forms<double>(const ModelConfig&, std::uint64_t,
                                                    std::size_t, std::size_t);

std::string format_equivalence(const EquivalenceReport& report) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof(line), "%-15s %-6s %-17s %12s %12s\n", "block", "mode", "forms",
                "output", "input_grad");
  os << line;
  for (const auto& r : report.rows) {
    const std::string pair = to_string(r.a) + "/" + to_string(r.b);
    std::snprintf(line, sizeof(line), "%-15s %-6s %-17s %12.3e %12.3e\n", r.block.c_str(),
                  r.mode == Mode::train ? "train" : "eval", pair.c_str(), r.output, r.input_grad);
    os << line;
  }
  std::snprintf(line, sizeof(line), "max output deviation %.3e, max input-gradient deviation %.3e\n",
                report.max_output(), report.max_input_grad());
  os << line;
  return os.str();
}

}  // namespace resnext
