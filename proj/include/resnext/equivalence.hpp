#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "resnext/model.hpp"

namespace resnext {

struct FormDeviation {
  std::string block;  // e.g. "stage2.block0"
  Mode mode = Mode::train;
  BlockForm a = BlockForm::split;
  BlockForm b = BlockForm::concat;
  double output = 0.0;      // max |y_a - y_b|
  double input_grad = 0.0;  // max |dL/dx_a - dL/dx_b|
};

struct EquivalenceReport {
  std::vector<FormDeviation> rows;

  double max_output() const;
  double max_input_grad() const;
  bool within(double tolerance) const;
};

// For the first two blocks of every stage of `cfg`: build the block once,
// translate it into all three forms, run a train-mode then an eval-mode pass
// on the same random input and compare outputs and input gradients pairwise.
// Spatial size is that of the block input; the check is size-independent.
template <typename T>
EquivalenceReport check_block_forms(const ModelConfig& cfg, std::uint64_t seed,
                                    std::size_t batch = 2, std::size_t spatial = 8);

std::string format_equivalence(const EquivalenceReport& report);

}  // namespace resnext
