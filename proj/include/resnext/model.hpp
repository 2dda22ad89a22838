#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "resnext/layers.hpp"

namespace resnext {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// split: C independent paths summed. concat: paths concatenated before one
// shared expand. grouped: a single grouped 3x3 convolution.
enum class BlockForm { split, concat, grouped };

std::string to_string(BlockForm form);
BlockForm parse_block_form(std::string_view name);

inline constexpr std::size_t kStemWidth = 64;
inline constexpr std::size_t kBottleneckWidth = 256;
inline constexpr std::size_t kBlocksPerStage = 3;
inline constexpr std::size_t kImageChannels = 3;

struct ModelConfig {
  int depth = 29;
  int cardinality = 8;
  int base_width = 64;
  int num_classes = 10;
  BlockForm block_form = BlockForm::grouped;

  // "8x64d", the series label used in reports.
  std::string label() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct StageSpec {
  std::size_t blocks = kBlocksPerStage;
  std::size_t inner_width = 0;  // C * d * 2^(s-1)
  std::size_t out_width = 0;    // 256 * 2^(s-1)
  std::size_t first_stride = 1;

  friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

using StagePlan = std::vector<StageSpec>;

// One stage per 9 layers: (depth - 2) must be divisible by 9.
StagePlan validate_config(const ModelConfig& cfg);

template <typename T>
struct ConvBn {
  Conv2d<T> conv;
  BatchNorm2d<T> bn;
};

// Bottleneck block y = relu(shortcut(x) + BN(sum_i T_i(x))). The per-form
// layout of reduce/transform/expand:
//   grouped: 1 x (in -> inner), 1 x grouped 3x3, 1 x (inner -> out)
//   concat:  C x (in -> inner/C), C x dense 3x3, 1 x (inner -> out)
//   split:   C x (in -> inner/C), C x dense 3x3, C x (inner/C -> out)
// The expand batch norm acts on the aggregated sum in every form.
template <typename T>
struct Block {
  BlockForm form = BlockForm::grouped;
  std::size_t in_width = 0;
  std::size_t inner_width = 0;
  std::size_t out_width = 0;
  std::size_t stride = 1;
  std::size_t cardinality = 1;

  std::vector<ConvBn<T>> reduce;
  std::vector<ConvBn<T>> transform;
  std::vector<Conv2d<T>> expand;
  BatchNorm2d<T> expand_bn;
  std::optional<ConvBn<T>> projection;

  std::size_t path_width() const { return inner_width / cardinality; }

  // Initialised in grouped form, then translated, so a given rng state yields
  // equivalent blocks in every form.
  static Block make(BlockForm form, std::size_t in, std::size_t inner, std::size_t out,
                    std::size_t stride, std::size_t cardinality, Rng& rng);

  std::vector<Variable<T>> parameters() const;
};

// Deep copy of `block` re-expressed in `to`; exact (bitwise) and invertible.
template <typename T>
Block<T> translate_weights(const Block<T>& block, BlockForm to);

template <typename T>
using PathFn = std::function<Variable<T>(const Variable<T>&)>;

// F(x) = sum_i T_i(x), no shortcut.
template <typename T>
Variable<T> aggregate_transform(Tape<T>* tape, const Variable<T>& x,
                                std::span<const PathFn<T>> paths);

template <typename T>
Variable<T> block_forward_split(Tape<T>* tape, const Variable<T>& x, Block<T>& block, Mode mode);
template <typename T>
Variable<T> block_forward_concat(Tape<T>* tape, const Variable<T>& x, Block<T>& block, Mode mode);
template <typename T>
Variable<T> block_forward_grouped(Tape<T>* tape, const Variable<T>& x, Block<T>& block,
                                  Mode mode);

// Dispatches on block.form.
template <typename T>
Variable<T> block_forward(Tape<T>* tape, const Variable<T>& x, Block<T>& block, Mode mode);

// Pieces of the block, exposed for checking the residual form in isolation.
template <typename T>
Variable<T> block_shortcut(Tape<T>* tape, const Variable<T>& x, Block<T>& block, Mode mode);
template <typename T>
Variable<T> block_residual(Tape<T>* tape, const Variable<T>& x, Block<T>& block, Mode mode);
// Output of path i of a split-form block before the shared expand batch norm.
template <typename T>
Variable<T> split_path_forward(Tape<T>* tape, const Variable<T>& x, Block<T>& block,
                               std::size_t path, Mode mode);

template <typename T>
struct NamedParameter {
  std::string name;
  Variable<T> variable;
};

template <typename T>
struct NamedBuffer {
  std::string name;
  Tensor<T>* tensor;
};

struct LayerSummary {
  std::string name;
  std::string kind;  // conv, shortcut, linear
  Shape weight_shape;
  std::size_t groups = 1;
  Shape output_shape;  // for a single 32x32 image
  std::size_t parameters = 0;  // weights + batch-norm affine + bias
};

template <typename T>
class Model {
 public:
  ModelConfig config;
  StagePlan plan;
  ConvBn<T> stem;
  std::vector<Block<T>> blocks;
  Linear<T> head;

  // [n, 3, H, W] -> [n, num_classes] logits as [n, k, 1, 1].
  Variable<T> forward(Tape<T>* tape, const Variable<T>& images, Mode mode);

  // Declaration order, which is also the checkpoint order.
  std::vector<NamedParameter<T>> named_parameters() const;
  std::vector<Variable<T>> parameters() const;
  std::vector<NamedBuffer<T>> buffers();

  // Conv and linear layers on the main path; equals config.depth.
  std::size_t layer_count() const;
};

template <typename T>
Model<T> build_model(const ModelConfig& cfg, Rng& rng);

template <typename T>
std::size_t count_parameters(const Model<T>& model);

template <typename T>
std::vector<LayerSummary> summarize(const Model<T>& model);

std::string format_summary(std::span<const LayerSummary> layers);

}  // namespace resnext
