#include "resnext/model.hpp"

#include <cstdio>
#include <sstream>

namespace resnext {

std::string to_string(BlockForm form) {
  switch (form) {
    case BlockForm::split:
      return "split";
    case BlockForm::concat:
      return "concat";
    case BlockForm::grouped:
      return "grouped";
  }
  return "unknown";
}

BlockForm parse_block_form(std::string_view name) {
  if (name == "split") return BlockForm::split;
  if (name == "concat") return BlockForm::concat;
  if (name == "grouped") return BlockForm::grouped;
  throw ConfigError("unknown block form '" + std::string(name) +
                    "' (expected split, concat or grouped)");
}

std::string ModelConfig::label() const {
  return std::to_string(cardinality) + "x" + std::to_string(base_width) + "d";
}

StagePlan validate_config(const ModelConfig& cfg) {
  if (cfg.depth < 11 || (cfg.depth - 2) % 9 != 0) {
    throw ConfigError("depth " + std::to_string(cfg.depth) +
                      " is invalid: depth - 2 must be a positive multiple of 9 "
                      "(3 bottleneck blocks of 3 layers per stage)");
  }
  if (cfg.cardinality < 1) {
    throw ConfigError("cardinality must be >= 1, got " + std::to_string(cfg.cardinality));
  }
  if (cfg.base_width < 1) {
    throw ConfigError("base width must be >= 1, got " + std::to_string(cfg.base_width));
  }
  if (cfg.num_classes < 2) {
    throw ConfigError("class count must be >= 2, got " + std::to_string(cfg.num_classes));
  }
  const std::size_t stages = static_cast<std::size_t>(cfg.depth - 2) / 9;
  StagePlan plan;
  for (std::size_t s = 0; s < stages; ++s) {
    StageSpec st;
    st.inner_width = static_cast<std::size_t>(cfg.cardinality) *
                     static_cast<std::size_t>(cfg.base_width) << s;
    st.out_width = kBottleneckWidth << s;
    st.first_stride = s == 0 ? 1 : 2;
    plan.push_back(st);
  }
  return plan;
}

namespace {

template <typename T>
Variable<T> copy_variable(const Variable<T>& v) {
  return Variable<T>(v.value(), v.requires_grad());
}

template <typename T>
Variable<T> parameter(Tensor<T> t) {
  return Variable<T>(std::move(t), true);
}

template <typename T>
Conv2d<T> conv_like(const Conv2d<T>& proto, Tensor<T> weight, std::size_t groups) {
  Conv2d<T> c;
  c.weight = parameter(std::move(weight));
  c.stride = proto.stride;
  c.pad = proto.pad;
  c.groups = groups;
  return c;
}

template <typename T>
Conv2d<T> copy_conv(const Conv2d<T>& c) {
  Conv2d<T> out = c;
  out.weight = copy_variable(c.weight);
  if (c.bias) out.bias = copy_variable(*c.bias);
  return out;
}

template <typename T>
BatchNorm2d<T> copy_bn(const BatchNorm2d<T>& bn) {
  BatchNorm2d<T> out = bn;
  out.gamma = copy_variable(bn.gamma);
  out.beta = copy_variable(bn.beta);
  return out;
}

template <typename T>
ConvBn<T> copy_conv_bn(const ConvBn<T>& cb) {
  return {copy_conv(cb.conv), copy_bn(cb.bn)};
}

template <typename T>
BatchNorm2d<T> concat_bn(const std::vector<ConvBn<T>>& parts) {
  std::vector<Tensor<T>> g, b, m, v;
  for (const auto& p : parts) {
    g.push_back(p.bn.gamma.value());
    b.push_back(p.bn.beta.value());
    m.push_back(p.bn.running_mean);
    v.push_back(p.bn.running_var);
  }
  BatchNorm2d<T> bn = parts.front().bn;
  bn.gamma = parameter(concat_channels(std::span<const Tensor<T>>(g)));
  bn.beta = parameter(concat_channels(std::span<const Tensor<T>>(b)));
  bn.running_mean = concat_channels(std::span<const Tensor<T>>(m));
  bn.running_var = concat_channels(std::span<const Tensor<T>>(v));
  return bn;
}

template <typename T>
std::vector<BatchNorm2d<T>> split_bn(const BatchNorm2d<T>& bn, std::size_t parts) {
  const std::vector<std::size_t> sizes(parts, bn.channels() / parts);
  auto g = split_channels(bn.gamma.value(), std::span<const std::size_t>(sizes));
  auto b = split_channels(bn.beta.value(), std::span<const std::size_t>(sizes));
  auto m = split_channels(bn.running_mean, std::span<const std::size_t>(sizes));
  auto v = split_channels(bn.running_var, std::span<const std::size_t>(sizes));
  std::vector<BatchNorm2d<T>> out;
  for (std::size_t i = 0; i < parts; ++i) {
    BatchNorm2d<T> piece = bn;
    piece.gamma = parameter(std::move(g[i]));
    piece.beta = parameter(std::move(b[i]));
    piece.running_mean = std::move(m[i]);
    piece.running_var = std::move(v[i]);
    out.push_back(std::move(piece));
  }
  return out;
}

// Stacks per-path convs along the output-channel axis.
template <typename T>
ConvBn<T> stack_paths(const std::vector<ConvBn<T>>& paths, std::size_t groups) {
  if (paths.size() == 1) return copy_conv_bn(paths.front());
  std::vector<Tensor<T>> weights;
  for (const auto& p : paths) weights.push_back(p.conv.weight.value());
  ConvBn<T> out;
  out.conv = conv_like(paths.front().conv, concat_batch(std::span<const Tensor<T>>(weights)),
                       groups);
  out.bn = concat_bn(paths);
  return out;
}

template <typename T>
std::vector<ConvBn<T>> unstack_paths(const ConvBn<T>& stacked, std::size_t paths) {
  const std::vector<std::size_t> sizes(paths, stacked.conv.out_channels() / paths);
  auto weights = split_batch(stacked.conv.weight.value(), std::span<const std::size_t>(sizes));
  auto bns = split_bn(stacked.bn, paths);
  std::vector<ConvBn<T>> out;
  for (std::size_t i = 0; i < paths; ++i) {
    out.push_back({conv_like(stacked.conv, std::move(weights[i]), 1), std::move(bns[i])});
  }
  return out;
}

template <typename T>
void check_block_layout(const Block<T>& b) {
  const std::size_t paths = b.form == BlockForm::grouped ? 1 : b.cardinality;
  const std::size_t expands = b.form == BlockForm::split ? b.cardinality : 1;
  if (b.cardinality == 0 || b.inner_width % b.cardinality != 0 || b.reduce.size() != paths ||
      b.transform.size() != paths || b.expand.size() != expands) {
    throw ShapeError("block layout inconsistent with form " + to_string(b.form) +
                     ": inner width " + std::to_string(b.inner_width) + ", cardinality " +
                     std::to_string(b.cardinality));
  }
}

}  // namespace

template <typename T>
Block<T> Block<T>::make(BlockForm form, std::size_t in, std::size_t inner, std::size_t out,
                        std::size_t stride, std::size_t cardinality, Rng& rng) {
  if (cardinality == 0 || inner % cardinality != 0) {
    throw ShapeError("inner width " + std::to_string(inner) + " not divisible by cardinality " +
                     std::to_string(cardinality));
  }
  Block b;
  b.form = BlockForm::grouped;
  b.in_width = in;
  b.inner_width = inner;
  b.out_width = out;
  b.stride = stride;
  b.cardinality = cardinality;
  b.reduce.push_back({Conv2d<T>::make(in, inner, 1, 1, 0, 1, rng), BatchNorm2d<T>::make(inner)});
  b.transform.push_back(
      {Conv2d<T>::make(inner, inner, 3, stride, 1, cardinality, rng), BatchNorm2d<T>::make(inner)});
  b.expand.push_back(Conv2d<T>::make(inner, out, 1, 1, 0, 1, rng));
  b.expand_bn = BatchNorm2d<T>::make(out);
  if (in != out || stride != 1) {
    b.projection = ConvBn<T>{Conv2d<T>::make(in, out, 1, stride, 0, 1, rng),
                             BatchNorm2d<T>::make(out)};
  }
  if (form == BlockForm::grouped) return b;
  return translate_weights(b, form);
}

template <typename T>
std::vector<Variable<T>> Block<T>::parameters() const {
  std::vector<Variable<T>> out;
  auto add_cb = [&out](const ConvBn<T>& cb) {
    out.push_back(cb.conv.weight);
    out.push_back(cb.bn.gamma);
    out.push_back(cb.bn.beta);
  };
  for (const auto& r : reduce) add_cb(r);
  for (const auto& t : transform) add_cb(t);
  for (const auto& e : expand) out.push_back(e.weight);
  out.push_back(expand_bn.gamma);
  out.push_back(expand_bn.beta);
  if (projection) add_cb(*projection);
  return out;
}

template <typename T>
Block<T> translate_weights(const Block<T>& block, BlockForm to) {
  check_block_layout(block);
  const std::size_t C = block.cardinality;

  // Grouped form is the hub: every form goes through it.
  ConvBn<T> reduce = stack_paths(block.reduce, 1);
  ConvBn<T> transform = stack_paths(block.transform, C);
  Conv2d<T> expand;
  if (block.expand.size() == 1) {
    expand = copy_conv(block.expand.front());
  } else {
    std::vector<Tensor<T>> weights;
    for (const auto& e : block.expand) weights.push_back(e.weight.value());
    expand = conv_like(block.expand.front(), concat_channels(std::span<const Tensor<T>>(weights)),
                       1);
  }

  Block<T> out;
  out.form = to;
  out.in_width = block.in_width;
  out.inner_width = block.inner_width;
  out.out_width = block.out_width;
  out.stride = block.stride;
  out.cardinality = C;
  out.expand_bn = copy_bn(block.expand_bn);
  if (block.projection) out.projection = copy_conv_bn(*block.projection);

  if (to == BlockForm::grouped) {
    out.reduce.push_back(std::move(reduce));
    out.transform.push_back(std::move(transform));
    out.expand.push_back(std::move(expand));
    return out;
  }
  out.reduce = unstack_paths(reduce, C);
  out.transform = unstack_paths(transform, C);
  if (to == BlockForm::concat) {
    out.expand.push_back(std::move(expand));
  } else {
    const std::vector<std::size_t> sizes(C, block.path_width());
    auto weights = split_channels(expand.weight.value(), std::span<const std::size_t>(sizes));
    for (auto& w : weights) out.expand.push_back(conv_like(expand, std::move(w), 1));
  }
  return out;
}

template <typename T>
Variable<T> aggregate_transform(Tape<T>* tape, const Variable<T>& x,
                                std::span<const PathFn<T>> paths) {
  if (paths.empty()) throw std::invalid_argument("aggregate_transform: no paths");
  Variable<T> acc = paths.front()(x);
  for (std::size_t i = 1; i < paths.size(); ++i) {
    Variable<T> term = paths[i](x);
    if (term.shape() != acc.shape()) {
      throw ShapeError("aggregate_transform: path " + std::to_string(i) + " produced " +
                       to_string(term.shape()) + ", path 0 produced " + to_string(acc.shape()));
    }
    acc = add(tape, acc, term);
  }
  return acc;
}

namespace {

template <typename T>
Variable<T> conv_bn(Tape<T>* tape, const Variable<T>& x, ConvBn<T>& cb, Mode mode) {
  return batchnorm2d(tape, conv2d(tape, x, cb.conv), cb.bn, mode);
}

// reduce -> BN -> ReLU -> 3x3 -> BN -> ReLU for path i (or the whole grouped
// stack when the block is grouped).
template <typename T>
Variable<T> bottleneck_inner(Tape<T>* tape, const Variable<T>& x, Block<T>& b, std::size_t i,
                             Mode mode) {
  auto h = relu(tape, conv_bn(tape, x, b.reduce[i], mode));
  return relu(tape, conv_bn(tape, h, b.transform[i], mode));
}

template <typename T>
void check_input(const Variable<T>& x, const Block<T>& b, BlockForm expected) {
  if (b.form != expected) {
    throw std::invalid_argument("block is in " + to_string(b.form) + " form, not " +
                                to_string(expected));
  }
  if (x.shape().c != b.in_width) {
    throw ShapeError("block expects " + std::to_string(b.in_width) + " input channels, got " +
                     to_string(x.shape()));
  }
}

}  // namespace

template <typename T>
Variable<T> block_shortcut(Tape<T>* tape, const Variable<T>& x, Block<T>& block, Mode mode) {
  if (!block.projection) return x;
  return conv_bn(tape, x, *block.projection, mode);
}

template <typename T>
Variable<T> split_path_forward(Tape<T>* tape, const Variable<T>& x, Block<T>& block,
                               std::size_t path, Mode mode) {
  check_input(x, block, BlockForm::split);
  if (path >= block.cardinality) throw std::out_of_range("split_path_forward: no such path");
  return conv2d(tape, bottleneck_inner(tape, x, block, path, mode), block.expand[path]);
}

template <typename T>
Variable<T> block_residual(Tape<T>* tape, const Variable<T>& x, Block<T>& block, Mode mode) {
  check_block_layout(block);
  check_input(x, block, block.form);
  Variable<T> merged;
  switch (block.form) {
    case BlockForm::split: {
      std::vector<PathFn<T>> paths;
      for (std::size_t i = 0; i < block.cardinality; ++i) {
        paths.push_back([tape, &block, i, mode](const Variable<T>& in) {
          return split_path_forward(tape, in, block, i, mode);
        });
      }
      merged = aggregate_transform(tape, x, std::span<const PathFn<T>>(paths));
      break;
    }
    case BlockForm::concat: {
      std::vector<Variable<T>> parts;
      for (std::size_t i = 0; i < block.cardinality; ++i)
        parts.push_back(bottleneck_inner(tape, x, block, i, mode));
      merged = conv2d(tape, concat_channels(tape, std::span<const Variable<T>>(parts)),
                      block.expand.front());
      break;
    }
    case BlockForm::grouped:
      merged = conv2d(tape, bottleneck_inner(tape, x, block, 0, mode), block.expand.front());
      break;
  }
  return batchnorm2d(tape, merged, block.expand_bn, mode);
}

namespace {

template <typename T>
Variable<T> finish_block(Tape<T>* tape, const Variable<T>& x, Block<T>& block, Mode mode) {
  auto residual = block_residual(tape, x, block, mode);
  auto shortcut = block_shortcut(tape, x, block, mode);
  return relu(tape, add(tape, shortcut, residual));
}

}  // namespace

template <typename T>
Variable<T> block_forward_split(Tape<T>* tape, const Variable<T>& x, Block<T>& block, Mode mode) {
  check_input(x, block, BlockForm::split);
  return finish_block(tape, x, block, mode);
}

template <typename T>
Variable<T> block_forward_concat(Tape<T>* tape, const Variable<T>& x, Block<T>& block,
                                 Mode mode) {
  check_input(x, block, BlockForm::concat);
  return finish_block(tape, x, block, mode);
}

template <typename T>
Variable<T> block_forward_grouped(Tape<T>* tape, const Variable<T>& x, Block<T>& block,
                                  Mode mode) {
  check_input(x, block, BlockForm::grouped);
  return finish_block(tape, x, block, mode);
}

template <typename T>
Variable<T> block_forward(Tape<T>* tape, const Variable<T>& x, Block<T>& block, Mode mode) {
  return finish_block(tape, x, block, mode);
}

template <typename T>
Variable<T> Model<T>::forward(Tape<T>* tape, const Variable<T>& images, Mode mode) {
  if (images.shape().c != kImageChannels) {
    throw ShapeError("model expects 3-channel images, got " + to_string(images.shape()));
  }
  Variable<T> h = relu(tape, conv_bn(tape, images, stem, mode));
  for (auto& b : blocks) h = block_forward(tape, h, b, mode);
  return linear(tape, global_avg_pool(tape, h), head);
}

namespace {

std::string block_prefix(std::size_t stage, std::size_t index) {
  return "stage" + std::to_string(stage + 1) + ".block" + std::to_string(index);
}

std::string part_name(const std::string& prefix, const char* part, std::size_t i,
                      std::size_t count) {
  std::string name = prefix + "." + part;
  if (count > 1) name += "." + std::to_string(i);
  return name;
}

}  // namespace

template <typename T>
std::vector<NamedParameter<T>> Model<T>::named_parameters() const {
  std::vector<NamedParameter<T>> out;
  auto add_cb = [&out](const std::string& prefix, const ConvBn<T>& cb) {
    out.push_back({prefix + ".conv.weight", cb.conv.weight});
    out.push_back({prefix + ".bn.gamma", cb.bn.gamma});
    out.push_back({prefix + ".bn.beta", cb.bn.beta});
  };
  add_cb("stem", stem);
  std::size_t bi = 0;
  for (std::size_t s = 0; s < plan.size(); ++s) {
    for (std::size_t k = 0; k < plan[s].blocks; ++k, ++bi) {
      const Block<T>& b = blocks[bi];
      const std::string prefix = block_prefix(s, k);
      for (std::size_t i = 0; i < b.reduce.size(); ++i)
        add_cb(part_name(prefix, "reduce", i, b.reduce.size()), b.reduce[i]);
      for (std::size_t i = 0; i < b.transform.size(); ++i)
        add_cb(part_name(prefix, "transform", i, b.transform.size()), b.transform[i]);
      for (std::size_t i = 0; i < b.expand.size(); ++i)
        out.push_back({part_name(prefix, "expand", i, b.expand.size()) + ".conv.weight",
                       b.expand[i].weight});
      out.push_back({prefix + ".expand.bn.gamma", b.expand_bn.gamma});
      out.push_back({prefix + ".expand.bn.beta", b.expand_bn.beta});
      if (b.projection) add_cb(prefix + ".projection", *b.projection);
    }
  }
  out.push_back({"head.weight", head.weight});
  out.push_back({"head.bias", head.bias});
  return out;
}

template <typename T>
std::vector<Variable<T>> Model<T>::parameters() const {
  std::vector<Variable<T>> out;
  for (auto& np : named_parameters()) out.push_back(np.variable);
  return out;
}

template <typename T>
std::vector<NamedBuffer<T>> Model<T>::buffers() {
  std::vector<NamedBuffer<T>> out;
  auto add_bn = [&out](const std::string& prefix, BatchNorm2d<T>& bn) {
    out.push_back({prefix + ".running_mean", &bn.running_mean});
    out.push_back({prefix + ".running_var", &bn.running_var});
  };
  add_bn("stem.bn", stem.bn);
  std::size_t bi = 0;
  for (std::size_t s = 0; s < plan.size(); ++s) {
    for (std::size_t k = 0; k < plan[s].blocks; ++k, ++bi) {
      Block<T>& b = blocks[bi];
      const std::string prefix = block_prefix(s, k);
      for (std::size_t i = 0; i < b.reduce.size(); ++i)
        add_bn(part_name(prefix, "reduce", i, b.reduce.size()) + ".bn", b.reduce[i].bn);
      for (std::size_t i = 0; i < b.transform.size(); ++i)
        add_bn(part_name(prefix, "transform", i, b.transform.size()) + ".bn", b.transform[i].bn);
      add_bn(prefix + ".expand.bn", b.expand_bn);
      if (b.projection) add_bn(prefix + ".projection.bn", b.projection->bn);
    }
  }
  return out;
}

template <typename T>
std::size_t Model<T>::layer_count() const {
  // Stem, three per block (reduce, transform, expand), head.
  return 1 + 3 * blocks.size() + 1;
}

template <typename T>
Model<T> build_model(const ModelConfig& cfg, Rng& rng) {
  Model<T> m;
  m.config = cfg;
  m.plan = validate_config(cfg);
  m.stem = {Conv2d<T>::make(kImageChannels, kStemWidth, 3, 1, 1, 1, rng),
            BatchNorm2d<T>::make(kStemWidth)};
  std::size_t in = kStemWidth;
  for (const auto& st : m.plan) {
    for (std::size_t k = 0; k < st.blocks; ++k) {
      const std::size_t stride = k == 0 ? st.first_stride : 1;
      m.blocks.push_back(Block<T>::make(cfg.block_form, in, st.inner_width, st.out_width, stride,
                                        static_cast<std::size_t>(cfg.cardinality), rng));
      in = st.out_width;
    }
  }
  m.head = Linear<T>::make(in, static_cast<std::size_t>(cfg.num_classes), rng);
  return m;
}

template <typename T>
std::size_t count_parameters(const Model<T>& model) {
  std::size_t total = 0;
  for (const auto& np : model.named_parameters())
    total += np.variable.value().size();
  return total;
}

template <typename T>
std::vector<LayerSummary> summarize(const Model<T>& model) {
  std::vector<LayerSummary> out;
  std::size_t spatial = 32;
  auto conv_entry = [&](const std::string& name, const char* kind, const Conv2d<T>& c,
                        const BatchNorm2d<T>* bn, std::size_t out_spatial) {
    LayerSummary l;
    l.name = name;
    l.kind = kind;
    l.weight_shape = c.weight.shape();
    l.groups = c.groups;
    l.output_shape = Shape{1, c.out_channels(), out_spatial, out_spatial};
    l.parameters = c.weight.value().size() + (bn ? 2 * bn->channels() : 0);
    out.push_back(l);
  };
  conv_entry("stem", "conv", model.stem.conv, &model.stem.bn, spatial);
  std::size_t bi = 0;
  for (std::size_t s = 0; s < model.plan.size(); ++s) {
    for (std::size_t k = 0; k < model.plan[s].blocks; ++k, ++bi) {
      const Block<T>& b = model.blocks[bi];
      const std::string prefix = block_prefix(s, k);
      const std::size_t after = spatial / b.stride;
      for (std::size_t i = 0; i < b.reduce.size(); ++i)
        conv_entry(part_name(prefix, "reduce", i, b.reduce.size()), "conv", b.reduce[i].conv,
                   &b.reduce[i].bn, spatial);
      for (std::size_t i = 0; i < b.transform.size(); ++i)
        conv_entry(part_name(prefix, "transform", i, b.transform.size()), "conv",
                   b.transform[i].conv, &b.transform[i].bn, after);
      for (std::size_t i = 0; i < b.expand.size(); ++i) {
        // The shared expand batch norm is attributed to the first expand conv.
        conv_entry(part_name(prefix, "expand", i, b.expand.size()), "conv", b.expand[i],
                   i == 0 ? &b.expand_bn : nullptr, after);
      }
      if (b.projection)
        conv_entry(prefix + ".projection", "shortcut", b.projection->conv, &b.projection->bn,
                   after);
      spatial = after;
    }
  }
  LayerSummary head;
  head.name = "head";
  head.kind = "linear";
  head.weight_shape = model.head.weight.shape();
  head.output_shape = Shape{1, model.head.weight.shape().c, 1, 1};
  head.parameters = model.head.weight.value().size() + model.head.bias.value().size();
  out.push_back(head);
  return out;
}

std::string format_summary(std::span<const LayerSummary> layers) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-28s %-9s %-22s %-18s %12s\n", "layer", "kind",
                "(in, filter, out)", "output", "params");
  os << line;
  std::size_t total = 0;
  for (const auto& l : layers) {
    std::string geometry;
    if (l.kind == "linear") {
      geometry = "(" + std::to_string(l.weight_shape.n) + ", fc, " +
                 std::to_string(l.weight_shape.c) + ")";
    } else {
      geometry = "(" + std::to_string(l.weight_shape.c * l.groups) + ", " +
                 std::to_string(l.weight_shape.h) + "x" + std::to_string(l.weight_shape.w) +
                 ", " + std::to_string(l.weight_shape.n) + ")";
      if (l.groups > 1) geometry += " g=" + std::to_string(l.groups);
    }
    const std::string shape = std::to_string(l.output_shape.c) + "x" +
                              std::to_string(l.output_shape.h) + "x" +
                              std::to_string(l.output_shape.w);
    std::snprintf(line, sizeof line, "%-28s %-9s %-22s %-18s %12zu\n", l.name.c_str(),
                  l.kind.c_str(), geometry.c_str(), shape.c_str(), l.parameters);
    os << line;
    total += l.parameters;
  }
  std::snprintf(line, sizeof line, "%-28s %-9s %-22s %-18s %12zu\n", "total", "", "", "", total);
  os << line;
  return os.str();
}

#define RESNEXT_INSTANTIATE(T)                                                                 \
  template struct Block<T>;                                                                    \
  template class Model<T>;                                                                     \
  template Block<T> translate_weights(const Block<T>&, BlockForm);                             \
  template Variable<T> aggregate_transform(Tape<T>*, const Variable<T>&,                       \
                                           std::span<const PathFn<T>>);                        \
  template Variable<T> block_forward_split(Tape<T>*, const Variable<T>&, Block<T>&, Mode);     \
  template Variable<T> block_forward_concat(Tape<T>*, const Variable<T>&, Block<T>&, Mode);    \
  template Variable<T> block_forward_grouped(Tape<T>*, const Variable<T>&, Block<T>&, Mode);   \
  template Variable<T> block_forward(Tape<T>*, const Variable<T>&, Block<T>&, Mode);           \
  template Variable<T> block_shortcut(Tape<T>*, const Variable<T>&, Block<T>&, Mode);          \
  template Variable<T> block_residual(Tape<T>*, const Variable<T>&, Block<T>&, Mode);          \
  template Variable<T> split_path_forward(Tape<T>*, const Variable<T>&, Block<T>&, std::size_t, \
                                          Mode);                                               \
  template Model<T> build_model<T>(const ModelConfig&, Rng&);                                  \
  template std::size_t count_parameters(const Model<T>&);                                      \
  template std::vector<LayerSummary> summarize(const Model<T>&);

RESNEXT_INSTANTIATE(float)
RESNEXT_INSTANTIATE(double)

#undef RESNEXT_INSTANTIATE

}  // namespace resnext
