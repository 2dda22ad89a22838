#include "resnext/trainer.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace resnext {

void TrainConfig::validate() const {
  if (epochs <= 0) throw std::invalid_argument("epochs must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (!(base_lr > 0.0)) throw std::invalid_argument("base learning rate must be positive");
  for (std::size_t i = 0; i < lr_drop_epochs.size(); ++i) {
    if (lr_drop_epochs[i] < 0) throw std::invalid_argument("drop epochs must be non-negative");
    if (i > 0 && lr_drop_epochs[i] <= lr_drop_epochs[i - 1])
      throw std::invalid_argument("drop epochs must be strictly increasing");
  }
  if (momentum < 0.0 || weight_decay < 0.0)
    throw std::invalid_argument("momentum and weight decay must be non-negative");
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  if (epoch < 0 || epoch >= cfg.epochs) {
    throw std::out_of_range("epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(cfg.epochs) + ")");
  }
  double lr = cfg.base_lr;
  for (int drop : cfg.lr_drop_epochs)
    if (drop <= epoch) lr *= cfg.lr_drop_factor;
  return lr;
}

template <typename T>
Sgd<T>::Sgd(std::vector<Variable<T>> params) : params_(std::move(params)) {
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.emplace_back(p.shape());
}

template <typename T>
void Sgd<T>::step(double lr, double momentum, double weight_decay) {
  const T lr_t = static_cast<T>(lr);
  const T m = static_cast<T>(momentum);
  const T wd = static_cast<T>(weight_decay);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Variable<T>& p = params_[i];
    if (!p.has_grad()) {
      throw TrainingError("parameter " + std::to_string(i) + " has no gradient");
    }
    const T* g = p.grad().raw();
    T* w = p.mutable_value().raw();
    T* v = velocity_[i].raw();
    if (velocity_[i].shape() != p.shape()) throw TrainingError("velocity shape mismatch");
    const std::size_t n = p.value().size();
    for (std::size_t k = 0; k < n; ++k) {
      v[k] = m * v[k] + (g[k] + wd * w[k]);
      w[k] -= lr_t * v[k];
    }
  }
}

template class Sgd<float>;
template class Sgd<double>;

std::size_t count_correct(const Tensorf& logits, std::span<const int> labels) {
  const Shape s = logits.shape();
  if (s.n != labels.size()) throw ShapeError("count_correct: batch size mismatch");
  const std::size_t k = s.sample();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < s.n; ++i) {
    const float* row = logits.raw() + i * k;
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (row[j] > row[best]) best = j;
    if (static_cast<int>(best) == labels[i]) ++correct;
  }
  return correct;
}

TrainState make_train_state(const ModelConfig& model_config, const TrainConfig& train_config,
                            const NormStats& norm) {
  train_config.validate();
  Rng rng(train_config.seed);
  TrainState state{model_config, train_config, build_model<float>(model_config, rng), {}, norm, 0,
                   {}};
  state.optimizer = Sgd<float>(state.model.parameters());
  return state;
}

EpochStats train_epoch(Model<float>& model, Sgd<float>& optimizer, const Split& train,
                       const NormStats& norm, const TrainConfig& cfg, int epoch) {
  if (train.size() == 0) throw TrainingError("empty training split");
  const double lr = lr_at_epoch(cfg, epoch);
  const std::uint64_t es = epoch_seed(cfg.seed, epoch);
  const auto batches = batch_indices(train.size(), cfg.batch_size, true, es);
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    Batch batch = make_batch(train, batches[b], norm, true, es);
    Tape<float> tape;
    Variable<float> x(std::move(batch.images));
    Variable<float> logits = model.forward(&tape, x, Mode::train);
    Variable<float> loss = softmax_cross_entropy<float>(&tape, logits, batch.labels);
    const float value = loss.value()[0];
    if (!std::isfinite(value)) {
      throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                          std::to_string(b));
    }
    loss_sum += static_cast<double>(value) * static_cast<double>(batch.labels.size());
    correct += count_correct(logits.value(), batch.labels);
    zero_grads(optimizer.params());
    tape.backward(loss);
    optimizer.step(lr, cfg.momentum, cfg.weight_decay);
  }
  const double n = static_cast<double>(train.size());
  return {loss_sum / n, 100.0 * static_cast<double>(correct) / n, batches.size()};
}

EvalResult evaluate(Model<float>& model, const Split& test, const NormStats& norm,
                    std::size_t batch_size) {
  if (test.size() == 0) throw TrainingError("cannot evaluate on an empty split");
  const auto batches = batch_indices(test.size(), batch_size, false, 0);
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (const auto& idx : batches) {
    Batch batch = make_batch(test, idx, norm, false, 0);
    Variable<float> x(std::move(batch.images));
    Variable<float> logits = model.forward(nullptr, x, Mode::eval);
    Variable<float> loss = softmax_cross_entropy<float>(nullptr, logits, batch.labels);
    loss_sum += static_cast<double>(loss.value()[0]) * static_cast<double>(batch.labels.size());
    correct += count_correct(logits.value(), batch.labels);
  }
  const double n = static_cast<double>(test.size());
  return {loss_sum / n, 100.0 - 100.0 * static_cast<double>(correct) / n};
}

namespace {

constexpr char kMagic[8] = {'R', 'E', 'S', 'N', 'E', 'X', 'T', 'C'};

class Writer {
 public:
  void u8(std::uint8_t v) { bytes.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  void tensor(const std::string& name, const Tensorf& t) {
    str(name);
    const Shape s = t.shape();
    u64(s.n);
    u64(s.c);
    u64(s.h);
    u64(s.w);
    for (float v : t.data()) f32(v);
  }

  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    auto b = take(n);
    return std::string(b.begin(), b.end());
  }
  void tensor_into(const std::string& expected_name, Tensorf& dst) {
    const std::string name = str();
    if (name != expected_name) {
      throw CheckpointError("corrupted checkpoint: expected tensor '" + expected_name +
                            "', found '" + name + "'");
    }
    Shape s{};
    s.n = u64();
    s.c = u64();
    s.h = u64();
    s.w = u64();
    if (s != dst.shape()) {
      throw CheckpointError("corrupted checkpoint: tensor '" + name + "' has shape " +
                            to_string(s) + ", model expects " + to_string(dst.shape()));
    }
    if (remaining() / 4 < s.numel()) throw CheckpointError("corrupted checkpoint: truncated data");
    for (float& v : dst.data()) v = f32();
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> take(std::size_t n) {
    if (remaining() < n) throw CheckpointError("corrupted checkpoint: unexpected end of data");
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void write_configs(Writer& w, const ModelConfig& m, const TrainConfig& t) {
  w.i32(m.depth);
  w.i32(m.cardinality);
  w.i32(m.base_width);
  w.i32(m.num_classes);
  w.u8(static_cast<std::uint8_t>(m.block_form));
  w.i32(t.epochs);
  w.u64(t.batch_size);
  w.f64(t.base_lr);
  w.u32(static_cast<std::uint32_t>(t.lr_drop_epochs.size()));
  for (int e : t.lr_drop_epochs) w.i32(e);
  w.f64(t.lr_drop_factor);
  w.f64(t.momentum);
  w.f64(t.weight_decay);
  w.u64(t.seed);
}

void read_configs(Reader& r, ModelConfig& m, TrainConfig& t) {
  m.depth = r.i32();
  m.cardinality = r.i32();
  m.base_width = r.i32();
  m.num_classes = r.i32();
  const std::uint8_t form = r.u8();
  if (form > static_cast<std::uint8_t>(BlockForm::grouped))
    throw CheckpointError("corrupted checkpoint: bad block form");
  m.block_form = static_cast<BlockForm>(form);
  t.epochs = r.i32();
  t.batch_size = r.u64();
  t.base_lr = r.f64();
  const std::uint32_t drops = r.u32();
  if (drops > 1024) throw CheckpointError("corrupted checkpoint: bad drop-epoch count");
  t.lr_drop_epochs.resize(drops);
  for (auto& e : t.lr_drop_epochs) e = r.i32();
  t.lr_drop_factor = r.f64();
  t.momentum = r.f64();
  t.weight_decay = r.f64();
  t.seed = r.u64();
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(TrainState& state) {
  Writer w;
  w.bytes.insert(w.bytes.end(), std::begin(kMagic), std::end(kMagic));
  w.u32(kCheckpointVersion);
  write_configs(w, state.model_config, state.train_config);
  w.i32(state.next_epoch);
  for (std::size_t c = 0; c < 3; ++c) {
    w.f32(state.norm.mean[c]);
    w.f32(state.norm.std[c]);
  }
  const auto params = state.model.named_parameters();
  const auto buffers = state.model.buffers();
  const auto& velocity = state.optimizer.velocity();
  if (velocity.size() != params.size()) throw CheckpointError("optimizer does not match model");
  w.u32(static_cast<std::uint32_t>(params.size() * 2 + buffers.size()));
  for (const auto& p : params) w.tensor(p.name, p.variable.value());
  for (const auto& b : buffers) w.tensor(b.name, *b.tensor);
  for (std::size_t i = 0; i < params.size(); ++i)
    w.tensor("velocity." + params[i].name, velocity[i]);
  w.u32(static_cast<std::uint32_t>(state.history.size()));
  for (const auto& row : state.history) {
    w.i32(row.epoch);
    w.f64(row.lr);
    w.f64(row.train_loss);
    w.f64(row.train_acc);
    w.f64(row.test_loss);
    w.f64(row.test_err);
    w.f64(row.wall_sec);
  }
  return std::move(w.bytes);
}

TrainState deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  Reader r(bytes.subspan(sizeof(kMagic)));
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint format version " + std::to_string(version) +
                          " is not supported (expected " + std::to_string(kCheckpointVersion) +
                          ")");
  }
  ModelConfig mc;
  TrainConfig tc;
  read_configs(r, mc, tc);
  const int next_epoch = r.i32();
  NormStats norm;
  for (std::size_t c = 0; c < 3; ++c) {
    norm.mean[c] = r.f32();
    norm.std[c] = r.f32();
  }
  TrainState state;
  try {
    state = make_train_state(mc, tc, norm);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("corrupted checkpoint: ") + e.what());
  }
  state.next_epoch = next_epoch;
  const auto params = state.model.named_parameters();
  const auto buffers = state.model.buffers();
  const std::uint32_t count = r.u32();
  if (count != params.size() * 2 + buffers.size()) {
    throw CheckpointError("corrupted checkpoint: tensor count " + std::to_string(count) +
                          " does not match the model");
  }
  for (const auto& p : params) {
    Variable<float> v = p.variable;
    r.tensor_into(p.name, v.mutable_value());
  }
  for (const auto& b : buffers) r.tensor_into(b.name, *b.tensor);
  auto& velocity = state.optimizer.velocity();
  for (std::size_t i = 0; i < params.size(); ++i)
    r.tensor_into("velocity." + params[i].name, velocity[i]);
  const std::uint32_t rows = r.u32();
  if (rows > r.remaining()) throw CheckpointError("corrupted checkpoint: bad history length");
  state.history.resize(rows);
  for (auto& row : state.history) {
    row.epoch = r.i32();
    row.lr = r.f64();
    row.train_loss = r.f64();
    row.train_acc = r.f64();
    row.test_loss = r.f64();
    row.test_err = r.f64();
    row.wall_sec = r.f64();
  }
  if (r.remaining() != 0) {
    throw CheckpointError("corrupted checkpoint: " + std::to_string(r.remaining()) +
                          " trailing bytes");
  }
  return state;
}

void save_checkpoint(TrainState& state, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(state);
  write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

void check_resume_config(const TrainState& state, const ModelConfig& expected) {
  if (!(state.model_config == expected)) {
    throw CheckpointError("checkpoint holds model " + state.model_config.label() + " depth " +
                          std::to_string(state.model_config.depth) + " (" +
                          to_string(state.model_config.block_form) +
                          "), resume requested " + expected.label() + " depth " +
                          std::to_string(expected.depth) + " (" + to_string(expected.block_form) +
                          ")");
  }
}

namespace {

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

std::string format_metrics_csv(std::span<const MetricsRow> rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + "," + format_real(r.lr) + "," + format_real(r.train_loss) +
           "," + format_real(r.train_acc) + "," + format_real(r.test_loss) + "," +
           format_real(r.test_err) + "," + format_real(r.wall_sec) + "\n";
  }
  return out;
}

std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("metrics CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMetricsHeader) {
    throw std::runtime_error("metrics CSV header mismatch: '" + line + "'");
  }
  std::vector<MetricsRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 7) {
      throw std::runtime_error("metrics CSV line " + std::to_string(lineno) + " has " +
                               std::to_string(cells.size()) + " fields, expected 7");
    }
    try {
      MetricsRow r;
      r.epoch = std::stoi(cells[0]);
      r.lr = std::stod(cells[1]);
      r.train_loss = std::stod(cells[2]);
      r.train_acc = std::stod(cells[3]);
      r.test_loss = std::stod(cells[4]);
      r.test_err = std::stod(cells[5]);
      r.wall_sec = std::stod(cells[6]);
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw std::runtime_error("metrics CSV line " + std::to_string(lineno) +
                               " has a non-numeric field");
    }
  }
  return rows;
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_metrics_csv(ss.str());
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void run_training(TrainState& state, const Dataset& data, const RunOptions& options) {
  const int stop = options.stop_epoch < 0 ? state.train_config.epochs
                                          : std::min(options.stop_epoch, state.train_config.epochs);
  for (int epoch = state.next_epoch; epoch < stop; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const EpochStats tr = train_epoch(state.model, state.optimizer, data.train, state.norm,
                                      state.train_config, epoch);
    const EvalResult ev =
        evaluate(state.model, data.test, state.norm, state.train_config.batch_size);
    MetricsRow row;
    row.epoch = epoch;
    row.lr = lr_at_epoch(state.train_config, epoch);
    row.train_loss = tr.loss;
    row.train_acc = tr.accuracy;
    row.test_loss = ev.loss;
    row.test_err = ev.error;
    if (options.record_wall_time) {
      row.wall_sec =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    state.history.push_back(row);
    state.next_epoch = epoch + 1;
    if (options.metrics_path) write_file_atomic(*options.metrics_path, format_metrics_csv(state.history));
    if (options.checkpoint_path) save_checkpoint(state, *options.checkpoint_path);
    if (options.on_epoch) options.on_epoch(row);
  }
}

}  // namespace resnext
