#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "resnext/data.hpp"
#include "resnext/model.hpp"

namespace resnext {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int epochs = 300;
  std::size_t batch_size = 128;
  double base_lr = 0.1;
  std::vector<int> lr_drop_epochs = {150, 225};
  double lr_drop_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::uint64_t seed = 0;

  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// base_lr * factor^(drops at or before epoch); epochs are zero-based.
double lr_at_epoch(const TrainConfig& cfg, int epoch);

// Momentum SGD with coupled weight decay:
//   g = grad + wd * w;  v = momentum * v + g;  w -= lr * v
template <typename T>
class Sgd {
 public:
  Sgd() = default;
  explicit Sgd(std::vector<Variable<T>> params);

  void step(double lr, double momentum, double weight_decay);

  const std::vector<Variable<T>>& params() const { return params_; }
  std::vector<Tensor<T>>& velocity() { return velocity_; }
  const std::vector<Tensor<T>>& velocity() const { return velocity_; }

 private:
  std::vector<Variable<T>> params_;
  std::vector<Tensor<T>> velocity_;
};

struct MetricsRow {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;  // percent
  double test_loss = 0.0;
  double test_err = 0.0;  // percent
  double wall_sec = 0.0;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

struct EpochStats {
  double loss = 0.0;
  double accuracy = 0.0;  // percent
  std::size_t batches = 0;
};

struct EvalResult {
  double loss = 0.0;
  double error = 0.0;  // percent
};

// Everything needed to continue a run exactly where it stopped. The data
// randomness is counter-based, so (seed, next_epoch) is the full RNG state.
struct TrainState {
  ModelConfig model_config;
  TrainConfig train_config;
  Model<float> model;
  Sgd<float> optimizer;
  NormStats norm;
  int next_epoch = 0;
  std::vector<MetricsRow> history;
};

// Model initialised from mt19937_64(cfg.seed).
TrainState make_train_state(const ModelConfig& model_config, const TrainConfig& train_config,
                            const NormStats& norm);

// One shuffled, augmented pass in train mode.
EpochStats train_epoch(Model<float>& model, Sgd<float>& optimizer, const Split& train,
                       const NormStats& norm, const TrainConfig& cfg, int epoch);

// Eval mode, no augmentation, sequential batches.
EvalResult evaluate(Model<float>& model, const Split& test, const NormStats& norm,
                    std::size_t batch_size = 128);

std::size_t count_correct(const Tensorf& logits, std::span<const int> labels);

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(TrainState& state);
TrainState deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

// Raises CheckpointError if `expected` differs from what the checkpoint holds.
void check_resume_config(const TrainState& state, const ModelConfig& expected);

inline constexpr const char* kMetricsHeader =
    "epoch,lr,train_loss,train_acc,test_loss,test_err,wall_sec";

std::string format_metrics_csv(std::span<const MetricsRow> rows);
std::vector<MetricsRow> parse_metrics_csv(const std::string& text);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

// Write to a sibling temp file, then rename over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

struct RunOptions {
  int stop_epoch = -1;  // exclusive; -1 runs to train_config.epochs
  std::optional<std::filesystem::path> metrics_path;
  std::optional<std::filesystem::path> checkpoint_path;
  bool record_wall_time = true;
  std::function<void(const MetricsRow&)> on_epoch;
};

// Train and evaluate epoch by epoch from state.next_epoch, rewriting the
// metrics CSV and checkpoint after each evaluation.
void run_training(TrainState& state, const Dataset& data, const RunOptions& options);

}  // namespace resnext
