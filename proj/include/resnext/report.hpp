#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "resnext/trainer.hpp"

namespace resnext {

class PlotError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Series {
  std::string label;  // e.g. "8x64d"
  std::vector<MetricsRow> rows;
};

// Test error per epoch, one polyline per series, a dashed vertical marker at
// each drop epoch inside the plotted range.
std::string render_error_vs_epoch(std::span<const Series> series, std::span<const int> drop_epochs,
                                  const std::string& title = "Test error vs. epoch");

struct SizePoint {
  std::string label;
  std::size_t parameters = 0;
  double error = 0.0;  // percent
};

// Final test error against parameter count; points sorted ascending by size
// and joined by one polyline.
std::string render_error_vs_size(std::span<const SizePoint> points,
                                 const std::string& title = "Test error vs. model size");

// Last row's test error of each series.
std::vector<SizePoint> size_points(std::span<const Series> series,
                                   std::span<const std::size_t> parameters);

inline constexpr const char* kArtifactVersion = "0.1.0";

// Plain key=value file that fully describes a run.
struct RunManifest {
  std::string run_id;
  std::string subset = "cifar2";
  ModelConfig model;
  TrainConfig train;
  std::size_t threads = 1;
  std::size_t limit_train = 0;  // 0 keeps the whole split
  std::size_t limit_test = 0;
  bool record_wall_time = true;
  std::string data_dir;
  std::string out_dir;
  // Produced files, relative to out_dir.
  std::map<std::string, std::string> files;
  std::string artifact_version = kArtifactVersion;

  std::string default_run_id() const;
};

std::string format_run_manifest(const RunManifest& m);
RunManifest parse_run_manifest(const std::string& text);
RunManifest read_run_manifest(const std::filesystem::path& path);

// Exactly one of depth, cardinality, base width may take several values.
struct SweepGrid {
  std::vector<int> depths;
  std::vector<int> cardinalities;
  std::vector<int> base_widths;
};

enum class SweepAxis { depth, cardinality, base_width, none };

SweepAxis sweep_axis(const SweepGrid& grid);
std::vector<ModelConfig> expand_sweep(const SweepGrid& grid, const ModelConfig& base);

// First `limit` examples of each split in subset order (0 keeps everything);
// classes stay interleaved as in the source files.
Dataset limit_dataset(Dataset data, std::size_t limit_train, std::size_t limit_test);

struct ExperimentResult {
  TrainState state;
  std::filesystem::path run_dir;
};

// Load data, build or resume the state, train to completion and write the
// subset manifest, metrics CSV, checkpoint, plot and run manifest into
// out_dir/run_id.
ExperimentResult run_experiment(RunManifest manifest, bool resume,
                                const std::function<void(const MetricsRow&)>& on_epoch = {});

}  // namespace resnext
