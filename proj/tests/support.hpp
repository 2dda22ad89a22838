#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "resnext/data.hpp"
#include "resnext/tensor.hpp"

namespace resnext::testing {

template <typename T>
Tensor<T> random_tensor(const Shape& s, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  Tensor<T> t(s);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("resnext-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// Record bytes with a class-dependent colour bias and a class-dependent
// stripe so that small models can learn the labels.
inline std::vector<std::uint8_t> synthetic_record(int label, std::mt19937_64& rng) {
  std::vector<std::uint8_t> rec(kRecordBytes);
  rec[0] = static_cast<std::uint8_t>(label);
  std::uniform_int_distribution<int> noise(-40, 40);
  const std::size_t plane = kImageSide * kImageSide;
  for (std::size_t c = 0; c < 3; ++c) {
    const int base = 60 + 18 * ((label + static_cast<int>(c) * 3) % 10);
    for (std::size_t i = 0; i < kImageSide; ++i)
      for (std::size_t j = 0; j < kImageSide; ++j) {
        const bool stripe = ((i + static_cast<std::size_t>(label)) / 4) % 2 == 0;
        int v = base + (stripe ? 30 : -30) + noise(rng);
        v = std::clamp(v, 0, 255);
        rec[1 + c * plane + i * kImageSide + j] = static_cast<std::uint8_t>(v);
      }
  }
  return rec;
}

inline void write_records(const std::filesystem::path& path, const std::vector<int>& labels,
                          std::mt19937_64& rng) {
  std::ofstream out(path, std::ios::binary);
  for (int label : labels) {
    const auto rec = synthetic_record(label, rng);
    out.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
  }
}

// A directory laid out like the CIFAR-10 binary release: five training files
// of `per_file` records and a test file of `test` records, labels uniform.
inline void write_synthetic_cifar(const std::filesystem::path& dir, std::size_t per_file,
                                  std::size_t test, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> label(0, 9);
  for (auto name : kTrainFiles) {
    std::vector<int> labels(per_file);
    for (auto& l : labels) l = label(rng);
    write_records(dir / name, labels, rng);
  }
  std::vector<int> labels(test);
  for (auto& l : labels) l = label(rng);
  write_records(dir / kTestFile, labels, rng);
}

// Same layout, but only `classes` appear, cycling, with exactly the per-class
// counts a subset needs. Much smaller than a full archive.
inline void write_subset_cifar(const std::filesystem::path& dir, const std::vector<int>& classes,
                               std::size_t train_per_class, std::size_t test_per_class,
                               std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(seed);
  auto cycle = [&](std::size_t per_class) {
    std::vector<int> labels;
    for (std::size_t i = 0; i < per_class; ++i)
      for (int c : classes) labels.push_back(c);
    return labels;
  };
  const std::size_t files = kTrainFiles.size();
  for (std::size_t f = 0; f < files; ++f) {
    const std::size_t share = train_per_class / files + (f < train_per_class % files ? 1 : 0);
    write_records(dir / kTrainFiles[f], cycle(share), rng);
  }
  write_records(dir / kTestFile, cycle(test_per_class), rng);
}

}  // namespace resnext::testing
