#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "resnext/layers.hpp"
#include "resnext/tensor.hpp"

namespace resnext {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kImageBytes = 3 * kImageSide * kImageSide;
inline constexpr std::size_t kRecordBytes = 1 + kImageBytes;
inline constexpr std::size_t kCifarClasses = 10;
inline constexpr std::size_t kCropPad = 2;

// Published label order of the CIFAR-10 binary release.
inline constexpr std::array<std::string_view, kCifarClasses> kClassNames = {
    "airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"};

// One label byte followed by 3072 channel-planar (R, G, B) 32x32 pixels.
struct CifarRecord {
  std::uint8_t label = 0;
  std::array<std::uint8_t, kImageBytes> pixels{};
};

struct RecordSource {
  std::string file;
  std::size_t index = 0;  // record number; byte offset is index * kRecordBytes

  std::size_t byte_offset() const { return index * kRecordBytes; }
};

std::vector<CifarRecord> parse_cifar_bin(std::span<const std::uint8_t> bytes);

std::vector<CifarRecord> read_cifar_file(const std::filesystem::path& path);

// Records of data_batch_1..5.bin and test_batch.bin, in file order.
struct CifarArchive {
  std::vector<CifarRecord> train;
  std::vector<CifarRecord> test;
  std::vector<RecordSource> train_sources;
  std::vector<RecordSource> test_sources;
};

inline constexpr std::array<std::string_view, 5> kTrainFiles = {
    "data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin",
    "data_batch_5.bin"};
inline constexpr std::string_view kTestFile = "test_batch.bin";

// Also accepts the directory one level above, as unpacked from the release
// tarball (cifar-10-batches-bin/).
CifarArchive load_cifar_dir(const std::filesystem::path& dir);

enum class SubsetName { cifar2, cifar5, cifar10 };

struct SubsetSpec {
  SubsetName name = SubsetName::cifar10;
  std::vector<int> classes;  // original labels, in dense-index order
  std::size_t train_per_class = 0;
  std::size_t test_per_class = 0;

  std::string label() const;
  std::size_t num_classes() const { return classes.size(); }
};

SubsetSpec subset_spec(SubsetName name);
SubsetSpec parse_subset(std::string_view name);

// Images kept as raw bytes; conversion to float happens per batch.
struct Split {
  std::vector<std::uint8_t> pixels;
  std::vector<int> labels;  // dense indices
  std::vector<RecordSource> sources;

  std::size_t size() const { return labels.size(); }
  std::span<const std::uint8_t> image(std::size_t i) const {
    return std::span<const std::uint8_t>(pixels).subspan(i * kImageBytes, kImageBytes);
  }
};

struct Dataset {
  SubsetSpec spec;
  Split train;
  Split test;
};

// First k records per class in file order; labels remapped to spec order.
Dataset build_subset(const CifarArchive& archive, const SubsetSpec& spec);

// Plain-text audit record of the subset: classes, counts and the source
// file/offset of every example.
std::string subset_manifest(const Dataset& dataset);

// Per-channel statistics of pixel / 255 over a split.
struct NormStats {
  std::array<float, 3> mean{};
  std::array<float, 3> std{};

  friend bool operator==(const NormStats&, const NormStats&) = default;
};

NormStats compute_norm_stats(const Split& split);

// [1, 3, 32, 32] at raw 0..255 scale.
Tensorf image_tensor(std::span<const std::uint8_t> pixels);

struct AugmentChoice {
  std::size_t row = kCropPad;  // crop offset in the padded image, 0..2*kCropPad
  std::size_t col = kCropPad;
  bool flip = false;
};

AugmentChoice draw_augment(std::uint64_t random_bits);
Tensorf apply_augment(const Tensorf& image, const AugmentChoice& choice);

// Zero-pad by 2, uniform 32x32 crop over all 25 offsets, flip with p = 1/2.
Tensorf augment(const Tensorf& image, Rng& rng);

// (x / 255 - mean) / std per channel.
Tensorf normalize(const Tensorf& image, const NormStats& stats);

// Counter-based seeds, so epoch e and example i see the same randomness
// whether or not the run was interrupted.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
std::uint64_t epoch_seed(std::uint64_t seed, int epoch);

// Index lists of each batch; shuffled from `seed` when requested; the final
// partial batch is kept.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t count, std::size_t batch_size,
                                                    bool shuffle, std::uint64_t seed);

struct Batch {
  Tensorf images;  // [b, 3, 32, 32], normalised
  std::vector<int> labels;
};

// Augmentation for example i is drawn from mix_seed(epoch_seed, i); pass
// augment = false for evaluation.
Batch make_batch(const Split& split, std::span<const std::size_t> indices,
                 const NormStats& stats, bool augment, std::uint64_t epoch_seed);

}  // namespace resnext
