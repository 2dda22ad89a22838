#include "resnext/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

namespace resnext {

std::vector<CifarRecord> parse_cifar_bin(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % kRecordBytes != 0) {
    throw DataError("truncated CIFAR stream: " + std::to_string(bytes.size()) +
                    " bytes is not a multiple of the " + std::to_string(kRecordBytes) +
                    "-byte record size");
  }
  const std::size_t count = bytes.size() / kRecordBytes;
  std::vector<CifarRecord> records(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint8_t* rec = bytes.data() + i * kRecordBytes;
    if (rec[0] >= kCifarClasses) {
      throw DataError("record " + std::to_string(i) + " has label byte " +
                      std::to_string(rec[0]) + ", expected 0-9");
    }
    records[i].label = rec[0];
    std::copy_n(rec + 1, kImageBytes, records[i].pixels.begin());
  }
  return records;
}

std::vector<CifarRecord> read_cifar_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return parse_cifar_bin(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

CifarArchive load_cifar_dir(const std::filesystem::path& dir) {
  std::filesystem::path root = dir;
  if (!std::filesystem::exists(root / kTestFile) &&
      std::filesystem::exists(root / "cifar-10-batches-bin" / kTestFile)) {
    root /= "cifar-10-batches-bin";
  }
  CifarArchive archive;
  auto append = [&root](std::string_view name, std::vector<CifarRecord>& records,
                        std::vector<RecordSource>& sources) {
    const auto path = root / name;
    if (!std::filesystem::exists(path)) {
      throw DataError("missing CIFAR-10 file " + path.string());
    }
    auto part = read_cifar_file(path);
    for (std::size_t i = 0; i < part.size(); ++i) sources.push_back({std::string(name), i});
    records.insert(records.end(), part.begin(), part.end());
  };
  for (auto name : kTrainFiles) append(name, archive.train, archive.train_sources);
  append(kTestFile, archive.test, archive.test_sources);
  return archive;
}

std::string SubsetSpec::label() const {
  switch (name) {
    case SubsetName::cifar2:
      return "cifar2";
    case SubsetName::cifar5:
      return "cifar5";
    case SubsetName::cifar10:
      return "cifar10";
  }
  return "unknown";
}

SubsetSpec subset_spec(SubsetName name) {
  SubsetSpec s;
  s.name = name;
  switch (name) {
    case SubsetName::cifar2:
      s.classes = {3, 5};  // cat, dog
      s.train_per_class = 2500;
      s.test_per_class = 500;
      break;
    case SubsetName::cifar5:
      s.classes = {3, 5, 4, 7, 6};  // cat, dog, deer, horse, frog
      s.train_per_class = 1000;
      s.test_per_class = 200;
      break;
    case SubsetName::cifar10:
      s.classes = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
      s.train_per_class = 500;
      s.test_per_class = 100;
      break;
  }
  return s;
}

SubsetSpec parse_subset(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  std::erase(lower, '-');
  if (lower == "cifar2") return subset_spec(SubsetName::cifar2);
  if (lower == "cifar5") return subset_spec(SubsetName::cifar5);
  if (lower == "cifar10") return subset_spec(SubsetName::cifar10);
  throw DataError("unknown subset '" + std::string(name) + "' (expected cifar2, cifar5, cifar10)");
}

namespace {

Split select(const std::vector<CifarRecord>& records, const std::vector<RecordSource>& sources,
             const SubsetSpec& spec, std::size_t per_class, const char* split_name) {
  std::array<int, kCifarClasses> dense{};
  dense.fill(-1);
  for (std::size_t i = 0; i < spec.classes.size(); ++i)
    dense[static_cast<std::size_t>(spec.classes[i])] = static_cast<int>(i);

  std::vector<std::size_t> taken(spec.classes.size(), 0);
  Split out;
  out.pixels.reserve(per_class * spec.classes.size() * kImageBytes);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const int d = dense[records[i].label];
    if (d < 0 || taken[static_cast<std::size_t>(d)] >= per_class) continue;
    ++taken[static_cast<std::size_t>(d)];
    out.labels.push_back(d);
    out.sources.push_back(sources[i]);
    out.pixels.insert(out.pixels.end(), records[i].pixels.begin(), records[i].pixels.end());
  }
  for (std::size_t c = 0; c < taken.size(); ++c) {
    if (taken[c] < per_class) {
      throw DataError(std::string(split_name) + " split has only " + std::to_string(taken[c]) +
                      " images of class '" +
                      std::string(kClassNames[static_cast<std::size_t>(spec.classes[c])]) +
                      "', " + spec.label() + " needs " + std::to_string(per_class));
    }
  }
  return out;
}

}  // namespace

Dataset build_subset(const CifarArchive& archive, const SubsetSpec& spec) {
  Dataset d;
  d.spec = spec;
  d.train = select(archive.train, archive.train_sources, spec, spec.train_per_class, "train");
  d.test = select(archive.test, archive.test_sources, spec, spec.test_per_class, "test");
  return d;
}

std::string subset_manifest(const Dataset& d) {
  std::ostringstream os;
  os << "subset " << d.spec.label() << "\n";
  os << "classes";
  for (int c : d.spec.classes) os << ' ' << kClassNames[static_cast<std::size_t>(c)];
  os << "\n";
  os << "original_labels";
  for (int c : d.spec.classes) os << ' ' << c;
  os << "\n";
  os << "train_per_class " << d.spec.train_per_class << "\n";
  os << "test_per_class " << d.spec.test_per_class << "\n";
  os << "train_size " << d.train.size() << "\n";
  os << "test_size " << d.test.size() << "\n";
  os << "selection first-k-per-class-in-file-order\n";
  os << "# split index dense_label file byte_offset\n";
  auto dump = [&os](const char* name, const Split& s) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      os << name << ' ' << i << ' ' << s.labels[i] << ' ' << s.sources[i].file << ' '
         << s.sources[i].byte_offset() << "\n";
    }
  };
  dump("train", d.train);
  dump("test", d.test);
  return os.str();
}

NormStats compute_norm_stats(const Split& split) {
  if (split.size() == 0) throw DataError("cannot compute normalisation stats of an empty split");
  NormStats stats;
  const std::size_t plane = kImageSide * kImageSide;
  const double count = static_cast<double>(split.size() * plane);
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0.0;
    double sq = 0.0;
    for (std::size_t i = 0; i < split.size(); ++i) {
      const std::uint8_t* p = split.pixels.data() + i * kImageBytes + c * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        const double v = p[k] / 255.0;
        s += v;
        sq += v * v;
      }
    }
    const double mean = s / count;
    const double var = std::max(0.0, sq / count - mean * mean);
    stats.mean[c] = static_cast<float>(mean);
    stats.std[c] = static_cast<float>(std::sqrt(var));
  }
  return stats;
}

Tensorf image_tensor(std::span<const std::uint8_t> pixels) {
  if (pixels.size() != kImageBytes) {
    throw DataError("image must have " + std::to_string(kImageBytes) + " bytes");
  }
  Tensorf t(Shape{1, 3, kImageSide, kImageSide});
  std::copy(pixels.begin(), pixels.end(), t.raw());
  return t;
}

AugmentChoice draw_augment(std::uint64_t bits) {
  const std::size_t offsets = 2 * kCropPad + 1;
  // 32-bit halves: the crop uses the high half, the flip the lowest bit.
  const std::uint64_t crop = (bits >> 32) % (offsets * offsets);
  AugmentChoice c;
  c.row = static_cast<std::size_t>(crop / offsets);
  c.col = static_cast<std::size_t>(crop % offsets);
  c.flip = (bits & 1u) != 0;
  return c;
}

Tensorf apply_augment(const Tensorf& image, const AugmentChoice& choice) {
  const Shape s = image.shape();
  if (choice.row > 2 * kCropPad || choice.col > 2 * kCropPad) {
    throw std::out_of_range("crop offset outside the padded image");
  }
  const Tensorf padded = pad2d(image, kCropPad);
  Tensorf out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t i = 0; i < s.h; ++i)
        for (std::size_t j = 0; j < s.w; ++j) {
          const std::size_t src_j = choice.flip ? s.w - 1 - j : j;
          out(n, c, i, j) = padded(n, c, i + choice.row, src_j + choice.col);
        }
  return out;
}

Tensorf augment(const Tensorf& image, Rng& rng) { return apply_augment(image, draw_augment(rng())); }

Tensorf normalize(const Tensorf& image, const NormStats& stats) {
  const Shape s = image.shape();
  if (s.c != 3) throw ShapeError("normalize: expected 3 channels, got " + to_string(s));
  for (float sd : stats.std)
    if (!(sd > 0.0f)) throw DataError("normalisation std must be positive");
  Tensorf out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < 3; ++c) {
      const float mean = stats.mean[c];
      const float inv = 1.0f / stats.std[c];
      const float* src = &image(n, c, 0, 0);
      float* dst = &out(n, c, 0, 0);
      for (std::size_t k = 0; k < s.plane(); ++k) dst[k] = (src[k] / 255.0f - mean) * inv;
    }
  return out;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(a) ^ (b * 0xd1342543de82ef95ULL + 1));
}

std::uint64_t epoch_seed(std::uint64_t seed, int epoch) {
  return mix_seed(seed, static_cast<std::uint64_t>(epoch) + 0x5eedULL);
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t count, std::size_t batch_size,
                                                    bool shuffle, std::uint64_t seed) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  if (shuffle) {
    Rng rng(seed);
    for (std::size_t i = count; i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng() % i);
      std::swap(order[i - 1], order[j]);
    }
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t first = 0; first < count; first += batch_size) {
    const std::size_t last = std::min(count, first + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(first),
                     order.begin() + static_cast<std::ptrdiff_t>(last));
  }
  return out;
}

Batch make_batch(const Split& split, std::span<const std::size_t> indices, const NormStats& stats,
                 bool augment_images, std::uint64_t seed) {
  Batch b;
  b.images = Tensorf(Shape{indices.size(), 3, kImageSide, kImageSide});
  b.labels.reserve(indices.size());
  const std::ptrdiff_t count = static_cast<std::ptrdiff_t>(indices.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t k = 0; k < count; ++k) {
    const std::size_t idx = indices[static_cast<std::size_t>(k)];
    Tensorf img = image_tensor(split.image(idx));
    if (augment_images) img = apply_augment(img, draw_augment(mix_seed(seed, idx)));
    img = normalize(img, stats);
    std::copy(img.data().begin(), img.data().end(),
              b.images.raw() + static_cast<std::size_t>(k) * kImageBytes);
  }
  for (std::size_t idx : indices) b.labels.push_back(split.labels[idx]);
  return b;
}

}  // namespace resnext
