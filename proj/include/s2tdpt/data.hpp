#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "s2tdpt/tensor.hpp"

namespace s2tdpt {

// Labelled images stored as raw bytes, channel-major per record. Pixels are
// scaled to [0, 1] when batches are built.
struct Dataset {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t num_classes = 10;
  std::vector<std::uint8_t> labels;
  std::vector<std::uint8_t> pixels;

  std::size_t size() const { return labels.size(); }
  std::size_t record_pixels() const { return channels * height * width; }

  std::span<const std::uint8_t> image(std::size_t i) const {
    return std::span<const std::uint8_t>(pixels).subspan(i * record_pixels(), record_pixels());
  }

  void append(std::uint8_t label, std::span<const std::uint8_t> px) {
    require(px.size() == record_pixels(), ErrorCategory::contract, "dataset: record pixel count mismatch");
    labels.push_back(label);
    pixels.insert(pixels.end(), px.begin(), px.end());
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline constexpr std::size_t kCifarPixels = 3 * 32 * 32;
inline constexpr std::size_t kCifar10Record = 1 + kCifarPixels;
inline constexpr std::size_t kCifar100Record = 2 + kCifarPixels;

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCategory::io, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// CIFAR binary batch. num_classes == 100 selects the coarse+fine layout
// (fine label used); anything else selects the single-label CIFAR-10 layout.
inline Dataset load_cifar_binary(const std::filesystem::path& path, std::size_t num_classes = 10,
                                 std::vector<std::string>* warnings = nullptr) {
  const auto bytes = read_file_bytes(path);
  const bool hundred = num_classes == 100;
  const std::size_t record = hundred ? kCifar100Record : kCifar10Record;
  Dataset ds;
  ds.num_classes = num_classes;
  if (bytes.empty()) {
    if (warnings) warnings->push_back(path.string() + ": empty file, no records loaded");
    return ds;
  }
  if (bytes.size() % record != 0)
    fail(ErrorCategory::data, path.string() + ": truncated record at byte offset " +
                                  std::to_string(bytes.size() / record * record) + " (file size " +
                                  std::to_string(bytes.size()) + " is not a multiple of " + std::to_string(record) + ")");
  const std::size_t n = bytes.size() / record;
  ds.labels.reserve(n);
  ds.pixels.reserve(n * kCifarPixels);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t off = i * record;
    const std::size_t label_off = hundred ? off + 1 : off;
    const std::uint8_t label = bytes[label_off];
    if (label >= num_classes)
      fail(ErrorCategory::data, path.string() + ": label " + std::to_string(label) + " at byte offset " +
                                    std::to_string(label_off) + " is not below " + std::to_string(num_classes));
    ds.append(label, std::span<const std::uint8_t>(bytes).subspan(off + (hundred ? 2 : 1), kCifarPixels));
  }
  return ds;
}

// Generic record file: 1 label byte + C*H*W pixel bytes per record.
inline void write_records(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCategory::io, "cannot write " + path.string());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out.put(static_cast<char>(ds.labels[i]));
    const auto img = ds.image(i);
    out.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
  }
  require(static_cast<bool>(out), ErrorCategory::io, "write failed: " + path.string());
}

inline Dataset read_records(const std::filesystem::path& path, std::size_t channels, std::size_t height,
                            std::size_t width, std::size_t num_classes) {
  const auto bytes = read_file_bytes(path);
  Dataset ds{channels, height, width, num_classes, {}, {}};
  const std::size_t record = 1 + ds.record_pixels();
  if (bytes.size() % record != 0)
    fail(ErrorCategory::data, path.string() + ": truncated record at byte offset " +
                                  std::to_string(bytes.size() / record * record));
  for (std::size_t off = 0; off < bytes.size(); off += record) {
    if (bytes[off] >= num_classes)
      fail(ErrorCategory::data, path.string() + ": label " + std::to_string(bytes[off]) + " at byte offset " +
                                    std::to_string(off) + " is not below " + std::to_string(num_classes));
    ds.append(bytes[off], std::span<const std::uint8_t>(bytes).subspan(off + 1, ds.record_pixels()));
  }
  return ds;
}

// Four 16x16x3 shape classes: 0 filled square, 1 hollow square, 2 cross,
// 3 diagonal stripe. Position, size and colour vary; every pixel gets
// uniform noise of amplitude 0.1. Deterministic for a given seed.
inline Dataset gen_synthetic(std::uint64_t seed, std::size_t n_per_class) {
  constexpr std::size_t kSide = 16;
  Dataset ds{3, kSide, kSide, 4, {}, {}};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> jitter(-2, 2), extent(4, 6);
  std::uniform_real_distribution<double> colour(0.6, 1.0), noise(-0.1, 0.1);
  std::vector<std::uint8_t> px(ds.record_pixels());
  for (std::size_t i = 0; i < 4 * n_per_class; ++i) {
    const int cls = static_cast<int>(i % 4);
    const int cx = 8 + jitter(rng), cy = 8 + jitter(rng), r = extent(rng);
    const double rgb[3] = {colour(rng), colour(rng), colour(rng)};
    for (int y = 0; y < static_cast<int>(kSide); ++y)
      for (int x = 0; x < static_cast<int>(kSide); ++x) {
        const int dx = x - cx, dy = y - cy;
        const bool inside = std::abs(dx) <= r && std::abs(dy) <= r;
        bool on = false;
        switch (cls) {
          case 0: on = inside; break;
          case 1: on = inside && std::max(std::abs(dx), std::abs(dy)) >= r - 1; break;
          case 2: on = inside && (std::abs(dx) <= 1 || std::abs(dy) <= 1); break;
          default: on = inside && std::abs(dx - dy) <= 1; break;
        }
        for (std::size_t c = 0; c < 3; ++c) {
          const double v = std::clamp((on ? rgb[c] : 0.0) + noise(rng), 0.0, 1.0);
          px[(c * kSide + static_cast<std::size_t>(y)) * kSide + static_cast<std::size_t>(x)] =
              static_cast<std::uint8_t>(std::lround(255.0 * v));
        }
      }
    ds.append(static_cast<std::uint8_t>(cls), px);
  }
  return ds;
}

// Dataset directory written by gen-data: meta.cfg + train.bin + test.bin.
inline void write_dataset_dir(const std::filesystem::path& dir, const Dataset& train, const Dataset& test,
                              std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  std::ofstream meta(dir / "meta.cfg", std::ios::trunc);
  require(static_cast<bool>(meta), ErrorCategory::io, "cannot write " + (dir / "meta.cfg").string());
  meta << "# seed=" << seed << "\n"
       << "channels = " << train.channels << "\nheight = " << train.height << "\nwidth = " << train.width
       << "\nnum_classes = " << train.num_classes << "\n";
  write_records(dir / "train.bin", train);
  write_records(dir / "test.bin", test);
}

enum class Split { train, test };

// Resolves a data path: a meta.cfg record directory, a CIFAR-10 batch
// directory (data_batch_{1..5}.bin / test_batch.bin), a CIFAR-100 directory
// (train.bin / test.bin without meta.cfg), or a single CIFAR batch file.
inline Dataset load_split(const std::filesystem::path& path, Split split, std::size_t num_classes,
                          std::vector<std::string>* warnings = nullptr) {
  namespace fs = std::filesystem;
  require(fs::exists(path), ErrorCategory::config, "data path does not exist: " + path.string());
  if (fs::is_regular_file(path)) return load_cifar_binary(path, num_classes, warnings);
  if (fs::exists(path / "meta.cfg")) {
    std::ifstream meta(path / "meta.cfg");
    std::size_t c = 3, h = 32, w = 32, k = 10;
    std::string line;
    while (std::getline(meta, line)) {
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(0, eq);
      key.erase(std::remove(key.begin(), key.end(), ' '), key.end());
      const std::size_t v = std::stoul(line.substr(eq + 1));
      if (key == "channels") c = v;
      else if (key == "height") h = v;
      else if (key == "width") w = v;
      else if (key == "num_classes") k = v;
    }
    return read_records(path / (split == Split::train ? "train.bin" : "test.bin"), c, h, w, k);
  }
  if (fs::exists(path / "data_batch_1.bin") || fs::exists(path / "test_batch.bin")) {
    Dataset all;
    all.num_classes = num_classes;
    std::vector<fs::path> files;
    if (split == Split::train)
      for (int i = 1; i <= 5; ++i) files.push_back(path / ("data_batch_" + std::to_string(i) + ".bin"));
    else
      files.push_back(path / "test_batch.bin");
    for (const auto& f : files) {
      if (!fs::exists(f)) continue;
      Dataset part = load_cifar_binary(f, num_classes, warnings);
      all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
      all.pixels.insert(all.pixels.end(), part.pixels.begin(), part.pixels.end());
    }
    return all;
  }
  return load_cifar_binary(path / (split == Split::train ? "train.bin" : "test.bin"), num_classes, warnings);
}

template <class T>
struct Batch {
  Tensor<T> images;  // [B, C, H, W], values in [0, 1]
  std::vector<int> labels;
};

struct AugmentOptions {
  bool hflip = false;
  bool random_crop = false;  // zero-pad by 2 and crop back
};

template <class T>
Batch<T> make_batch(const Dataset& ds, std::span<const std::size_t> indices, const AugmentOptions& aug = {},
                    std::uint64_t aug_seed = 0) {
  const std::size_t C = ds.channels, H = ds.height, W = ds.width;
  Batch<T> b{Tensor<T>({indices.size(), C, H, W}), {}};
  b.labels.reserve(indices.size());
  std::mt19937_64 rng(aug_seed);
  std::uniform_int_distribution<int> coin(0, 1), shift(-2, 2);
  for (std::size_t n = 0; n < indices.size(); ++n) {
    require(indices[n] < ds.size(), ErrorCategory::contract, "make_batch: index out of range");
    const auto img = ds.image(indices[n]);
    b.labels.push_back(ds.labels[indices[n]]);
    const bool flip = aug.hflip && coin(rng);
    const int sx = aug.random_crop ? shift(rng) : 0, sy = aug.random_crop ? shift(rng) : 0;
    T* dst = b.images.raw() + n * C * H * W;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const long srcx0 = flip ? static_cast<long>(W - 1 - x) : static_cast<long>(x);
          const long sy2 = static_cast<long>(y) + sy, sx2 = srcx0 + sx;
          T v{0};
          if (sy2 >= 0 && sx2 >= 0 && sy2 < static_cast<long>(H) && sx2 < static_cast<long>(W))
            v = static_cast<T>(img[(c * H + static_cast<std::size_t>(sy2)) * W + static_cast<std::size_t>(sx2)]) /
                T{255};
          dst[(c * H + y) * W + x] = v;
        }
  }
  return b;
}

}  // namespace s2tdpt
