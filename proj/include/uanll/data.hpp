#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "uanll/rng.hpp"

namespace uanll {

/// Channel-major image (channels x height x width) with a class label.
struct LabeledImage {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;
  std::size_t label = 0;

  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return pixels[(c * height + y) * width + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return pixels[(c * height + y) * width + x];
  }
  bool operator==(const LabeledImage&) const = default;
};

struct Dataset {
  std::vector<LabeledImage> images;
  std::size_t num_classes = 0;
  /// Ground-truth labels, kept when label noise has been injected.
  std::optional<std::vector<std::size_t>> clean_labels;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }
  std::vector<std::size_t> labels() const;
  /// Clean labels when present, else the observed labels.
  std::vector<std::size_t> true_labels() const;
  /// Throws ConfigError when shapes, labels, or clean labels are inconsistent.
  void validate() const;
  bool operator==(const Dataset&) const = default;
};

enum class FlipDirection {
  Both,     // a -> b and b -> a, each with probability rate
  Forward,  // only the first class of each pair is corrupted
};

struct NoiseSpec {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  double rate = 0.0;
  std::uint64_t seed = 0;
  FlipDirection direction = FlipDirection::Both;
};

/// Number of distinct synthetic templates available.
inline constexpr std::size_t kSyntheticTemplates = 10;

/// Single-channel geometric shape images. Classes 2k and 2k + 1 are
/// perturbed variants of one another, so the pairs (0,1), (2,3), ... are
/// the natural targets for pair-flip noise. The first instance of every
/// class is the centered canonical template; the rest are slightly shifted
/// and scaled. Gaussian pixel noise is added, then clipped to [0, 1].
Dataset gen_synthetic_shapes(std::size_t num_classes, std::size_t per_class, std::size_t side,
                             double noise_std, std::uint64_t seed);

/// Adjacent-class pairs (0,1), (2,3), ... for `num_classes` classes.
std::vector<std::pair<std::size_t, std::size_t>> adjacent_pairs(std::size_t num_classes);

Dataset inject_asymmetric_noise(const Dataset& ds, const NoiseSpec& spec);

/// Square crop whose area fraction is uniform in [min_scale, 1], placed
/// uniformly, resized back to the input size by bilinear interpolation.
LabeledImage random_resized_crop(const LabeledImage& img, double min_scale, Rng& rng);

struct ChannelStats {
  std::vector<double> means;
  std::vector<double> stds;
};

ChannelStats channel_stats(const Dataset& ds);
Dataset normalize(const Dataset& ds, const ChannelStats& stats);
Dataset denormalize(const Dataset& ds, const ChannelStats& stats);

struct SplitSizes {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

struct DatasetSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Disjoint seeded shuffle split. The test split carries clean labels only.
DatasetSplits split_dataset(const Dataset& ds, SplitSizes sizes, std::uint64_t seed);

inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr std::size_t kCifarSide = 32;

/// CIFAR-10 binary batch: records of one label byte and 3072 channel-major
/// pixel bytes. Pixels are scaled to [0, 1].
Dataset parse_cifar10_batch(std::span<const std::uint8_t> bytes);
/// Inverse of parse_cifar10_batch for 3 x 32 x 32 images; pixels are
/// rounded to the nearest byte.
std::vector<std::uint8_t> write_cifar10_batch(const Dataset& ds);
Dataset load_cifar10_files(const std::vector<std::string>& paths);

// "UDAT0001" container: u32 num_classes, u32 count, u32 channels, u32 height,
// u32 width, u32 has_clean, then f64 pixels of every image, u32 labels and,
// when has_clean is 1, u32 clean labels. All little-endian.
std::vector<std::uint8_t> encode_dataset(const Dataset& ds);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace uanll
