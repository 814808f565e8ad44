#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pdarts/rng.hpp"
#include "pdarts/tensor.hpp"

namespace pdarts {

/// Images stored NCHW as channel-standardized floats.
struct Dataset {
  std::string name;
  std::int64_t channels = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  int num_classes = 0;
  std::vector<float> images;
  std::vector<int> labels;
  /// Per-channel constants applied as (x - mean) / std.
  std::vector<double> mean;
  std::vector<double> stddev;

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
  std::int64_t image_numel() const { return channels * height * width; }
  /// Throws InvalidArgument if sizes or labels are inconsistent.
  void validate() const;
  /// The samples at `indices`, in that order.
  Dataset subset(const std::vector<std::int64_t>& indices) const;
};

inline constexpr std::int64_t kCifarRecordBytes = 3073;

/// CIFAR-10 channel means and standard deviations of the training set.
inline const std::vector<double> kCifarMean{0.4914, 0.4822, 0.4465};
inline const std::vector<double> kCifarStd{0.2470, 0.2435, 0.2616};

/// Parses one binary batch file of 3073-byte records (label, then R, G, B
/// planes of 32x32 row-major bytes). Pixels are scaled by 1/255 and
/// standardized with the CIFAR-10 constants. Throws FormatError with a
/// byte offset on a bad size or label.
Dataset load_cifar10_file(const std::filesystem::path& path);

/// Loads data_batch_1..5.bin (train) or test_batch.bin from `dir`. When
/// `limit` is set, keeps a seeded random subset of that many records.
Dataset load_cifar10(const std::filesystem::path& dir, bool train, std::optional<std::int64_t> limit = std::nullopt,
                     std::uint64_t seed = 0);

enum class SynthPreset {
  /// Class-conditional Gaussian blobs with low noise: linearly separable.
  easy_fit,
  /// Oriented gratings with random phase inside a Gaussian-blob envelope;
  /// every class has the same pixel-wise mean, so a linear classifier is
  /// near chance and spatial filtering is required.
  texture,
};

std::string_view synth_preset_name(SynthPreset p);
/// Throws InvalidArgument for unknown names.
SynthPreset parse_synth_preset(std::string_view name);

/// n samples, labels i % classes, 3 channels, size x size. Standardized with
/// the generated set's own per-channel statistics.
Dataset synth_dataset(SynthPreset preset, std::uint64_t seed, std::int64_t n, int classes, std::int64_t size);

/// Train and test sets drawn from one generator call, so both share the
/// class templates: the first n_train samples, then the next n_test.
std::pair<Dataset, Dataset> synth_train_test(SynthPreset preset, std::uint64_t seed, std::int64_t n_train,
                                             std::int64_t n_test, int classes, std::int64_t size);

/// Random disjoint halves of floor(N/2) samples each; with odd N one sample
/// is left out. The permutation depends only on `seed`.
std::pair<Dataset, Dataset> split_half(const Dataset& data, std::uint64_t seed);

/// Consecutive index batches over a permutation of [0, n) drawn from `seed`.
/// The last batch is kept when it has at least two samples.
std::vector<std::vector<std::int64_t>> shuffled_batches(std::int64_t n, std::int64_t batch_size, std::uint64_t seed);

template <typename T>
struct Batch {
  Tensor<T> images;
  std::vector<int> labels;
};

template <typename T>
Batch<T> make_batch(const Dataset& data, const std::vector<std::int64_t>& indices);

}  // namespace pdarts
