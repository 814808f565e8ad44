#include "pdarts/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "pdarts/error.hpp"

namespace pdarts {

void Dataset::validate() const {
  if (channels <= 0 || height <= 0 || width <= 0) throw InvalidArgument(name + ": empty image dimensions");
  if (static_cast<std::int64_t>(images.size()) != size() * image_numel()) {
    throw InvalidArgument(name + ": " + std::to_string(images.size()) + " pixels for " + std::to_string(size()) +
                          " images of " + std::to_string(image_numel()));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw InvalidArgument(name + ": label " + std::to_string(labels[i]) + " of sample " + std::to_string(i) +
                            " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

Dataset Dataset::subset(const std::vector<std::int64_t>& indices) const {
  Dataset out = *this;
  out.images.clear();
  out.labels.clear();
  out.images.reserve(indices.size() * static_cast<std::size_t>(image_numel()));
  for (auto i : indices) {
    if (i < 0 || i >= size()) throw InvalidArgument(name + ": sample index " + std::to_string(i) + " out of range");
    const auto first = images.begin() + i * image_numel();
    out.images.insert(out.images.end(), first, first + image_numel());
    out.labels.push_back(labels[static_cast<std::size_t>(i)]);
  }
  return out;
}

Dataset load_cifar10_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto size = static_cast<std::int64_t>(bytes.size());
  if (size == 0 || size % kCifarRecordBytes != 0) {
    throw FormatError(path.string() + ": size " + std::to_string(size) + " is not a multiple of " +
                      std::to_string(kCifarRecordBytes) + " (trailing record starts at byte " +
                      std::to_string(size - size % kCifarRecordBytes) + ")");
  }
  Dataset d;
  d.name = "cifar10";
  d.channels = 3;
  d.height = d.width = 32;
  d.num_classes = 10;
  d.mean = kCifarMean;
  d.stddev = kCifarStd;
  const std::int64_t n = size / kCifarRecordBytes;
  d.labels.resize(static_cast<std::size_t>(n));
  d.images.resize(static_cast<std::size_t>(n * 3072));
  for (std::int64_t r = 0; r < n; ++r) {
    const std::int64_t offset = r * kCifarRecordBytes;
    const int label = bytes[static_cast<std::size_t>(offset)];
    if (label > 9) {
      throw FormatError(path.string() + ": label " + std::to_string(label) + " at byte " + std::to_string(offset));
    }
    d.labels[static_cast<std::size_t>(r)] = label;
    for (std::int64_t p = 0; p < 3072; ++p) {
      const auto c = static_cast<std::size_t>(p / 1024);
      const double x = bytes[static_cast<std::size_t>(offset + 1 + p)] / 255.0;
      d.images[static_cast<std::size_t>(r * 3072 + p)] = static_cast<float>((x - d.mean[c]) / d.stddev[c]);
    }
  }
  return d;
}

Dataset load_cifar10(const std::filesystem::path& dir, bool train, std::optional<std::int64_t> limit,
                     std::uint64_t seed) {
  std::vector<std::string> files;
  if (train) {
    for (int i = 1; i <= 5; ++i) files.push_back("data_batch_" + std::to_string(i) + ".bin");
  } else {
    files.push_back("test_batch.bin");
  }
  Dataset all;
  for (const auto& f : files) {
    Dataset part = load_cifar10_file(dir / f);
    if (all.labels.empty()) {
      all = std::move(part);
    } else {
      all.images.insert(all.images.end(), part.images.begin(), part.images.end());
      all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
    }
  }
  if (!limit || *limit >= all.size()) return all;
  if (*limit < 1) throw InvalidArgument("subset size must be positive, got " + std::to_string(*limit));
  std::vector<std::int64_t> idx(static_cast<std::size_t>(all.size()));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, "cifar-subset"));
  rng.shuffle(std::span<std::int64_t>(idx));
  idx.resize(static_cast<std::size_t>(*limit));
  std::sort(idx.begin(), idx.end());
  return all.subset(idx);
}

std::string_view synth_preset_name(SynthPreset p) { return p == SynthPreset::easy_fit ? "easy-fit" : "texture"; }

SynthPreset parse_synth_preset(std::string_view name) {
  if (name == "easy-fit") return SynthPreset::easy_fit;
  if (name == "texture") return SynthPreset::texture;
  throw InvalidArgument("unknown synthetic preset '" + std::string(name) + "' (expected easy-fit or texture)");
}

namespace {

double blob(double x, double y, double cx, double cy, double sigma) {
  return std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (2 * sigma * sigma));
}

void standardize(Dataset& d) {
  const std::int64_t plane = d.height * d.width;
  d.mean.assign(static_cast<std::size_t>(d.channels), 0.0);
  d.stddev.assign(static_cast<std::size_t>(d.channels), 0.0);
  const double count = static_cast<double>(d.size() * plane);
  for (std::int64_t c = 0; c < d.channels; ++c) {
    double s = 0, s2 = 0;
    for (std::int64_t i = 0; i < d.size(); ++i) {
      const float* p = d.images.data() + i * d.image_numel() + c * plane;
      for (std::int64_t k = 0; k < plane; ++k) {
        s += p[k];
        s2 += static_cast<double>(p[k]) * p[k];
      }
    }
    const double mean = s / count;
    const double sd = std::sqrt(std::max(s2 / count - mean * mean, 1e-12));
    d.mean[static_cast<std::size_t>(c)] = mean;
    d.stddev[static_cast<std::size_t>(c)] = sd;
    for (std::int64_t i = 0; i < d.size(); ++i) {
      float* p = d.images.data() + i * d.image_numel() + c * plane;
      for (std::int64_t k = 0; k < plane; ++k) p[k] = static_cast<float>((p[k] - mean) / sd);
    }
  }
}

}  // namespace

Dataset synth_dataset(SynthPreset preset, std::uint64_t seed, std::int64_t n, int classes, std::int64_t size) {
  if (classes < 2) throw InvalidArgument("need at least 2 classes, got " + std::to_string(classes));
  if (n < classes) throw InvalidArgument("need at least one sample per class: n=" + std::to_string(n));
  if (size < 4) throw InvalidArgument("image size must be at least 4, got " + std::to_string(size));
  Dataset d;
  d.name = std::string("synth-") + std::string(synth_preset_name(preset));
  d.channels = 3;
  d.height = d.width = size;
  d.num_classes = classes;
  d.labels.resize(static_cast<std::size_t>(n));
  d.images.resize(static_cast<std::size_t>(n * d.image_numel()));
  const double s = static_cast<double>(size);

  struct Template {
    double cx, cy;
    double color[3];
  };
  std::vector<Template> templates;
  Rng class_rng(derive_seed(seed, "synth-classes"));
  for (int k = 0; k < classes; ++k) {
    Template t{class_rng.uniform(0.2, 0.8) * (s - 1), class_rng.uniform(0.2, 0.8) * (s - 1), {}};
    for (double& c : t.color) c = class_rng.uniform(-1.0, 1.0);
    templates.push_back(t);
  }

  Rng rng(derive_seed(seed, "synth-samples"));
  for (std::int64_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % classes);
    d.labels[static_cast<std::size_t>(i)] = label;
    float* img = d.images.data() + i * d.image_numel();
    if (preset == SynthPreset::easy_fit) {
      const auto& t = templates[static_cast<std::size_t>(label)];
      const double cx = t.cx + rng.normal(0.0, 0.5), cy = t.cy + rng.normal(0.0, 0.5);
      for (std::int64_t c = 0; c < 3; ++c) {
        for (std::int64_t y = 0; y < size; ++y) {
          for (std::int64_t x = 0; x < size; ++x) {
            const double v = 0.5 + 0.4 * t.color[c] * blob(static_cast<double>(x), static_cast<double>(y), cx, cy, s / 4);
            img[(c * size + y) * size + x] = static_cast<float>(v + rng.normal(0.0, 0.1));
          }
        }
      }
    } else {
      const double theta = std::numbers::pi * label / classes + rng.normal(0.0, 0.08);
      const double freq = 2 * std::numbers::pi / rng.uniform(3.0, 4.0);
      const double phase = rng.uniform(0.0, 2 * std::numbers::pi);
      const double cx = rng.uniform(0.25, 0.75) * (s - 1), cy = rng.uniform(0.25, 0.75) * (s - 1);
      const double gain = rng.uniform(0.6, 1.0);
      double tint[3];
      for (double& c : tint) c = rng.uniform(0.5, 1.0);
      for (std::int64_t c = 0; c < 3; ++c) {
        for (std::int64_t y = 0; y < size; ++y) {
          for (std::int64_t x = 0; x < size; ++x) {
            const double u = static_cast<double>(x) * std::cos(theta) + static_cast<double>(y) * std::sin(theta);
            const double env = blob(static_cast<double>(x), static_cast<double>(y), cx, cy, s / 2);
            const double v = 0.5 + 0.4 * gain * tint[c] * env * std::sin(freq * u + phase);
            img[(c * size + y) * size + x] = static_cast<float>(v + rng.normal(0.0, 0.1));
          }
        }
      }
    }
  }
  standardize(d);
  return d;
}

std::pair<Dataset, Dataset> synth_train_test(SynthPreset preset, std::uint64_t seed, std::int64_t n_train,
                                             std::int64_t n_test, int classes, std::int64_t size) {
  if (n_train < classes || n_test < 1) throw InvalidArgument("train needs one sample per class and test at least one");
  const auto all = synth_dataset(preset, seed, n_train + n_test, classes, size);
  std::vector<std::int64_t> a(static_cast<std::size_t>(n_train)), b(static_cast<std::size_t>(n_test));
  std::iota(a.begin(), a.end(), 0);
  std::iota(b.begin(), b.end(), n_train);
  return {all.subset(a), all.subset(b)};
}

std::pair<Dataset, Dataset> split_half(const Dataset& data, std::uint64_t seed) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(data.size()));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, "split-half"));
  rng.shuffle(std::span<std::int64_t>(idx));
  const auto half = idx.size() / 2;
  std::vector<std::int64_t> a(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(half));
  std::vector<std::int64_t> b(idx.begin() + static_cast<std::ptrdiff_t>(half),
                              idx.begin() + static_cast<std::ptrdiff_t>(2 * half));
  return {data.subset(a), data.subset(b)};
}

std::vector<std::vector<std::int64_t>> shuffled_batches(std::int64_t n, std::int64_t batch_size, std::uint64_t seed) {
  if (batch_size < 1) throw InvalidArgument("batch size must be positive, got " + std::to_string(batch_size));
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span<std::int64_t>(idx));
  std::vector<std::vector<std::int64_t>> out;
  for (std::int64_t start = 0; start < n; start += batch_size) {
    const std::int64_t end = std::min(n, start + batch_size);
    if (end - start < 2 && !out.empty()) break;
    out.emplace_back(idx.begin() + start, idx.begin() + end);
  }
  return out;
}

template <typename T>
Batch<T> make_batch(const Dataset& data, const std::vector<std::int64_t>& indices) {
  const auto n = static_cast<std::int64_t>(indices.size());
  std::vector<T> pixels(static_cast<std::size_t>(n * data.image_numel()));
  std::vector<int> labels;
  labels.reserve(indices.size());
  for (std::int64_t b = 0; b < n; ++b) {
    const auto i = indices[static_cast<std::size_t>(b)];
    if (i < 0 || i >= data.size()) throw InvalidArgument("sample index " + std::to_string(i) + " out of range");
    std::copy_n(data.images.begin() + i * data.image_numel(), data.image_numel(),
                pixels.begin() + b * data.image_numel());
    labels.push_back(data.labels[static_cast<std::size_t>(i)]);
  }
  return {Tensor<T>::from_data({n, data.channels, data.height, data.width}, std::move(pixels)), std::move(labels)};
}

template Batch<float> make_batch<float>(const Dataset&, const std::vector<std::int64_t>&);
template Batch<double> make_batch<double>(const Dataset&, const std::vector<std::int64_t>&);

}  // namespace pdarts
