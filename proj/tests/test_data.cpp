#include <fstream>
#include <set>

#include "doctest.h"
#include "pdarts/data.hpp"
#include "pdarts/error.hpp"
#include "test_util.hpp"

using namespace pdarts;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) : path(fs::temp_directory_path() / ("pdarts-test-" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> cifar_records(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<unsigned char> b(static_cast<std::size_t>(n) * 3073);
  for (int r = 0; r < n; ++r) {
    b[static_cast<std::size_t>(r) * 3073] = static_cast<unsigned char>(rng.below(10));
    for (int p = 1; p < 3073; ++p) b[static_cast<std::size_t>(r) * 3073 + p] = static_cast<unsigned char>(rng.below(256));
  }
  return b;
}

// Multinomial logistic regression by full-batch gradient descent; returns
// held-out accuracy.
double linear_accuracy(const Dataset& train, const Dataset& test) {
  const auto f = static_cast<std::size_t>(train.image_numel());
  const auto k = static_cast<std::size_t>(train.num_classes);
  std::vector<double> w(k * (f + 1), 0.0);
  auto scores = [&](const Dataset& d, std::size_t i, std::vector<double>& z) {
    for (std::size_t c = 0; c < k; ++c) {
      double s = w[c * (f + 1) + f];
      for (std::size_t j = 0; j < f; ++j) s += w[c * (f + 1) + j] * d.images[i * f + j];
      z[c] = s;
    }
  };
  std::vector<double> z(k), grad(w.size());
  const auto n = static_cast<std::size_t>(train.size());
  for (int it = 0; it < 200; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      scores(train, i, z);
      const double m = *std::max_element(z.begin(), z.end());
      double sum = 0;
      for (auto& v : z) sum += (v = std::exp(v - m));
      for (std::size_t c = 0; c < k; ++c) {
        const double g = z[c] / sum - (static_cast<int>(c) == train.labels[i] ? 1.0 : 0.0);
        for (std::size_t j = 0; j < f; ++j) grad[c * (f + 1) + j] += g * train.images[i * f + j];
        grad[c * (f + 1) + f] += g;
      }
    }
    for (std::size_t q = 0; q < w.size(); ++q) w[q] -= 0.05 * grad[q] / static_cast<double>(n);
  }
  int correct = 0;
  for (std::size_t i = 0; i < static_cast<std::size_t>(test.size()); ++i) {
    scores(test, i, z);
    correct += static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin()) == test.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace

TEST_CASE("CIFAR-10 binary records") {
  TempDir dir("cifar");
  const auto bytes = cifar_records(3, 1);
  write_bytes(dir.path / "one.bin", bytes);
  const auto d = load_cifar10_file(dir.path / "one.bin");
  CHECK(d.size() == 3);
  CHECK(d.image_numel() == 3072);
  for (int r = 0; r < 3; ++r) CHECK(d.labels[static_cast<std::size_t>(r)] == bytes[static_cast<std::size_t>(r) * 3073]);
  CHECK(d.images[0] == doctest::Approx((bytes[1] / 255.0 - 0.4914) / 0.2470));
  // Pixel (0,0) of the blue plane of image 1.
  CHECK(d.images[3072 + 2048] == doctest::Approx((bytes[3073 + 1 + 2048] / 255.0 - 0.4465) / 0.2616));
  d.validate();

  SUBCASE("size not a multiple of the record length") {
    auto cut = bytes;
    cut.resize(3073 * 2 + 100);
    write_bytes(dir.path / "cut.bin", cut);
    CHECK_THROWS_WITH_AS(load_cifar10_file(dir.path / "cut.bin"), doctest::Contains("byte 6146"), FormatError);
  }
  SUBCASE("label out of range") {
    auto bad = bytes;
    bad[3073] = 10;
    write_bytes(dir.path / "bad.bin", bad);
    CHECK_THROWS_WITH_AS(load_cifar10_file(dir.path / "bad.bin"), doctest::Contains("byte 3073"), FormatError);
  }
  SUBCASE("train directory with a seeded subset") {
    for (int i = 1; i <= 5; ++i) write_bytes(dir.path / ("data_batch_" + std::to_string(i) + ".bin"), cifar_records(4, 10 + i));
    write_bytes(dir.path / "test_batch.bin", cifar_records(2, 30));
    CHECK(load_cifar10(dir.path, true).size() == 20);
    CHECK(load_cifar10(dir.path, false).size() == 2);
    const auto a = load_cifar10(dir.path, true, 7, 3);
    const auto b = load_cifar10(dir.path, true, 7, 3);
    CHECK(a.size() == 7);
    CHECK(test_util::bit_equal(a.images, b.images));
  }
}

TEST_CASE("synthetic presets") {
  for (auto preset : {SynthPreset::easy_fit, SynthPreset::texture}) {
    CAPTURE(synth_preset_name(preset));
    const auto a = synth_dataset(preset, 5, 101, 4, 8);
    const auto b = synth_dataset(preset, 5, 101, 4, 8);
    const auto c = synth_dataset(preset, 6, 101, 4, 8);
    a.validate();
    CHECK(test_util::bit_equal(a.images, b.images));
    CHECK(a.labels == b.labels);
    CHECK_FALSE(test_util::bit_equal(a.images, c.images));
    std::vector<int> counts(4, 0);
    for (int l : a.labels) ++counts[static_cast<std::size_t>(l)];
    CHECK(*std::max_element(counts.begin(), counts.end()) - *std::min_element(counts.begin(), counts.end()) <= 1);
    CHECK(a.mean.size() == 3);
    CHECK(parse_synth_preset(synth_preset_name(preset)) == preset);
  }
  CHECK_THROWS_AS(parse_synth_preset("noise"), InvalidArgument);
  CHECK_THROWS_AS(synth_dataset(SynthPreset::texture, 1, 1, 2, 8), InvalidArgument);
}

TEST_CASE("linear baseline separates the presets") {
  const auto easy = split_half(synth_dataset(SynthPreset::easy_fit, 1, 800, 10, 8), 2);
  const auto tex = split_half(synth_dataset(SynthPreset::texture, 1, 800, 2, 8), 2);
  const double easy_acc = linear_accuracy(easy.first, easy.second);
  const double tex_acc = linear_accuracy(tex.first, tex.second);
  MESSAGE("linear accuracy: easy-fit " << easy_acc << ", texture " << tex_acc);
  CHECK(easy_acc >= 0.95);
  CHECK(tex_acc <= 0.60);
}

TEST_CASE("synthetic train and test share classes") {
  const auto [train, test] = synth_train_test(SynthPreset::easy_fit, 4, 40, 12, 4, 8);
  const auto all = synth_dataset(SynthPreset::easy_fit, 4, 52, 4, 8);
  CHECK(train.size() == 40);
  CHECK(test.size() == 12);
  CHECK(test_util::bit_equal(std::span<const float>(test.images), std::span<const float>(all.images).subspan(40 * 192)));
  CHECK(std::vector<int>(all.labels.begin() + 40, all.labels.end()) == test.labels);
}

TEST_CASE("split_half partitions the set") {
  for (std::int64_t n : {10, 11}) {
    Dataset d;
    d.name = "ids";
    d.channels = d.height = d.width = 1;
    d.num_classes = 2;
    for (std::int64_t i = 0; i < n; ++i) {
      d.images.push_back(static_cast<float>(i));
      d.labels.push_back(static_cast<int>(i % 2));
    }
    const auto [a, b] = split_half(d, 3);
    CHECK(a.size() == n / 2);
    CHECK(b.size() == n / 2);
    std::set<float> ids(a.images.begin(), a.images.end());
    for (float v : b.images) CHECK(ids.insert(v).second);
    CHECK(static_cast<std::int64_t>(ids.size()) == 2 * (n / 2));
    const auto [a2, b2] = split_half(d, 3);
    CHECK(a2.images == a.images);
    CHECK(b2.images == b.images);
  }
}

TEST_CASE("batches") {
  const auto batches = shuffled_batches(10, 4, 9);
  REQUIRE(batches.size() == 3);
  CHECK(batches[2].size() == 2);
  std::set<std::int64_t> all;
  for (const auto& b : batches) all.insert(b.begin(), b.end());
  CHECK(all.size() == 10);
  CHECK(shuffled_batches(10, 4, 9) == batches);
  CHECK(shuffled_batches(9, 4, 9).size() == 2);
  CHECK(shuffled_batches(1, 4, 9).size() == 1);

  const auto d = synth_dataset(SynthPreset::easy_fit, 1, 6, 3, 8);
  const auto batch = make_batch<double>(d, {4, 1});
  CHECK(batch.images.shape() == Shape{2, 3, 8, 8});
  CHECK(batch.labels == std::vector<int>{d.labels[4], d.labels[1]});
  CHECK(batch.images.data()[0] == static_cast<double>(d.images[4 * 192]));
}
