#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pdarts/data.hpp"
#include "pdarts/eval_net.hpp"
#include "pdarts/search.hpp"

namespace pdarts {

enum class Precision { f32, f64 };

std::string_view precision_name(Precision p);
/// Throws InvalidArgument for anything but "f32" / "f64".
Precision parse_precision(std::string_view name);

struct DataConfig {
  /// "synthetic" or "cifar10".
  std::string source = "synthetic";
  SynthPreset preset = SynthPreset::easy_fit;
  std::int64_t train_size = 512;
  std::int64_t test_size = 256;
  int classes = 10;
  std::int64_t image_size = 8;
  /// Generator seed for synthetic data and the subset draw for CIFAR-10.
  std::uint64_t seed = 1;
  /// CIFAR-10 directory holding data_batch_{1..5}.bin and test_batch.bin.
  std::string dir;
};

struct RunConfig {
  static constexpr int kVersion = 1;

  std::uint64_t seed = 0;
  Precision precision = Precision::f32;
  DataConfig data;
  SearchConfig search;
  EvalConfig eval;

  /// Synthetic easy-fit 8x8 data, the L 2/3/4, C 8, B 2 search schedule and
  /// the L 8, C 16 evaluation network.
  static RunConfig desk();
  /// CIFAR-10, the L 5/11/17 schedule with B 4, batch 96, and the L 20, C 36
  /// evaluation network.
  static RunConfig cifar10();

  /// Checks every section; throws ConfigError with a dotted field path.
  void validate() const;
};

/// Parses a JSON run configuration. Keys left out keep the values of the
/// base named by "base" ("desk" when absent). Each "K=V" override sets the
/// dotted path K (array elements by index, e.g. search.stages.1.epochs) to V
/// read as JSON, or as a string when V is not valid JSON. Unknown fields,
/// wrong types and invalid values throw ConfigError naming the field.
RunConfig parse_run_config(std::string_view json_text, const std::vector<std::string>& overrides = {});

/// Full configuration as JSON, readable by parse_run_config.
std::string run_config_to_json(const RunConfig& cfg);

/// Train and test sets described by the data section.
std::pair<Dataset, Dataset> load_run_data(const DataConfig& cfg);

}  // namespace pdarts
