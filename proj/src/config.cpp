#include "pdarts/config.hpp"

#include "json.hpp"

namespace pdarts {

using nlohmann::json;

std::string_view precision_name(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(std::string_view name) {
  if (name == "f32") return Precision::f32;
  if (name == "f64") return Precision::f64;
  throw InvalidArgument("precision must be f32 or f64, got '" + std::string(name) + "'");
}

RunConfig RunConfig::desk() {
  RunConfig c;
  // CIFAR-10 epoch counts; the alpha rate keeps that profile's lr x steps per
  // stage (6e-4 x 260 batches) at 8 batches per epoch.
  c.search.schedule = StageSchedule::desk(25, 10);
  c.search.alpha_optimizer.lr.lr_max = 0.02;
  c.search.nodes = 2;
  c.search.batch_size = 32;
  c.eval = EvalConfig::desk();
  return c;
}

RunConfig RunConfig::cifar10() {
  RunConfig c;
  c.data.source = "cifar10";
  c.data.train_size = 50000;
  c.data.test_size = 10000;
  c.data.image_size = 32;
  c.data.dir = "data/cifar-10-batches-bin";
  c.search = SearchConfig{};
  c.eval = EvalConfig::cifar10();
  return c;
}

namespace {

void with_prefix(const std::string& prefix, const auto& check) {
  try {
    check();
  } catch (const ConfigError& e) {
    const std::string what = std::string(e.what()).substr(e.field().size() + 2);
    throw ConfigError(prefix + e.field(), what);
  }
}

json optimizer_json(const OptimizerConfig& o) {
  if (o.kind == OptimizerKind::adam) {
    return {{"lr", o.lr.lr_max}, {"beta1", o.beta1}, {"beta2", o.beta2}, {"weight_decay", o.weight_decay}};
  }
  return {{"lr_max", o.lr.lr_max},
          {"lr_min", o.lr.lr_min},
          {"momentum", o.momentum},
          {"weight_decay", o.weight_decay},
          {"grad_clip", o.grad_clip}};
}

json optional_int(const std::optional<int>& v) { return v ? json(*v) : json(nullptr); }

json to_json(const RunConfig& c) {
  json stages = json::array();
  for (const auto& s : c.search.schedule.stages) {
    stages.push_back({{"layers", s.layers},
                      {"candidates", s.candidates},
                      {"channels", s.channels},
                      {"dropout", s.dropout},
                      {"epochs", s.epochs},
                      {"warmup_epochs", s.warmup_epochs}});
  }
  const auto& e = c.eval;
  return {
      {"version", RunConfig::kVersion},
      {"seed", c.seed},
      {"precision", std::string(precision_name(c.precision))},
      {"data",
       {{"source", c.data.source},
        {"preset", std::string(synth_preset_name(c.data.preset))},
        {"train_size", c.data.train_size},
        {"test_size", c.data.test_size},
        {"classes", c.data.classes},
        {"image_size", c.data.image_size},
        {"seed", c.data.seed},
        {"dir", c.data.dir}}},
      {"search",
       {{"nodes", c.search.nodes},
        {"batch_size", c.search.batch_size},
        {"stages", stages},
        {"weight_optimizer", optimizer_json(c.search.weight_optimizer)},
        {"alpha_optimizer", optimizer_json(c.search.alpha_optimizer)},
        {"dropout_floor_fraction", c.search.dropout_floor_fraction},
        {"alpha_init_scale", c.search.alpha_init_scale},
        {"skip_limits",
         {{"normal", optional_int(c.search.skip_limits.normal)}, {"reduce", optional_int(c.search.skip_limits.reduce)}}}}},
      {"eval",
       {{"layers", e.layers},
        {"channels", e.channels},
        {"epochs", e.epochs},
        {"batch_size", e.batch_size},
        {"cutout_length", e.cutout_length},
        {"drop_path_prob", e.drop_path_prob},
        {"auxiliary_weight", e.auxiliary_weight},
        {"auxiliary_channels", e.auxiliary_channels},
        {"affine", e.affine},
        {"optimizer", optimizer_json(e.optimizer)}}},
  };
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Overlays `patch` on `base`; only keys already present in `base` are accepted.
// Arrays of objects are replaced, with element i merged onto base element i
// (or the last base element when the patch is longer).
void merge(json& base, const json& patch, const std::string& path) {
  if (base.is_object()) {
    if (!patch.is_object()) throw ConfigError(path, "expected an object");
    for (const auto& [key, value] : patch.items()) {
      if (!base.contains(key)) throw ConfigError(join(path, key), "unknown field");
      merge(base[key], value, join(path, key));
    }
    return;
  }
  if (base.is_array() && !base.empty() && base.front().is_object()) {
    if (!patch.is_array()) throw ConfigError(path, "expected an array");
    json out = json::array();
    for (std::size_t i = 0; i < patch.size(); ++i) {
      json element = base[std::min(i, base.size() - 1)];
      merge(element, patch[i], path + "[" + std::to_string(i) + "]");
      out.push_back(std::move(element));
    }
    base = std::move(out);
    return;
  }
  base = patch;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "override must have the form key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (node->is_object()) {
      if (!node->contains(part)) throw ConfigError(key, "unknown field");
      node = &(*node)[part];
    } else if (node->is_array()) {
      std::size_t i = 0;
      try {
        std::size_t used = 0;
        i = std::stoul(part, &used);
        if (used != part.size()) throw std::invalid_argument(part);
      } catch (const std::exception&) {
        throw ConfigError(key, "'" + part + "' is not an array index");
      }
      if (i >= node->size()) throw ConfigError(key, "index " + part + " is out of range");
      node = &(*node)[i];
    } else {
      throw ConfigError(key, "'" + part + "' does not name a nested field");
    }
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = std::move(value);
}

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {}

  std::string at(const char* key) const { return join(path_, key); }
  const json& raw(const char* key) const { return j_.at(key); }

  std::int64_t integer(const char* key) const {
    const auto& v = j_.at(key);
    if (!v.is_number_integer()) throw ConfigError(at(key), "expected an integer");
    return v.get<std::int64_t>();
  }
  std::uint64_t unsigned_integer(const char* key) const {
    const auto& v = j_.at(key);
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      throw ConfigError(at(key), "expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }
  int small_integer(const char* key) const {
    const auto v = integer(key);
    if (v < -1000000000 || v > 1000000000) throw ConfigError(at(key), "out of range");
    return static_cast<int>(v);
  }
  double number(const char* key) const {
    const auto& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(at(key), "expected a number");
    return v.get<double>();
  }
  bool boolean(const char* key) const {
    const auto& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(at(key), "expected true or false");
    return v.get<bool>();
  }
  std::string string(const char* key) const {
    const auto& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(at(key), "expected a string");
    return v.get<std::string>();
  }
  std::optional<int> optional_integer(const char* key) const {
    if (j_.at(key).is_null()) return std::nullopt;
    return small_integer(key);
  }
  Reader child(const char* key) const { return Reader(j_.at(key), at(key)); }

 private:
  const json& j_;
  std::string path_;
};

OptimizerConfig read_sgd(const Reader& r, int period) {
  auto o = OptimizerConfig::sgd(r.number("lr_max"), r.number("lr_min"), period, r.number("momentum"),
                                r.number("weight_decay"));
  o.grad_clip = r.number("grad_clip");
  return o;
}

RunConfig from_json(const json& doc) {
  const Reader top(doc, "");
  if (top.integer("version") != RunConfig::kVersion) {
    throw ConfigError("version", "unsupported version, expected " + std::to_string(RunConfig::kVersion));
  }
  RunConfig c;
  c.seed = top.unsigned_integer("seed");
  try {
    c.precision = parse_precision(top.string("precision"));
  } catch (const InvalidArgument& e) {
    throw ConfigError("precision", e.what());
  }

  const auto d = top.child("data");
  c.data.source = d.string("source");
  try {
    c.data.preset = parse_synth_preset(d.string("preset"));
  } catch (const InvalidArgument& e) {
    throw ConfigError("data.preset", e.what());
  }
  c.data.train_size = d.integer("train_size");
  c.data.test_size = d.integer("test_size");
  c.data.classes = d.small_integer("classes");
  c.data.image_size = d.integer("image_size");
  c.data.seed = d.unsigned_integer("seed");
  c.data.dir = d.string("dir");

  const auto s = top.child("search");
  c.search.nodes = s.small_integer("nodes");
  c.search.batch_size = s.integer("batch_size");
  const auto& stages = s.raw("stages");
  if (!stages.is_array()) throw ConfigError("search.stages", "expected an array");
  c.search.schedule.stages.clear();
  for (std::size_t k = 0; k < stages.size(); ++k) {
    const Reader st(stages[k], "search.stages[" + std::to_string(k) + "]");
    c.search.schedule.stages.push_back({st.small_integer("layers"), st.small_integer("candidates"),
                                        st.integer("channels"), st.number("dropout"), st.small_integer("epochs"),
                                        st.small_integer("warmup_epochs")});
  }
  const int first_epochs = c.search.schedule.stages.empty() ? 1 : c.search.schedule.stages.front().epochs;
  c.search.weight_optimizer = read_sgd(s.child("weight_optimizer"), first_epochs);
  const auto a = s.child("alpha_optimizer");
  c.search.alpha_optimizer =
      OptimizerConfig::adam(a.number("lr"), a.number("beta1"), a.number("beta2"), a.number("weight_decay"));
  c.search.dropout_floor_fraction = s.number("dropout_floor_fraction");
  c.search.alpha_init_scale = s.number("alpha_init_scale");
  const auto limits = s.child("skip_limits");
  c.search.skip_limits.normal = limits.optional_integer("normal");
  c.search.skip_limits.reduce = limits.optional_integer("reduce");

  const auto e = top.child("eval");
  c.eval.layers = e.small_integer("layers");
  c.eval.channels = e.integer("channels");
  c.eval.epochs = e.small_integer("epochs");
  c.eval.batch_size = e.integer("batch_size");
  c.eval.cutout_length = e.small_integer("cutout_length");
  c.eval.drop_path_prob = e.number("drop_path_prob");
  c.eval.auxiliary_weight = e.number("auxiliary_weight");
  c.eval.auxiliary_channels = e.integer("auxiliary_channels");
  c.eval.affine = e.boolean("affine");
  c.eval.optimizer = read_sgd(e.child("optimizer"), c.eval.epochs);
  return c;
}

}  // namespace

void RunConfig::validate() const {
  const auto& d = data;
  if (d.source != "synthetic" && d.source != "cifar10") {
    throw ConfigError("data.source", "must be 'synthetic' or 'cifar10', got '" + d.source + "'");
  }
  if (d.classes < 2) throw ConfigError("data.classes", "must be at least 2");
  if (d.train_size < d.classes) throw ConfigError("data.train_size", "needs at least one sample per class");
  if (d.test_size < 1) throw ConfigError("data.test_size", "must be positive");
  if (d.image_size < 4 || d.image_size % 4 != 0) throw ConfigError("data.image_size", "must be a positive multiple of 4");
  if (d.source == "cifar10") {
    if (d.classes != 10) throw ConfigError("data.classes", "CIFAR-10 has 10 classes");
    if (d.image_size != 32) throw ConfigError("data.image_size", "CIFAR-10 images are 32x32");
    if (d.dir.empty()) throw ConfigError("data.dir", "required for CIFAR-10");
    if (d.train_size > 50000) throw ConfigError("data.train_size", "CIFAR-10 has 50000 training images");
    if (d.test_size > 10000) throw ConfigError("data.test_size", "CIFAR-10 has 10000 test images");
  }
  with_prefix("search.", [&] { search.validate(); });
  if (search.batch_size > d.train_size / 2) {
    throw ConfigError("search.batch_size", "exceeds half of data.train_size");
  }
  with_prefix("eval.", [&] { eval.validate(); });
}

RunConfig parse_run_config(std::string_view json_text, const std::vector<std::string>& overrides) {
  json doc = json::parse(json_text, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("config", "not valid JSON");
  if (!doc.is_object()) throw ConfigError("config", "expected a JSON object");
  std::string base = "desk";
  if (doc.contains("base")) {
    if (!doc["base"].is_string()) throw ConfigError("base", "expected a string");
    base = doc["base"].get<std::string>();
    doc.erase("base");
  }
  json full;
  if (base == "desk") {
    full = to_json(RunConfig::desk());
  } else if (base == "cifar10") {
    full = to_json(RunConfig::cifar10());
  } else {
    throw ConfigError("base", "must be 'desk' or 'cifar10', got '" + base + "'");
  }
  merge(full, doc, "");
  for (const auto& o : overrides) apply_override(full, o);
  auto cfg = from_json(full);
  cfg.validate();
  return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

std::pair<Dataset, Dataset> load_run_data(const DataConfig& cfg) {
  if (cfg.source == "cifar10") {
    auto train = load_cifar10(cfg.dir, true, cfg.train_size, cfg.seed);
    auto test = load_cifar10(cfg.dir, false, cfg.test_size, cfg.seed);
    return {std::move(train), std::move(test)};
  }
  return synth_train_test(cfg.preset, cfg.seed, cfg.train_size, cfg.test_size, cfg.classes, cfg.image_size);
}

}  // namespace pdarts
