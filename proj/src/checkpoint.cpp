#include "pdarts/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <string>

namespace pdarts {

namespace {

constexpr char kMagic[8] = {'P', 'D', 'A', 'R', 'T', 'S', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

enum class EntryKind : std::uint8_t { param = 'P', buffer = 'B', slot = 'S', counter = 'C' };

template <typename V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& in, const char* what) {
  V v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(V))) {
    throw FormatError(std::string("checkpoint truncated while reading ") + what);
  }
  return v;
}

void put_name(std::ostream& out, const std::string& name) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
}

template <typename T>
void put_tensor(std::ostream& out, EntryKind kind, const std::string& name, const Shape& shape,
                std::span<const T> data) {
  put<std::uint8_t>(out, static_cast<std::uint8_t>(kind));
  put_name(out, name);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) put<std::int64_t>(out, d);
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
}

}  // namespace

template <typename T>
void save_checkpoint(const ParamStore<T>& store, std::ostream& out) {
  std::uint64_t count = store.params().size() + store.buffers().size() + store.steps().size();
  for (const auto& [kind, per_param] : store.slots()) count += per_param.size();

  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, sizeof(T));
  put<std::uint64_t>(out, count);
  for (const auto& [name, t] : store.params()) put_tensor<T>(out, EntryKind::param, name, t.shape(), t.data());
  for (const auto& [name, t] : store.buffers()) put_tensor<T>(out, EntryKind::buffer, name, t.shape(), t.data());
  for (const auto& [kind, per_param] : store.slots()) {
    for (const auto& [name, buf] : per_param) {
      put_tensor<T>(out, EntryKind::slot, kind + ":" + name, {static_cast<std::int64_t>(buf.size())}, buf);
    }
  }
  for (const auto& [name, n] : store.steps()) {
    put<std::uint8_t>(out, static_cast<std::uint8_t>(EntryKind::counter));
    put_name(out, name);
    put<std::uint32_t>(out, 0);
    put<std::int64_t>(out, n);
  }
  if (!out) throw FormatError("checkpoint write failed");
}

template <typename T>
void save_checkpoint(const ParamStore<T>& store, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  save_checkpoint(store, out);
}

template <typename T>
void load_checkpoint(ParamStore<T>& store, std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw FormatError("not a checkpoint file (bad magic)");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto scalar_bytes = get<std::uint32_t>(in, "scalar width");
  if (scalar_bytes != 4 && scalar_bytes != 8) {
    throw FormatError("unsupported scalar width " + std::to_string(scalar_bytes));
  }
  const auto count = get<std::uint64_t>(in, "entry count");

  std::set<std::string> seen;
  auto& slots = store.mutable_slots();
  auto& steps = store.mutable_steps();
  slots.clear();
  steps.clear();
  for (std::uint64_t e = 0; e < count; ++e) {
    const auto kind = static_cast<EntryKind>(get<std::uint8_t>(in, "entry kind"));
    const auto name_len = get<std::uint32_t>(in, "name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw FormatError("checkpoint truncated in entry name");
    const auto ndim = get<std::uint32_t>(in, "rank");
    Shape shape(ndim);
    for (auto& d : shape) d = get<std::int64_t>(in, "dimension");
    if (kind == EntryKind::counter) {
      steps[name] = get<std::int64_t>(in, "counter");
      continue;
    }
    const auto n = static_cast<std::size_t>(numel(shape));
    std::vector<T> values(n);
    if (scalar_bytes == sizeof(T)) {
      if (!in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(T)))) {
        throw FormatError("checkpoint truncated in data of '" + name + "'");
      }
    } else if (scalar_bytes == 4) {
      for (auto& v : values) v = static_cast<T>(get<float>(in, "scalar"));
    } else {
      for (auto& v : values) v = static_cast<T>(get<double>(in, "scalar"));
    }

    if (kind == EntryKind::slot) {
      const auto colon = name.find(':');
      if (colon == std::string::npos) throw FormatError("malformed slot entry '" + name + "'");
      const std::string param = name.substr(colon + 1);
      if (!store.contains(param)) throw FormatError("slot for unknown parameter '" + param + "'");
      slots[name.substr(0, colon)][param] = std::move(values);
      continue;
    }
    const auto& table = kind == EntryKind::param ? store.params() : store.buffers();
    auto it = table.find(name);
    if (kind != EntryKind::param && kind != EntryKind::buffer) throw FormatError("unknown entry kind in checkpoint");
    if (it == table.end()) throw FormatError("checkpoint entry '" + name + "' has no counterpart in the model");
    if (it->second.shape() != shape) {
      throw FormatError("shape mismatch for '" + name + "': file " + to_string(shape) + ", model " +
                        to_string(it->second.shape()));
    }
    Tensor<T> target = it->second;
    std::copy(values.begin(), values.end(), target.mutable_data().begin());
    seen.insert(name);
  }
  for (const auto& [name, t] : store.params()) {
    if (!seen.count(name)) throw FormatError("checkpoint is missing parameter '" + name + "'");
  }
  for (const auto& [name, t] : store.buffers()) {
    if (!seen.count(name)) throw FormatError("checkpoint is missing buffer '" + name + "'");
  }
}

template <typename T>
void load_checkpoint(ParamStore<T>& store, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  load_checkpoint(store, in);
}

template void save_checkpoint(const ParamStore<float>&, std::ostream&);
template void save_checkpoint(const ParamStore<double>&, std::ostream&);
template void save_checkpoint(const ParamStore<float>&, const std::filesystem::path&);
template void save_checkpoint(const ParamStore<double>&, const std::filesystem::path&);
template void load_checkpoint(ParamStore<float>&, std::istream&);
template void load_checkpoint(ParamStore<double>&, std::istream&);
template void load_checkpoint(ParamStore<float>&, const std::filesystem::path&);
template void load_checkpoint(ParamStore<double>&, const std::filesystem::path&);

}  // namespace pdarts
