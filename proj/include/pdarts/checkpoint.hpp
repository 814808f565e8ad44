#pragma once

#include <filesystem>
#include <iosfwd>

#include "pdarts/param_store.hpp"

namespace pdarts {

/// Binary ParamStore dump; the byte layout is described in docs/checkpoint_format.md.
template <typename T>
void save_checkpoint(const ParamStore<T>& store, std::ostream& out);

template <typename T>
void save_checkpoint(const ParamStore<T>& store, const std::filesystem::path& path);

/// Loads into an already-built store. Every parameter and buffer of the
/// store must be present with the same shape; unknown entries are rejected.
/// Scalars are converted when the file precision differs from T.
template <typename T>
void load_checkpoint(ParamStore<T>& store, std::istream& in);

template <typename T>
void load_checkpoint(ParamStore<T>& store, const std::filesystem::path& path);

}  // namespace pdarts
