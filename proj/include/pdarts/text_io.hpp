#pragma once

#include <filesystem>
#include <string>

namespace pdarts {

/// Whole-file text IO; failures throw Error naming the path.
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace pdarts
