#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace molspin::io {

// Writes to a sibling temp file, then renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

// Shortest representation that round-trips exactly.
std::string format_double(double v);

}  // namespace molspin::io
