#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace qrel::io {

std::string read_text_file(const std::filesystem::path& path);

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file. Parent directories are created.
void write_text_file(const std::filesystem::path& path, std::string_view content);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double x);
double parse_double(const std::string& s);

/// 16 lowercase hex digits.
std::string hex64(std::uint64_t x);

/// FNV-1a of a file's bytes, as hex64.
std::string file_digest(const std::filesystem::path& path);

} // namespace qrel::io
