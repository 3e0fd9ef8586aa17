#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace gridtrip {

// Shortest-faithful decimal with 12 significant digits; the one formatting
// used by every delimited export so outputs stay byte-stable.
[[nodiscard]] std::string format_value(double value);

// FNV-1a 64-bit digest as lowercase hex; used for content provenance.
[[nodiscard]] std::string fnv1a_hex(std::string_view bytes);

// Whole-file read/write with InputError on I/O failure.
[[nodiscard]] std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace gridtrip
