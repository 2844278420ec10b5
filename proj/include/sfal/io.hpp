#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace sfal::io {

// Formats a double so that the exact value round-trips and the text is
// identical across runs and platforms with IEEE doubles.
std::string format_double(double v);

// Joins fields with commas and a trailing newline.
std::string csv_row(const std::vector<std::string>& fields);

// Writes content via a temporary file and rename, so readers never observe a
// partially written file.
void atomic_write(const std::filesystem::path& path, const std::string& content);

std::string read_file(const std::filesystem::path& path);

// FNV-1a over bytes; stable fingerprint for configs and cache keys.
std::uint64_t fnv1a(const std::string& bytes);
std::string hex64(std::uint64_t v);

}  // namespace sfal::io
