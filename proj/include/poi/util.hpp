#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace poi {

/// Bad input, bad config, or a violated precondition the caller can fix.
/// The CLI maps it to exit code 1; every other exception maps to 2.
class UserError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

/// Writes `bytes` to a sibling temp file and renames it over `path`, so
/// readers observe either the old content or the new one.
void atomic_write(const std::filesystem::path& path, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);
/// Shortest decimal text that parses back to the same float.
std::string format_float(float value);

/// Strict full-string numeric parses; throw UserError naming `what`.
double parse_double(std::string_view text, std::string_view what);
std::int64_t parse_int(std::string_view text, std::string_view what);

/// Replaces control characters (newlines, tabs) by single spaces.
std::string single_line(std::string_view text);

}  // namespace poi
