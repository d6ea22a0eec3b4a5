#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace ape {

/// Boundary glob language, deliberately small so decisions stay auditable:
///
///   *    matches any run of characters within one path segment
///   ?    matches exactly one character within a segment
///   **   as a whole segment, matches zero or more whole segments
///
/// Patterns and paths are compared as '/'-separated relative paths.
/// Character classes, braces and escapes are rejected by glob_error().

/// Empty string when `pattern` is valid, otherwise a description of the
/// problem (naming the offending construct).
std::string glob_error(std::string_view pattern);

bool glob_match(std::string_view pattern, std::string_view path);

bool matches_any(const std::vector<std::string>& patterns, std::string_view path);

std::vector<std::string> split_path_segments(std::string_view path);

}  // namespace ape
