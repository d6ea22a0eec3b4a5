#include "ape/glob.hpp"

namespace ape {

namespace {

// Matches one pattern segment (no '/', no '**') against one path segment.
bool segment_match(std::string_view pat, std::string_view seg) {
    size_t p = 0, s = 0;
    size_t star = std::string_view::npos, star_s = 0;
    while (s < seg.size()) {
        if (p < pat.size() && (pat[p] == '?' || pat[p] == seg[s])) {
            ++p;
            ++s;
        } else if (p < pat.size() && pat[p] == '*') {
            star = p++;
            star_s = s;
        } else if (star != std::string_view::npos) {
            p = star + 1;
            s = ++star_s;
        } else {
            return false;
        }
    }
    while (p < pat.size() && pat[p] == '*') ++p;
    return p == pat.size();
}

bool segments_match(const std::vector<std::string>& pat, size_t pi,
                    const std::vector<std::string>& path, size_t si) {
    if (pi == pat.size()) return si == path.size();
    if (pat[pi] == "**") {
        // zero or more whole segments
        for (size_t skip = si; skip <= path.size(); ++skip) {
            if (segments_match(pat, pi + 1, path, skip)) return true;
        }
        return false;
    }
    if (si == path.size()) return false;
    return segment_match(pat[pi], path[si]) && segments_match(pat, pi + 1, path, si + 1);
}

}  // namespace

std::vector<std::string> split_path_segments(std::string_view path) {
    std::vector<std::string> segments;
    size_t start = 0;
    while (start <= path.size()) {
        const size_t slash = path.find('/', start);
        const size_t end = slash == std::string_view::npos ? path.size() : slash;
        if (end > start) segments.emplace_back(path.substr(start, end - start));
        if (slash == std::string_view::npos) break;
        start = slash + 1;
    }
    return segments;
}

std::string glob_error(std::string_view pattern) {
    if (pattern.empty()) return "empty pattern";
    for (char c : pattern) {
        if (c == '[' || c == ']') return "character classes are not supported: '" + std::string(1, c) + "'";
        if (c == '{' || c == '}') return "brace expansion is not supported: '" + std::string(1, c) + "'";
        if (c == '\\') return "escapes are not supported: '\\'";
    }
    for (const std::string& seg : split_path_segments(pattern)) {
        if (seg != "**" && seg.find("**") != std::string::npos) {
            return "'**' must stand alone as a path segment: '" + seg + "'";
        }
    }
    return {};
}

bool glob_match(std::string_view pattern, std::string_view path) {
    const auto pat = split_path_segments(pattern);
    const auto segs = split_path_segments(path);
    return segments_match(pat, 0, segs, 0);
}

bool matches_any(const std::vector<std::string>& patterns, std::string_view path) {
    for (const auto& p : patterns) {
        if (glob_match(p, path)) return true;
    }
    return false;
}

}  // namespace ape
