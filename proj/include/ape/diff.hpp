#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "ape/errors.hpp"

namespace ape {

class PatchApplyError : public Error {
public:
    explicit PatchApplyError(const std::string& what) : Error("patch", what) {}
};

struct DiffLine {
    enum class Op { Context, Add, Del };
    Op op = Op::Context;
    std::string text;        // without trailing newline
    bool no_newline = false; // true only for a final line lacking '\n'
};

struct Hunk {
    // 1-based starts; a count of 0 means the start names the line *before*
    // the insertion/deletion point, matching unified diff conventions.
    std::size_t old_start = 0;
    std::size_t old_count = 0;
    std::size_t new_start = 0;
    std::size_t new_count = 0;
    std::vector<DiffLine> lines;
};

struct FileDiff {
    std::string old_path;
    std::string new_path;
    std::vector<Hunk> hunks;
};

struct SplitText {
    std::vector<std::string> lines;
    bool trailing_newline = true;
};

SplitText split_lines(std::string_view text);
std::string join_lines(const SplitText& text);

/// Longest-common-subsequence line diff; the returned script covers both
/// inputs end to end (contexts plus adds plus dels).
std::vector<DiffLine> diff_lines(const std::vector<std::string>& a,
                                 const std::vector<std::string>& b);

/// Groups the script's changed runs into hunks with up to `context` shared
/// lines on each side; runs closer than 2*context merge into one hunk.
/// context == 0 yields exactly the maximal changed regions.
std::vector<Hunk> make_hunks(const std::vector<DiffLine>& script, std::size_t context = 3);

FileDiff diff_texts(const std::string& old_path, const std::string& new_path,
                    const std::string& old_text, const std::string& new_text,
                    std::size_t context = 3);

std::string render_unified(const FileDiff& diff);
std::string render_unified(const std::string& old_path, const std::string& new_path,
                           const std::string& old_text, const std::string& new_text,
                           std::size_t context = 3);

/// Parses a unified diff covering one or more files. Accepts optional
/// "diff ..." banner lines and a/ b/ path prefixes.
std::vector<FileDiff> parse_patch(const std::string& patch);

/// Strict application: every context and deleted line must match the old
/// text exactly, else PatchApplyError.
std::string apply_unified(const std::string& old_text, const FileDiff& diff);

}  // namespace ape
