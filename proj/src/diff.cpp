#include "ape/diff.hpp"

#include <algorithm>
#include <sstream>

namespace ape {
namespace {

struct HeaderNums {
    std::size_t old_start, old_count, new_start, new_count;
};

bool parse_hunk_header(const std::string& line, HeaderNums& out) {
    // @@ -os[,oc] +ns[,nc] @@[ anything]
    if (line.rfind("@@ -", 0) != 0) return false;
    std::size_t pos = 4;
    auto read_num = [&](std::size_t& value) {
        if (pos >= line.size() || !isdigit(static_cast<unsigned char>(line[pos]))) return false;
        value = 0;
        while (pos < line.size() && isdigit(static_cast<unsigned char>(line[pos])))
            value = value * 10 + static_cast<std::size_t>(line[pos++] - '0');
        return true;
    };
    out.old_count = 1;
    out.new_count = 1;
    if (!read_num(out.old_start)) return false;
    if (pos < line.size() && line[pos] == ',') {
        ++pos;
        if (!read_num(out.old_count)) return false;
    }
    if (pos + 1 >= line.size() || line[pos] != ' ' || line[pos + 1] != '+') return false;
    pos += 2;
    if (!read_num(out.new_start)) return false;
    if (pos < line.size() && line[pos] == ',') {
        ++pos;
        if (!read_num(out.new_count)) return false;
    }
    return line.compare(pos, 3, " @@") == 0;
}

std::string strip_patch_prefix(std::string path) {
    if (path.rfind("a/", 0) == 0 || path.rfind("b/", 0) == 0) path.erase(0, 2);
    return path;
}

}  // namespace

SplitText split_lines(std::string_view text) {
    SplitText out;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t nl = text.find('\n', start);
        if (nl == std::string_view::npos) {
            out.lines.emplace_back(text.substr(start));
            out.trailing_newline = false;
            return out;
        }
        out.lines.emplace_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    return out;
}

std::string join_lines(const SplitText& text) {
    std::string out;
    for (std::size_t i = 0; i < text.lines.size(); ++i) {
        out += text.lines[i];
        if (i + 1 < text.lines.size() || text.trailing_newline) out += '\n';
    }
    return out;
}

std::vector<DiffLine> diff_lines(const std::vector<std::string>& a,
                                 const std::vector<std::string>& b) {
    // Trim the common prefix and suffix, then run the quadratic LCS table on
    // the middle only; real edits are local so the table stays small.
    std::size_t prefix = 0;
    while (prefix < a.size() && prefix < b.size() && a[prefix] == b[prefix]) ++prefix;
    std::size_t suffix = 0;
    while (suffix < a.size() - prefix && suffix < b.size() - prefix &&
           a[a.size() - 1 - suffix] == b[b.size() - 1 - suffix])
        ++suffix;

    const std::size_t n = a.size() - prefix - suffix;
    const std::size_t m = b.size() - prefix - suffix;

    std::vector<DiffLine> script;
    script.reserve(a.size() + b.size());
    for (std::size_t i = 0; i < prefix; ++i)
        script.push_back({DiffLine::Op::Context, a[i], false});

    std::vector<std::uint32_t> table((n + 1) * (m + 1), 0);
    auto at = [&](std::size_t i, std::size_t j) -> std::uint32_t& { return table[i * (m + 1) + j]; };
    for (std::size_t i = n; i-- > 0;)
        for (std::size_t j = m; j-- > 0;)
            at(i, j) = (a[prefix + i] == b[prefix + j])
                           ? at(i + 1, j + 1) + 1
                           : std::max(at(i + 1, j), at(i, j + 1));

    std::size_t i = 0, j = 0;
    while (i < n && j < m) {
        if (a[prefix + i] == b[prefix + j]) {
            script.push_back({DiffLine::Op::Context, a[prefix + i], false});
            ++i, ++j;
        } else if (at(i + 1, j) >= at(i, j + 1)) {
            script.push_back({DiffLine::Op::Del, a[prefix + i], false});
            ++i;
        } else {
            script.push_back({DiffLine::Op::Add, b[prefix + j], false});
            ++j;
        }
    }
    while (i < n) script.push_back({DiffLine::Op::Del, a[prefix + i++], false});
    while (j < m) script.push_back({DiffLine::Op::Add, b[prefix + j++], false});

    for (std::size_t k = 0; k < suffix; ++k)
        script.push_back({DiffLine::Op::Context, a[a.size() - suffix + k], false});
    return script;
}

std::vector<Hunk> make_hunks(const std::vector<DiffLine>& script, std::size_t context) {
    std::vector<Hunk> hunks;
    // Positions of changed entries in the script.
    std::vector<std::size_t> changed;
    for (std::size_t k = 0; k < script.size(); ++k)
        if (script[k].op != DiffLine::Op::Context) changed.push_back(k);
    if (changed.empty()) return hunks;

    std::size_t group_begin = 0;
    while (group_begin < changed.size()) {
        std::size_t group_end = group_begin;
        while (group_end + 1 < changed.size() &&
               changed[group_end + 1] - changed[group_end] - 1 <= 2 * context)
            ++group_end;

        std::size_t lo = changed[group_begin] - std::min(changed[group_begin], context);
        std::size_t hi = std::min(script.size(), changed[group_end] + context + 1);

        // Old/new line numbers at script position `lo`.
        std::size_t old_line = 1, new_line = 1;
        for (std::size_t k = 0; k < lo; ++k) {
            if (script[k].op != DiffLine::Op::Add) ++old_line;
            if (script[k].op != DiffLine::Op::Del) ++new_line;
        }

        Hunk h;
        h.old_start = old_line;
        h.new_start = new_line;
        for (std::size_t k = lo; k < hi; ++k) {
            h.lines.push_back(script[k]);
            if (script[k].op != DiffLine::Op::Add) ++h.old_count;
            if (script[k].op != DiffLine::Op::Del) ++h.new_count;
        }
        if (h.old_count == 0) h.old_start = old_line - 1;
        if (h.new_count == 0) h.new_start = new_line - 1;
        hunks.push_back(std::move(h));
        group_begin = group_end + 1;
    }
    return hunks;
}

FileDiff diff_texts(const std::string& old_path, const std::string& new_path,
                    const std::string& old_text, const std::string& new_text,
                    std::size_t context) {
    SplitText a = split_lines(old_text);
    SplitText b = split_lines(new_text);
    std::vector<DiffLine> script = diff_lines(a.lines, b.lines);

    // Script index of the entry carrying each side's final line, or -1 when
    // that side ends with a newline and needs no marker.
    auto last_not = [&](DiffLine::Op excluded) -> std::ptrdiff_t {
        for (std::size_t k = script.size(); k-- > 0;)
            if (script[k].op != excluded) return static_cast<std::ptrdiff_t>(k);
        return -1;
    };
    std::ptrdiff_t a_end = a.trailing_newline ? -1 : last_not(DiffLine::Op::Add);
    std::ptrdiff_t b_end = b.trailing_newline ? -1 : last_not(DiffLine::Op::Del);

    if (a_end >= 0 && a_end == b_end) {
        // Both sides end, unterminated, at the same unchanged line.
        script[a_end].no_newline = true;
    } else {
        // A context line unterminated on one side only hides a real edit (the
        // newline), and its marker would vanish whenever the line fell outside
        // every hunk; rewrite it as an explicit delete/re-add.
        if (a_end >= 0) {
            if (script[a_end].op == DiffLine::Op::Context) {
                const std::string text = script[a_end].text;
                script[a_end] = {DiffLine::Op::Del, text, true};
                script.insert(script.begin() + a_end + 1, {DiffLine::Op::Add, text, false});
                if (b_end > a_end) ++b_end;
            } else {
                script[a_end].no_newline = true;
            }
        }
        if (b_end >= 0) {
            if (script[b_end].op == DiffLine::Op::Context) {
                const std::string text = script[b_end].text;
                script[b_end] = {DiffLine::Op::Del, text, false};
                script.insert(script.begin() + b_end + 1, {DiffLine::Op::Add, text, true});
            } else {
                script[b_end].no_newline = true;
            }
        }
    }
    FileDiff d;
    d.old_path = old_path;
    d.new_path = new_path;
    d.hunks = make_hunks(script, context);
    return d;
}

std::string render_unified(const FileDiff& diff) {
    if (diff.hunks.empty()) return {};
    std::ostringstream out;
    out << "--- a/" << diff.old_path << "\n+++ b/" << diff.new_path << "\n";
    for (const Hunk& h : diff.hunks) {
        out << "@@ -" << h.old_start << "," << h.old_count << " +" << h.new_start << ","
            << h.new_count << " @@\n";
        for (const DiffLine& line : h.lines) {
            char tag = line.op == DiffLine::Op::Add ? '+' : line.op == DiffLine::Op::Del ? '-' : ' ';
            out << tag << line.text << "\n";
            if (line.no_newline) out << "\\ No newline at end of file\n";
        }
    }
    return out.str();
}

std::string render_unified(const std::string& old_path, const std::string& new_path,
                           const std::string& old_text, const std::string& new_text,
                           std::size_t context) {
    return render_unified(diff_texts(old_path, new_path, old_text, new_text, context));
}

std::vector<FileDiff> parse_patch(const std::string& patch) {
    SplitText text = split_lines(patch);
    std::vector<FileDiff> files;
    std::size_t k = 0;
    const auto& lines = text.lines;
    while (k < lines.size()) {
        const std::string& line = lines[k];
        if (line.rfind("--- ", 0) == 0) {
            if (k + 1 >= lines.size() || lines[k + 1].rfind("+++ ", 0) != 0)
                throw PatchApplyError("'---' header without matching '+++' at line " +
                                      std::to_string(k + 1));
            FileDiff d;
            d.old_path = strip_patch_prefix(line.substr(4));
            d.new_path = strip_patch_prefix(lines[k + 1].substr(4));
            k += 2;
            while (k < lines.size() && lines[k].rfind("@@ -", 0) == 0) {
                HeaderNums nums;
                if (!parse_hunk_header(lines[k], nums))
                    throw PatchApplyError("malformed hunk header: " + lines[k]);
                Hunk h;
                h.old_start = nums.old_start;
                h.old_count = nums.old_count;
                h.new_start = nums.new_start;
                h.new_count = nums.new_count;
                ++k;
                std::size_t old_seen = 0, new_seen = 0;
                while (k < lines.size() && (old_seen < h.old_count || new_seen < h.new_count)) {
                    const std::string& body = lines[k];
                    if (body == "\\ No newline at end of file") {
                        if (h.lines.empty()) throw PatchApplyError("dangling no-newline marker");
                        h.lines.back().no_newline = true;
                        ++k;
                        continue;
                    }
                    if (body.empty())
                        throw PatchApplyError("truncated hunk at line " + std::to_string(k + 1));
                    char tag = body[0];
                    DiffLine entry{DiffLine::Op::Context, body.substr(1), false};
                    if (tag == '+') {
                        entry.op = DiffLine::Op::Add;
                        ++new_seen;
                    } else if (tag == '-') {
                        entry.op = DiffLine::Op::Del;
                        ++old_seen;
                    } else if (tag == ' ') {
                        ++old_seen;
                        ++new_seen;
                    } else {
                        throw PatchApplyError("unexpected hunk line: " + body);
                    }
                    h.lines.push_back(std::move(entry));
                    ++k;
                }
                if (old_seen != h.old_count || new_seen != h.new_count)
                    throw PatchApplyError("hunk body does not match its header counts");
                if (k < lines.size() && lines[k] == "\\ No newline at end of file") {
                    if (!h.lines.empty()) h.lines.back().no_newline = true;
                    ++k;
                }
                d.hunks.push_back(std::move(h));
            }
            files.push_back(std::move(d));
        } else {
            // Banner lines ("diff --git ...", "index ...") and blank separators.
            ++k;
        }
    }
    if (files.empty()) {
        // A blank patch means "no changes"; anything else without headers is
        // not a patch at all.
        for (const auto& l : lines)
            if (!l.empty()) throw PatchApplyError("patch contains no file headers");
    }
    return files;
}

std::string apply_unified(const std::string& old_text, const FileDiff& diff) {
    SplitText old = split_lines(old_text);
    SplitText result;
    std::size_t cursor = 0;  // 0-based index into old.lines
    bool last_emitted_no_newline = false;

    for (const Hunk& h : diff.hunks) {
        std::size_t hunk_begin = h.old_count == 0 ? h.old_start : h.old_start - 1;
        if (hunk_begin < cursor || hunk_begin > old.lines.size())
            throw PatchApplyError("hunk starts out of range at old line " +
                                  std::to_string(h.old_start));
        while (cursor < hunk_begin) result.lines.push_back(old.lines[cursor++]);
        for (const DiffLine& line : h.lines) {
            switch (line.op) {
                case DiffLine::Op::Context:
                    if (cursor >= old.lines.size() || old.lines[cursor] != line.text)
                        throw PatchApplyError("context mismatch at old line " +
                                              std::to_string(cursor + 1));
                    result.lines.push_back(old.lines[cursor++]);
                    last_emitted_no_newline = line.no_newline;
                    break;
                case DiffLine::Op::Del:
                    if (cursor >= old.lines.size() || old.lines[cursor] != line.text)
                        throw PatchApplyError("deletion mismatch at old line " +
                                              std::to_string(cursor + 1));
                    ++cursor;
                    break;
                case DiffLine::Op::Add:
                    result.lines.push_back(line.text);
                    last_emitted_no_newline = line.no_newline;
                    break;
            }
        }
    }
    // If unchanged old lines remain past the last hunk they form the tail of
    // the result, so the old file's final-newline state carries over;
    // otherwise the last hunk produced the tail and its marker decides.
    bool tail_from_old = cursor < old.lines.size();
    while (cursor < old.lines.size()) result.lines.push_back(old.lines[cursor++]);
    if (tail_from_old || diff.hunks.empty())
        result.trailing_newline = old.trailing_newline;
    else
        result.trailing_newline = !last_emitted_no_newline;
    if (result.lines.empty()) result.trailing_newline = true;
    return join_lines(result);
}

}  // namespace ape
