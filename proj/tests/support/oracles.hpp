#pragma once

// Reference implementations the production code is tested against. Each is
// written independently of src/ (different algorithms where possible) so a
// disagreement means a real bug, not a shared one.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

namespace ape_test {

// --- glob ----------------------------------------------------------------

inline std::vector<std::string> oracle_split(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == '/') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

// Plain recursion with explicit branching on '*', no backtracking trick.
inline bool oracle_seg_match(const std::string& pat, std::size_t p, const std::string& seg,
                             std::size_t s) {
    if (p == pat.size()) return s == seg.size();
    if (pat[p] == '*') {
        for (std::size_t take = s; take <= seg.size(); ++take)
            if (oracle_seg_match(pat, p + 1, seg, take)) return true;
        return false;
    }
    if (s == seg.size()) return false;
    if (pat[p] != '?' && pat[p] != seg[s]) return false;
    return oracle_seg_match(pat, p + 1, seg, s + 1);
}

inline bool oracle_glob_match(const std::string& pattern, const std::string& path) {
    std::vector<std::string> ps = oracle_split(pattern);
    std::vector<std::string> xs = oracle_split(path);
    std::function<bool(std::size_t, std::size_t)> go = [&](std::size_t pi, std::size_t si) {
        if (pi == ps.size()) return si == xs.size();
        if (ps[pi] == "**") {
            for (std::size_t skip = si; skip <= xs.size(); ++skip)
                if (go(pi + 1, skip)) return true;
            return false;
        }
        if (si == xs.size()) return false;
        return oracle_seg_match(ps[pi], 0, xs[si], 0) && go(pi + 1, si + 1);
    };
    return go(0, 0);
}

// --- boundary decisions --------------------------------------------------

struct OracleBoundary {
    std::vector<std::string> read_only;
    std::vector<std::string> blocked;
    std::string writable_root = "scratch";
    bool has_reference = false;
};

struct OracleDecision {
    bool escapes = false;            // normalization failed or unknown root
    std::string verdict = "allow";   // allow | deny-blocked | deny-read-only
    std::string pattern;             // first matching pattern, if any
    std::string normalized;
};

inline OracleDecision oracle_decide(const OracleBoundary& b, const std::string& path, bool write) {
    OracleDecision d;
    if (!path.empty() && path.front() == '/') {
        d.escapes = true;
        return d;
    }
    std::vector<std::string> stack;
    for (const std::string& seg : oracle_split(path)) {
        if (seg == ".") continue;
        if (seg == "..") {
            if (stack.empty()) {
                d.escapes = true;
                return d;
            }
            stack.pop_back();
            continue;
        }
        stack.push_back(seg);
    }
    if (stack.empty()) {
        d.escapes = true;
        return d;
    }
    std::string norm = stack[0];
    for (std::size_t i = 1; i < stack.size(); ++i) norm += "/" + stack[i];
    d.normalized = norm;

    const std::string& root = stack[0];
    bool known = root == "scratch" || root == "target" || (root == "reference" && b.has_reference);
    if (!known) {
        d.escapes = true;
        return d;
    }
    std::string rel = stack.size() > 1 ? norm.substr(root.size() + 1) : std::string();

    auto first = [&](const std::vector<std::string>& patterns) -> const std::string* {
        for (const std::string& p : patterns)
            if (oracle_glob_match(p, norm) || (!rel.empty() && oracle_glob_match(p, rel))) return &p;
        return nullptr;
    };

    if (const std::string* p = first(b.blocked)) {
        d.verdict = "deny-blocked";
        d.pattern = *p;
        return d;
    }
    if (write) {
        if (root != b.writable_root) {
            d.verdict = "deny-read-only";
            return d;
        }
        if (const std::string* p = first(b.read_only)) {
            d.verdict = "deny-read-only";
            d.pattern = *p;
            return d;
        }
    }
    return d;
}

// --- toy semantic checking -----------------------------------------------

struct OracleDiag {
    std::string severity;  // "error" | "warning"
    std::string file;
    int line = 0;
    std::string code;
    std::string name;  // the quoted identifier the diagnostic is about

    auto operator<=>(const OracleDiag&) const = default;
};

struct OracleDecl {
    std::string name;
    std::vector<std::string> deps;
    int sorry_tokens = 0;
    std::string file;
    int line = 0;
};

// Parses only well-formed declaration lines (the random generator emits no
// malformed ones); blank lines are skipped.
inline std::vector<OracleDecl> oracle_parse(const std::string& file, const std::string& src) {
    std::vector<OracleDecl> out;
    std::istringstream in(src);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        OracleDecl d;
        d.file = file;
        d.line = line_no;
        std::size_t colon = line.find(':');
        std::size_t semi = line.find(';');
        std::istringstream head(line.substr(0, colon));
        std::string kw;
        head >> kw >> d.name;
        std::string needs = line.substr(colon + 1, semi - colon - 1);
        std::size_t at = needs.find("needs");
        std::string csv = needs.substr(at + 5);
        std::istringstream deps(csv);
        std::string dep;
        while (std::getline(deps, dep, ',')) {
            std::size_t b = dep.find_first_not_of(" \t");
            if (b == std::string::npos) continue;
            std::size_t e = dep.find_last_not_of(" \t");
            d.deps.push_back(dep.substr(b, e - b + 1));
        }
        std::istringstream body(line.substr(semi + 1));
        std::string tok;
        while (body >> tok)
            if (tok == "sorry") ++d.sorry_tokens;
        out.push_back(std::move(d));
    }
    return out;
}

/// Name resolution, duplicate detection and cycle detection by transitive
/// closure over a boolean reachability matrix (the production code uses
/// Tarjan's SCC algorithm).
inline std::vector<OracleDiag> oracle_toy_check(const std::map<std::string, std::string>& sources,
                                                const std::set<std::string>& target) {
    std::vector<OracleDecl> decls;
    for (const auto& [file, src] : sources) {
        std::vector<OracleDecl> unit = oracle_parse(file, src);
        decls.insert(decls.end(), unit.begin(), unit.end());
    }

    std::vector<OracleDiag> diags;
    std::vector<std::size_t> primaries;
    std::set<std::string> primary_names;
    for (std::size_t i = 0; i < decls.size(); ++i) {
        const OracleDecl& d = decls[i];
        if (target.count(d.name) || primary_names.count(d.name)) {
            diags.push_back({"error", d.file, d.line, "duplicate-name", d.name});
            continue;
        }
        primary_names.insert(d.name);
        primaries.push_back(i);
    }

    for (const OracleDecl& d : decls) {
        for (const std::string& dep : d.deps)
            if (!target.count(dep) && !primary_names.count(dep))
                diags.push_back({"error", d.file, d.line, "unresolved-name", dep});
        for (int s = 0; s < d.sorry_tokens; ++s)
            diags.push_back({"warning", d.file, d.line, "sorry", d.name});
    }

    // reach[i][j]: a dependency path of length >= 1 from primary i to j.
    std::size_t n = primaries.size();
    std::map<std::string, std::size_t> node;
    for (std::size_t i = 0; i < n; ++i) node[decls[primaries[i]].name] = i;
    std::vector<std::vector<bool>> reach(n, std::vector<bool>(n, false));
    for (std::size_t i = 0; i < n; ++i)
        for (const std::string& dep : decls[primaries[i]].deps) {
            auto it = node.find(dep);
            if (it != node.end()) reach[i][it->second] = true;
        }
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < n; ++i)
            if (reach[i][k])
                for (std::size_t j = 0; j < n; ++j)
                    if (reach[k][j]) reach[i][j] = true;
    for (std::size_t i = 0; i < n; ++i)
        if (reach[i][i]) {
            const OracleDecl& d = decls[primaries[i]];
            diags.push_back({"error", d.file, d.line, "cycle", d.name});
        }

    std::sort(diags.begin(), diags.end());
    return diags;
}

/// Extracts the first '...'-quoted token of a diagnostic message.
inline std::string quoted_name(const std::string& message) {
    std::size_t open = message.find('\'');
    if (open == std::string::npos) return {};
    std::size_t close = message.find('\'', open + 1);
    if (close == std::string::npos) return {};
    return message.substr(open + 1, close - open - 1);
}

// --- dedup accounting ----------------------------------------------------

struct OracleDedup {
    std::uint64_t instances = 0;
    std::uint64_t unique = 0;
    std::uint64_t naive_bytes = 0;
    std::uint64_t stored_bytes = 0;
};

/// Brute force: a plain set of byte strings over every (manifest, entry)
/// instance.
inline OracleDedup oracle_dedup(const std::vector<std::vector<std::string>>& manifests) {
    OracleDedup d;
    std::set<std::string> distinct;
    for (const auto& manifest : manifests)
        for (const std::string& bytes : manifest) {
            ++d.instances;
            d.naive_bytes += bytes.size();
            distinct.insert(bytes);
        }
    d.unique = distinct.size();
    for (const std::string& bytes : distinct) d.stored_bytes += bytes.size();
    return d;
}

}  // namespace ape_test
