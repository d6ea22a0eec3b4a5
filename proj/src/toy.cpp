#include "ape/toy.hpp"

#include <algorithm>
#include <chrono>

#include "ape/diff.hpp"

namespace ape {
namespace {

bool ident_start(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
}

bool ident_cont(char c) {
    return ident_start(c) || (c >= '0' && c <= '9') || c == '\'';
}

std::string trim(std::string_view s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    std::size_t e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_ws(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
        std::size_t start = i;
        while (i < s.size() && s[i] != ' ' && s[i] != '\t' && s[i] != '\r') ++i;
        if (i > start) out.emplace_back(s.substr(start, i - start));
    }
    return out;
}

Diagnostic parse_error(const std::string& file, int line, std::string message) {
    return {Severity::Error, file, line, "parse", std::move(message)};
}

/// Marks every declaration sitting on a dependency cycle. Iterative Tarjan;
/// a node is cyclic when its strongly connected component has more than one
/// member or it depends on itself.
std::vector<bool> cyclic_nodes(const std::vector<std::vector<std::size_t>>& adj) {
    const std::size_t n = adj.size();
    std::vector<std::size_t> index(n, 0), lowlink(n, 0);
    std::vector<bool> on_stack(n, false), visited(n, false), cyclic(n, false);
    std::vector<std::size_t> stack;
    std::size_t next_index = 1;

    struct Frame {
        std::size_t v;
        std::size_t edge = 0;
    };
    for (std::size_t root = 0; root < n; ++root) {
        if (visited[root]) continue;
        std::vector<Frame> frames{{root}};
        while (!frames.empty()) {
            Frame& f = frames.back();
            std::size_t v = f.v;
            if (f.edge == 0) {
                visited[v] = true;
                index[v] = lowlink[v] = next_index++;
                stack.push_back(v);
                on_stack[v] = true;
            }
            if (f.edge < adj[v].size()) {
                std::size_t w = adj[v][f.edge++];
                if (!visited[w]) {
                    frames.push_back({w});
                } else if (on_stack[w]) {
                    lowlink[v] = std::min(lowlink[v], index[w]);
                }
            } else {
                if (lowlink[v] == index[v]) {
                    std::vector<std::size_t> component;
                    while (true) {
                        std::size_t w = stack.back();
                        stack.pop_back();
                        on_stack[w] = false;
                        component.push_back(w);
                        if (w == v) break;
                    }
                    bool self_loop = component.size() == 1 &&
                                     std::find(adj[v].begin(), adj[v].end(), v) != adj[v].end();
                    if (component.size() > 1 || self_loop)
                        for (std::size_t w : component) cyclic[w] = true;
                }
                frames.pop_back();
                if (!frames.empty()) {
                    Frame& parent = frames.back();
                    lowlink[parent.v] = std::min(lowlink[parent.v], lowlink[v]);
                }
            }
        }
    }
    return cyclic;
}

}  // namespace

bool toy_identifier_ok(std::string_view s) {
    if (s.empty() || !ident_start(s[0])) return false;
    return std::all_of(s.begin() + 1, s.end(), ident_cont);
}

std::string strip_toy_comments(std::string_view source) {
    std::string out;
    out.reserve(source.size());
    std::size_t depth = 0;
    std::size_t open_pos = 0;  // where the outermost open block began
    bool line_comment = false;
    for (std::size_t i = 0; i < source.size(); ++i) {
        char c = source[i];
        if (c == '\n') {
            line_comment = false;
            out += '\n';
            continue;
        }
        if (line_comment) {
            out += ' ';
            continue;
        }
        if (depth > 0) {
            if (c == '-' && i + 1 < source.size() && source[i + 1] == '/') {
                --depth;
                out += "  ";
                ++i;
            } else if (c == '/' && i + 1 < source.size() && source[i + 1] == '-') {
                ++depth;
                out += "  ";
                ++i;
            } else {
                out += ' ';
            }
            continue;
        }
        if (c == '/' && i + 1 < source.size() && source[i + 1] == '-') {
            ++depth;
            open_pos = out.size();
            out += "  ";
            ++i;
        } else if (c == '-' && i + 1 < source.size() && source[i + 1] == '-') {
            line_comment = true;
            out += "  ";
            ++i;
        } else {
            out += c;
        }
    }
    // An unterminated block comment leaves a marker, at its opening position,
    // for the parser to report.
    if (depth > 0) out[open_pos] = '\x01';
    return out;
}

ToyUnit parse_toy_unit(const std::string& file, const std::string& source) {
    ToyUnit unit;
    std::string clean = strip_toy_comments(source);
    if (std::size_t marker = clean.find('\x01'); marker != std::string::npos) {
        int line = 1 + static_cast<int>(std::count(clean.begin(), clean.begin() + marker, '\n'));
        unit.parse_errors.push_back(parse_error(file, line, "unterminated block comment"));
        clean[marker] = ' ';
    }

    SplitText lines = split_lines(clean);
    for (std::size_t idx = 0; idx < lines.lines.size(); ++idx) {
        const int line_no = static_cast<int>(idx) + 1;
        std::string line = trim(lines.lines[idx]);
        if (line.empty()) continue;

        std::size_t semi = line.find(';');
        if (semi == std::string::npos) {
            unit.parse_errors.push_back(parse_error(file, line_no, "missing ';' before body"));
            continue;
        }
        std::string head = line.substr(0, semi);
        std::string body = line.substr(semi + 1);

        std::size_t colon = head.find(':');
        if (colon == std::string::npos) {
            unit.parse_errors.push_back(parse_error(file, line_no, "missing ':' after name"));
            continue;
        }
        std::vector<std::string> lhs = split_ws(std::string_view(head).substr(0, colon));
        if (lhs.size() != 2 || (lhs[0] != "def" && lhs[0] != "thm")) {
            unit.parse_errors.push_back(
                parse_error(file, line_no, "expected 'def <name>' or 'thm <name>' before ':'"));
            continue;
        }
        if (!toy_identifier_ok(lhs[1])) {
            unit.parse_errors.push_back(parse_error(file, line_no, "invalid name '" + lhs[1] + "'"));
            continue;
        }

        std::string needs = trim(std::string_view(head).substr(colon + 1));
        if (needs != "needs" && needs.rfind("needs ", 0) != 0 && needs.rfind("needs\t", 0) != 0) {
            unit.parse_errors.push_back(parse_error(file, line_no, "expected 'needs' after ':'"));
            continue;
        }
        std::string csv = needs.size() > 5 ? trim(std::string_view(needs).substr(5)) : std::string();

        ToyDecl decl;
        decl.keyword = lhs[0];
        decl.name = lhs[1];
        decl.file = file;
        decl.line = line_no;

        bool bad = false;
        if (!csv.empty()) {
            std::size_t start = 0;
            while (true) {
                std::size_t comma = csv.find(',', start);
                std::string item = trim(std::string_view(csv).substr(
                    start, comma == std::string::npos ? std::string::npos : comma - start));
                if (!toy_identifier_ok(item)) {
                    unit.parse_errors.push_back(
                        parse_error(file, line_no, "invalid dependency name '" + item + "'"));
                    bad = true;
                    break;
                }
                decl.deps.push_back(item);
                if (comma == std::string::npos) break;
                start = comma + 1;
            }
        }
        if (bad) continue;

        decl.body_tokens = split_ws(body);
        unit.declarations.push_back(std::move(decl));
    }
    return unit;
}

std::set<std::string> toy_decl_names(const std::string& source) {
    std::set<std::string> names;
    for (const ToyDecl& d : parse_toy_unit("", source).declarations) names.insert(d.name);
    return names;
}

CompileResult toy_check(const std::map<std::string, std::string>& unit_sources,
                        const std::set<std::string>& target_decls) {
    auto start = std::chrono::steady_clock::now();
    std::vector<Diagnostic> diags;
    std::vector<ToyDecl> decls;  // in (file, line) order thanks to map iteration

    for (const auto& [file, source] : unit_sources) {
        ToyUnit unit = parse_toy_unit(file, source);
        diags.insert(diags.end(), unit.parse_errors.begin(), unit.parse_errors.end());
        decls.insert(decls.end(), unit.declarations.begin(), unit.declarations.end());
    }

    // First occurrence of each scratch name defines it; later ones and any
    // name already provided by the target are duplicates.
    std::map<std::string, std::size_t> first_decl;
    std::vector<bool> is_primary(decls.size(), false);
    for (std::size_t i = 0; i < decls.size(); ++i) {
        const ToyDecl& d = decls[i];
        if (target_decls.count(d.name)) {
            diags.push_back({Severity::Error, d.file, d.line, "duplicate-name",
                             "declaration '" + d.name + "' shadows the target library"});
            continue;
        }
        auto [it, inserted] = first_decl.emplace(d.name, i);
        if (!inserted) {
            diags.push_back({Severity::Error, d.file, d.line, "duplicate-name",
                             "duplicate declaration '" + d.name + "'"});
            continue;
        }
        is_primary[i] = true;
    }

    for (const ToyDecl& d : decls) {
        for (const std::string& dep : d.deps)
            if (!target_decls.count(dep) && !first_decl.count(dep))
                diags.push_back({Severity::Error, d.file, d.line, "unresolved-name",
                                 "unresolved name '" + dep + "'"});
        for (const std::string& token : d.body_tokens)
            if (token == "sorry")
                diags.push_back({Severity::Warning, d.file, d.line, "sorry",
                                 "body of '" + d.name + "' contains 'sorry'"});
    }

    // Cycle detection runs over primary scratch declarations only; edges to
    // target names terminate there by construction.
    std::vector<std::size_t> primaries;
    std::map<std::string, std::size_t> node_of;  // name -> index into primaries
    for (std::size_t i = 0; i < decls.size(); ++i)
        if (is_primary[i]) {
            node_of[decls[i].name] = primaries.size();
            primaries.push_back(i);
        }
    std::vector<std::vector<std::size_t>> adj(primaries.size());
    for (std::size_t p = 0; p < primaries.size(); ++p)
        for (const std::string& dep : decls[primaries[p]].deps) {
            auto it = node_of.find(dep);
            if (it != node_of.end()) adj[p].push_back(it->second);
        }
    std::vector<bool> cyclic = cyclic_nodes(adj);
    for (std::size_t p = 0; p < primaries.size(); ++p)
        if (cyclic[p]) {
            const ToyDecl& d = decls[primaries[p]];
            diags.push_back({Severity::Error, d.file, d.line, "cycle",
                             "dependency cycle involving '" + d.name + "'"});
        }

    auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - start);
    return make_compile_result("toy", std::move(diags), elapsed);
}

}  // namespace ape
