#pragma once

#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "ape/diagnostics.hpp"

namespace ape {

/// One declaration of the toy proof language. The language exists so the
/// harness has a checker with real dependency semantics that runs in
/// microseconds; a production toolchain plugs in through the same interface.
///
/// Grammar, one declaration per line:
///   (def|thm) <name> : needs <csv-names> ; <body tokens>
/// The needs list may be empty. `--` starts a line comment; `/-` ... `-/`
/// is a (nesting) block comment.
struct ToyDecl {
    std::string keyword;  // "def" or "thm"
    std::string name;
    std::vector<std::string> deps;
    std::vector<std::string> body_tokens;
    std::string file;
    int line = 1;

    bool operator==(const ToyDecl&) const = default;
};

struct ToyUnit {
    std::vector<ToyDecl> declarations;
    std::vector<Diagnostic> parse_errors;
};

bool toy_identifier_ok(std::string_view s);

/// Replaces comments with spaces, preserving line boundaries so diagnostics
/// keep their original line numbers. An unterminated block comment is left
/// for the parser to flag.
std::string strip_toy_comments(std::string_view source);

ToyUnit parse_toy_unit(const std::string& file, const std::string& source);

/// Declaration names of a source, ignoring malformed lines. Used to build
/// the linkable name set of a materialized target tree.
std::set<std::string> toy_decl_names(const std::string& source);

/// Full semantic check of scratch sources against a target name set.
/// Diagnostics: parse errors; duplicate-name (a later scratch declaration,
/// or any scratch declaration shadowing target); unresolved-name (dep in
/// neither target nor scratch); cycle (scratch declaration on a dependency
/// cycle); Warning per `sorry` body token. ok ⇔ no errors.
CompileResult toy_check(const std::map<std::string, std::string>& unit_sources,
                        const std::set<std::string>& target_decls);

}  // namespace ape
