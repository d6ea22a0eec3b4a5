#pragma once

#include <chrono>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ape {

enum class Severity { Error, Warning };

const char* to_string(Severity s);

/// One checker finding. `file` is a workspace-relative path ("scratch/..."
/// or "target/...") so results compare byte-identical across runs.
struct Diagnostic {
    Severity severity = Severity::Error;
    std::string file;
    int line = 1;  // 1-based
    std::string code;
    std::string message;

    bool operator==(const Diagnostic&) const = default;
};

struct CompileResult {
    bool ok = true;  // invariant: ok <=> no Error-severity diagnostics
    std::vector<Diagnostic> diagnostics;
    std::chrono::milliseconds elapsed{0};
    std::string checker;
};

/// Stable (file, line) order; emission order breaks ties.
void sort_diagnostics(std::vector<Diagnostic>& diags);

/// Builds a result with diagnostics sorted and `ok` derived.
CompileResult make_compile_result(std::string checker, std::vector<Diagnostic> diags,
                                  std::chrono::milliseconds elapsed = std::chrono::milliseconds{0});

/// `include_elapsed=false` yields the canonical form used by determinism
/// checks (compile is pure modulo wall time).
nlohmann::json to_json(const CompileResult& result, bool include_elapsed = true);

nlohmann::json to_json(const Diagnostic& d);
Diagnostic diagnostic_from_json(const nlohmann::json& j);

/// Agent-facing rendering, capped at `cap` diagnostics.
std::string render_diagnostics(const CompileResult& result, size_t cap);

}  // namespace ape
