#include "ape/diagnostics.hpp"

#include <algorithm>
#include <sstream>

namespace ape {

const char* to_string(Severity s) {
    return s == Severity::Error ? "error" : "warning";
}

void sort_diagnostics(std::vector<Diagnostic>& diags) {
    std::stable_sort(diags.begin(), diags.end(), [](const Diagnostic& a, const Diagnostic& b) {
        if (a.file != b.file) return a.file < b.file;
        return a.line < b.line;
    });
}

CompileResult make_compile_result(std::string checker, std::vector<Diagnostic> diags,
                                  std::chrono::milliseconds elapsed) {
    sort_diagnostics(diags);
    CompileResult result;
    result.checker = std::move(checker);
    result.diagnostics = std::move(diags);
    result.elapsed = elapsed;
    result.ok = std::none_of(result.diagnostics.begin(), result.diagnostics.end(),
                             [](const Diagnostic& d) { return d.severity == Severity::Error; });
    return result;
}

nlohmann::json to_json(const Diagnostic& d) {
    return {{"severity", to_string(d.severity)},
            {"file", d.file},
            {"line", d.line},
            {"code", d.code},
            {"message", d.message}};
}

Diagnostic diagnostic_from_json(const nlohmann::json& j) {
    Diagnostic d;
    d.severity = j.at("severity").get<std::string>() == "error" ? Severity::Error : Severity::Warning;
    d.file = j.at("file").get<std::string>();
    d.line = j.at("line").get<int>();
    d.code = j.at("code").get<std::string>();
    d.message = j.at("message").get<std::string>();
    return d;
}

nlohmann::json to_json(const CompileResult& result, bool include_elapsed) {
    nlohmann::json diags = nlohmann::json::array();
    for (const auto& d : result.diagnostics) diags.push_back(to_json(d));
    nlohmann::json j = {{"ok", result.ok}, {"checker", result.checker}, {"diagnostics", diags}};
    if (include_elapsed) j["elapsed_ms"] = result.elapsed.count();
    return j;
}

std::string render_diagnostics(const CompileResult& result, size_t cap) {
    std::ostringstream out;
    out << (result.ok ? "ok" : "failed") << " (" << result.checker << ")";
    size_t shown = 0;
    for (const auto& d : result.diagnostics) {
        if (shown == cap) {
            out << "\n... " << (result.diagnostics.size() - cap) << " more diagnostics omitted";
            break;
        }
        out << "\n" << d.file << ":" << d.line << ": " << to_string(d.severity) << ": " << d.code
            << ": " << d.message;
        ++shown;
    }
    return out.str();
}

}  // namespace ape
