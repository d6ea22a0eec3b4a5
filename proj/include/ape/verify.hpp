#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ape/contract.hpp"
#include "ape/diagnostics.hpp"
#include "ape/errors.hpp"
#include "ape/workspace.hpp"

namespace ape {

class CheckerUnavailableError : public Error {
public:
    explicit CheckerUnavailableError(const std::string& id)
        : Error("checker-unavailable", "no checker registered for id '" + id + "'") {}
};

/// Compiles the scratch tree against the read-only target installation.
/// Implementations must be deterministic for fixed (scratch bytes, target
/// manifest) and must never write outside scratch.
class Checker {
public:
    virtual ~Checker() = default;
    virtual std::string id() const = 0;
    virtual CompileResult run(const WorkspaceSet& ws) = 0;
};

/// In-process checker for the bundled toy language: links every scratch
/// *.toy unit against the declaration names of the target's *.toy files.
class ToyChecker : public Checker {
public:
    explicit ToyChecker(std::string id = "toy") : id_(std::move(id)) {}
    std::string id() const override { return id_; }
    CompileResult run(const WorkspaceSet& ws) override;

private:
    std::string id_;
};

/// Invokes an external adapter command; this is how a production toolchain
/// plugs in. `{scratch}`, `{target}` and `{reference}` in the argument
/// template expand to absolute paths. The adapter reports diagnostics on
/// stdout as `file:line:severity:code:message` lines; other lines are
/// ignored. A nonzero exit without any reported error yields a synthetic
/// "checker-failed" error.
class SubprocessChecker : public Checker {
public:
    SubprocessChecker(std::string id, std::vector<std::string> command,
                      std::chrono::milliseconds timeout = std::chrono::milliseconds(120000));
    std::string id() const override { return id_; }
    CompileResult run(const WorkspaceSet& ws) override;  // throws TimeoutError on wall limit

private:
    std::string id_;
    std::vector<std::string> command_;
    std::chrono::milliseconds timeout_;
};

/// Maps CheckerId -> implementation; loadable from a checkers.json of the
/// form {"<id>": {"kind": "toy"}} or
/// {"<id>": {"kind": "subprocess", "command": [...], "timeout_ms": N}}.
class CheckerRegistry {
public:
    void register_checker(std::shared_ptr<Checker> checker);
    std::shared_ptr<Checker> find(const std::string& id) const;

    static CheckerRegistry with_default_toy();
    static CheckerRegistry from_file(const std::filesystem::path& checkers_json);

    /// Runs the contract's checker. Throws CheckerUnavailableError for an
    /// unregistered id; otherwise always returns a structured result.
    CompileResult compile(const WorkspaceSet& ws, const EnvironmentBinding& env) const;

    /// Applies the edit, then compiles. A denied write leaves the file
    /// untouched and throws AccessDeniedError; a failing compile leaves the
    /// edit applied so the agent can see its own breakage.
    CompileResult edit_and_verify(WorkspaceSet& ws, std::string_view path, std::string_view bytes,
                                  const EnvironmentBinding& env) const;

private:
    std::map<std::string, std::shared_ptr<Checker>> checkers_;
};

}  // namespace ape
