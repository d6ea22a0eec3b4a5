#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ape/contract.hpp"
#include "ape/errors.hpp"
#include "ape/store.hpp"

namespace ape {

enum class AccessMode { Read, Write };
enum class AccessVerdict { Allow, DenyBlocked, DenyReadOnly };

std::string to_string(AccessMode m);
std::string to_string(AccessVerdict v);

struct AccessDecision {
    std::string path;  // normalized, rooted at scratch/target/reference
    AccessMode mode = AccessMode::Read;
    AccessVerdict verdict = AccessVerdict::Allow;
    std::string matched_pattern;  // the boundary pattern that fired, if any

    bool allowed() const { return verdict == AccessVerdict::Allow; }
};

class PathEscapeError : public Error {
public:
    explicit PathEscapeError(const std::string& path)
        : Error("path-escape", "path escapes the workspace roots: '" + path + "'") {}
};

class AccessDeniedError : public Error {
public:
    explicit AccessDeniedError(AccessDecision d)
        : Error("access-denied", to_string(d.mode) + " of '" + d.path + "' denied (" +
                                     to_string(d.verdict) +
                                     (d.matched_pattern.empty() ? "" : ", pattern '" + d.matched_pattern + "'") +
                                     ")"),
          decision(std::move(d)) {}
    AccessDecision decision;
};

/// The scratch/target/reference triple for one task execution. Boundary
/// checks are lexical (normalized paths against the contract's globs);
/// target and reference trees additionally carry no write permission so a
/// direct OS write fails even when the harness API is bypassed.
struct WorkspaceSet {
    std::filesystem::path root;  // runs/<run-id>/<task-id>
    std::filesystem::path scratch;
    std::filesystem::path target;
    std::optional<std::filesystem::path> reference;
    BoundarySpec boundaries;
    std::string manifest_id;  // provenance of the target tree
    std::string task_id;
    std::string run_id;
    std::vector<AccessDecision> audit;
};

/// Lexically normalizes an agent-supplied path: resolves `.`/`..`, rejects
/// absolute paths and any traversal above the workspace root. The result
/// starts with `scratch/`, `target/` or `reference/` (or equals one of
/// them); anything else throws PathEscapeError.
std::string normalize_rel(std::string_view path);

/// Pure boundary decision, no filesystem access and no logging. Precedence:
/// blocked patterns, then write-protection of target/reference, then
/// read_only patterns, then Allow (writes only under writable_root).
/// Patterns match the full rooted path or the root-relative remainder.
AccessDecision decide_access(const WorkspaceSet& ws, std::string_view path, AccessMode mode);

/// decide_access plus an audit log entry on ws.
AccessDecision check_access(WorkspaceSet& ws, std::string_view path, AccessMode mode);

struct DirEntry {
    std::string name;
    bool is_dir = false;
    bool operator==(const DirEntry&) const = default;
};

/// Sorted listing of one directory with blocked entries filtered out. The
/// files stay on disk for the checker's closure; they are only invisible to
/// the agent-facing API.
std::vector<DirEntry> list_visible(WorkspaceSet& ws, std::string_view dir_path);

/// Recursive visible file paths under `dir_path`, sorted.
std::vector<std::string> list_visible_tree(WorkspaceSet& ws, std::string_view dir_path);

std::string read_workspace_file(WorkspaceSet& ws, std::string_view path);
void write_workspace_file(WorkspaceSet& ws, std::string_view path, std::string_view bytes);

/// Maps a normalized rooted path to its on-disk location.
std::filesystem::path resolve_path(const WorkspaceSet& ws, std::string_view normalized);

class WorkspaceManager {
public:
    WorkspaceManager(ContentStore& store, std::filesystem::path runs_root);

    /// Materializes target (and any reference trees named by the
    /// objective's structured_fields), creates an empty scratch, seeds the
    /// target_file basename when the contract names one, and writes the
    /// workspace.json audit skeleton.
    WorkspaceSet init_workspaces(const TaskContract& c, const std::string& run_id);

    /// Content-addressed snapshot of scratch; returns a store manifest id
    /// that materializes to the identical tree. Idempotent per content.
    std::string snapshot_scratch(const WorkspaceSet& ws);

    /// Rewrites workspace.json with the accumulated audit log.
    void flush_audit(const WorkspaceSet& ws) const;

    /// Removes a workspace tree, restoring write bits first.
    static void destroy(WorkspaceSet& ws);

    ContentStore& store() { return store_; }
    const std::filesystem::path& runs_root() const { return runs_root_; }

private:
    ContentStore& store_;
    std::filesystem::path runs_root_;
};

}  // namespace ape
