#include "ape/workspace.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ape/glob.hpp"
#include "ape/hash.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ape {
namespace {

bool known_root(const WorkspaceSet& ws, std::string_view root) {
    if (root == "scratch" || root == "target") return true;
    return root == "reference" && ws.reference.has_value();
}

std::string read_disk_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoFailure("cannot open " + p.string());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

}  // namespace

std::string to_string(AccessMode m) { return m == AccessMode::Read ? "read" : "write"; }

std::string to_string(AccessVerdict v) {
    switch (v) {
        case AccessVerdict::Allow: return "allow";
        case AccessVerdict::DenyBlocked: return "deny-blocked";
        case AccessVerdict::DenyReadOnly: return "deny-read-only";
    }
    return "allow";
}

std::string normalize_rel(std::string_view path) {
    if (!path.empty() && path.front() == '/') throw PathEscapeError(std::string(path));
    std::vector<std::string> stack;
    for (const std::string& seg : split_path_segments(path)) {
        if (seg.empty() || seg == ".") continue;
        if (seg == "..") {
            if (stack.empty()) throw PathEscapeError(std::string(path));
            stack.pop_back();
            continue;
        }
        stack.push_back(seg);
    }
    if (stack.empty()) throw PathEscapeError(std::string(path));
    std::string out = stack.front();
    for (std::size_t i = 1; i < stack.size(); ++i) out += "/" + stack[i];
    return out;
}

AccessDecision decide_access(const WorkspaceSet& ws, std::string_view path, AccessMode mode) {
    std::string norm = normalize_rel(path);
    std::size_t slash = norm.find('/');
    std::string root = slash == std::string::npos ? norm : norm.substr(0, slash);
    std::string rel = slash == std::string::npos ? std::string() : norm.substr(slash + 1);
    if (!known_root(ws, root)) throw PathEscapeError(std::string(path));

    auto first_match = [&](const std::vector<std::string>& patterns) -> const std::string* {
        for (const std::string& p : patterns)
            if (glob_match(p, norm) || (!rel.empty() && glob_match(p, rel))) return &p;
        return nullptr;
    };

    AccessDecision d{norm, mode, AccessVerdict::Allow, ""};
    if (const std::string* p = first_match(ws.boundaries.blocked)) {
        d.verdict = AccessVerdict::DenyBlocked;
        d.matched_pattern = *p;
        return d;
    }
    if (mode == AccessMode::Write) {
        if (root != ws.boundaries.writable_root) {
            d.verdict = AccessVerdict::DenyReadOnly;
            return d;
        }
        if (const std::string* p = first_match(ws.boundaries.read_only)) {
            d.verdict = AccessVerdict::DenyReadOnly;
            d.matched_pattern = *p;
            return d;
        }
    }
    return d;
}

AccessDecision check_access(WorkspaceSet& ws, std::string_view path, AccessMode mode) {
    AccessDecision d = decide_access(ws, path, mode);
    ws.audit.push_back(d);
    return d;
}

fs::path resolve_path(const WorkspaceSet& ws, std::string_view normalized) {
    std::string norm(normalized);
    std::size_t slash = norm.find('/');
    std::string root = slash == std::string::npos ? norm : norm.substr(0, slash);
    std::string rel = slash == std::string::npos ? std::string() : norm.substr(slash + 1);
    fs::path base;
    if (root == "scratch")
        base = ws.scratch;
    else if (root == "target")
        base = ws.target;
    else if (root == "reference" && ws.reference)
        base = *ws.reference;
    else
        throw PathEscapeError(norm);
    return rel.empty() ? base : base / fs::path(rel);
}

std::vector<DirEntry> list_visible(WorkspaceSet& ws, std::string_view dir_path) {
    AccessDecision d = check_access(ws, dir_path, AccessMode::Read);
    if (!d.allowed()) throw AccessDeniedError(d);
    fs::path dir = resolve_path(ws, d.path);
    if (!fs::is_directory(dir)) throw IoFailure("not a directory: " + d.path);

    std::vector<DirEntry> entries;
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::string child = d.path + "/" + entry.path().filename().string();
        // Entries the boundary spec blocks are invisible, not just denied.
        if (decide_access(ws, child, AccessMode::Read).verdict == AccessVerdict::DenyBlocked)
            continue;
        entries.push_back({entry.path().filename().string(), entry.is_directory()});
    }
    std::sort(entries.begin(), entries.end(),
              [](const DirEntry& a, const DirEntry& b) { return a.name < b.name; });
    return entries;
}

std::vector<std::string> list_visible_tree(WorkspaceSet& ws, std::string_view dir_path) {
    std::vector<std::string> files;
    std::vector<std::string> pending{normalize_rel(dir_path)};
    while (!pending.empty()) {
        std::string dir = std::move(pending.back());
        pending.pop_back();
        for (const DirEntry& entry : list_visible(ws, dir)) {
            std::string child = dir + "/" + entry.name;
            if (entry.is_dir)
                pending.push_back(child);
            else
                files.push_back(child);
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

std::string read_workspace_file(WorkspaceSet& ws, std::string_view path) {
    AccessDecision d = check_access(ws, path, AccessMode::Read);
    if (!d.allowed()) throw AccessDeniedError(d);
    fs::path p = resolve_path(ws, d.path);
    if (!fs::is_regular_file(p)) throw IoFailure("no such file: " + d.path);
    return read_disk_file(p);
}

void write_workspace_file(WorkspaceSet& ws, std::string_view path, std::string_view bytes) {
    AccessDecision d = check_access(ws, path, AccessMode::Write);
    if (!d.allowed()) throw AccessDeniedError(d);
    fs::path p = resolve_path(ws, d.path);
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("cannot write " + d.path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoFailure("short write to " + d.path);
}

WorkspaceManager::WorkspaceManager(ContentStore& store, fs::path runs_root)
    : store_(store), runs_root_(std::move(runs_root)) {
    fs::create_directories(runs_root_);
}

WorkspaceSet WorkspaceManager::init_workspaces(const TaskContract& c, const std::string& run_id) {
    fs::path root = runs_root_ / run_id / c.id;
    if (fs::exists(root)) throw IoFailure("workspace already initialized: " + root.string());
    fs::create_directories(root);

    WorkspaceSet ws;
    ws.root = root;
    ws.scratch = root / "scratch";
    ws.target = root / "target";
    ws.boundaries = c.boundaries;
    ws.task_id = c.id;
    ws.run_id = run_id;
    ws.manifest_id = ContentStore::manifest_id(c.env.commit, c.env.toolchain);

    store_.materialize_version(c.env.commit, c.env.toolchain, ws.target);
    fs::create_directories(ws.scratch);

    // Reference trees come from snapshot manifests named in the objective:
    // "reference" materializes at the reference root, "reference_<sub>"
    // under reference/<sub>.
    for (const auto& [key, value] : c.objective.structured_fields) {
        fs::path dest;
        if (key == "reference")
            dest = root / "reference";
        else if (key.rfind("reference_", 0) == 0)
            dest = root / "reference" / key.substr(10);
        else
            continue;
        if (!store_.has_manifest_id(value)) continue;  // plain-text field, not a snapshot
        store_.materialize_manifest(value, dest);
        ws.reference = root / "reference";
    }

    if (c.objective.target_file) {
        fs::path seed = fs::path(*c.objective.target_file).filename();
        std::ofstream out(ws.scratch / seed, std::ios::binary);
        if (!out) throw IoFailure("cannot seed scratch working file");
    }

    flush_audit(ws);
    return ws;
}

std::string WorkspaceManager::snapshot_scratch(const WorkspaceSet& ws) {
    VersionManifest m;
    m.toolchain = "snapshot";
    for (const auto& entry : fs::recursive_directory_iterator(ws.scratch)) {
        if (!entry.is_regular_file()) continue;
        std::string rel = fs::relative(entry.path(), ws.scratch).generic_string();
        m.entries.emplace(rel, store_.put_bytes(read_disk_file(entry.path())));
    }
    // The snapshot's "commit" is a hash of its own entry table, so equal
    // trees share one manifest and the id is stable across runs.
    std::string acc;
    for (const auto& [rel, hash] : m.entries) acc += rel + ":" + hash.digest_hex + "\n";
    m.commit = sha256_hex(acc).substr(0, 40);
    return store_.publish_manifest(m);
}

void WorkspaceManager::flush_audit(const WorkspaceSet& ws) const {
    json decisions = json::array();
    for (const AccessDecision& d : ws.audit)
        decisions.push_back({{"path", d.path},
                             {"mode", to_string(d.mode)},
                             {"verdict", to_string(d.verdict)},
                             {"pattern", d.matched_pattern}});
    json doc = {{"task_id", ws.task_id},
                {"run_id", ws.run_id},
                {"manifest", ws.manifest_id},
                {"boundaries",
                 {{"read_only", ws.boundaries.read_only},
                  {"blocked", ws.boundaries.blocked},
                  {"writable_root", ws.boundaries.writable_root}}},
                {"has_reference", ws.reference.has_value()},
                {"decisions", decisions}};
    std::ofstream out(ws.root / "workspace.json", std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("cannot write workspace.json");
    out << doc.dump(2) << "\n";
}

void WorkspaceManager::destroy(WorkspaceSet& ws) {
    make_tree_writable(ws.root);
    fs::remove_all(ws.root);
}

}  // namespace ape
