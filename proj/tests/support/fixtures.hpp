#pragma once

// Shared builders for tests: contracts, scripted model turns, file trees and
// snapshot-history fixtures.

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ape/contract.hpp"
#include "ape/miner.hpp"
#include "ape/model_client.hpp"
#include "ape/store.hpp"

namespace ape_test {

using nlohmann::json;

inline void write_file(const std::filesystem::path& p, const std::string& bytes) {
    std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_tree(const std::filesystem::path& root,
                       const std::map<std::string, std::string>& files) {
    std::filesystem::create_directories(root);
    for (const auto& [rel, bytes] : files) write_file(root / rel, bytes);
}

/// Stores every file and publishes a manifest without touching disk trees.
inline std::string publish_tree(ape::ContentStore& store, const std::string& commit,
                                const std::string& toolchain,
                                const std::map<std::string, std::string>& files) {
    ape::VersionManifest m;
    m.commit = commit;
    m.toolchain = toolchain;
    for (const auto& [rel, bytes] : files) m.entries[rel] = store.put_bytes(bytes);
    return store.publish_manifest(m);
}

/// Minimal valid compile-only contract against an already-published
/// environment.
inline ape::TaskContract basic_contract(const std::string& id, const std::string& commit,
                                        const std::string& toolchain = "toy-0.1") {
    ape::TaskContract c;
    c.id = id;
    c.kind = ape::TaskKind::TheoremProving;
    c.env = {commit, toolchain, "toy"};
    c.objective.instruction = "Prove the stated theorem.";
    c.objective.target_file = "solution.toy";
    return c;
}

/// Dual-verification contract with a nested judgment template attached.
inline ape::TaskContract semantic_contract(const std::string& id, const std::string& commit,
                                           int judge_count = 3,
                                           const std::string& toolchain = "toy-0.1") {
    ape::TaskContract c = basic_contract(id, commit, toolchain);
    c.kind = ape::TaskKind::ProofEngineering;
    c.verification.require_semantic = true;
    c.verification.judge_count = judge_count;
    c.verification.success_rule = ape::SuccessRule::DualVerification;
    c.nested.push_back(ape::default_judgment_template(c.env));
    return c;
}

inline ape::ModelResponse say(const std::string& text) {
    ape::ModelResponse r;
    r.message = text;
    return r;
}

inline ape::ModelResponse call_tool(const std::string& name, json args,
                                    const std::string& text = "") {
    ape::ModelResponse r;
    r.message = text;
    r.tool_calls.push_back({"call-" + name, name, std::move(args)});
    return r;
}

inline ape::ModelResponse submit_response(json args = json::object()) {
    return call_tool("submit", std::move(args));
}

inline ape::ModelResponse with_usage(ape::ModelResponse r, std::uint64_t in, std::uint64_t out) {
    r.usage = {in, out};
    r.usage_explicit = true;
    return r;
}

/// What a cooperative judge submits.
inline ape::ModelResponse judge_submission(const std::string& decision,
                                           const std::string& rating = "good",
                                           const std::string& reasoning = "looks right") {
    json ratings;
    ratings["semantic_correctness"] = rating;
    ratings["requirement_alignment"] = rating;
    ratings["scope_control"] = rating;
    return submit_response(
        {{"decision", decision}, {"ratings", ratings}, {"reasoning", reasoning}});
}

/// One commit of a snapshot-history fixture.
struct SnapshotCommit {
    std::string id;
    std::string date;
    std::string message;
    std::map<std::string, std::string> tree;  // full tree at this commit
};

/// Writes <root>/history.json plus one tree directory per commit.
inline void write_snapshot_history(const std::filesystem::path& root,
                                   const std::vector<SnapshotCommit>& commits) {
    json hist = json::array();
    int n = 0;
    for (const SnapshotCommit& c : commits) {
        std::string tree_name = "t" + std::to_string(n++);
        hist.push_back({{"id", c.id}, {"date", c.date}, {"message", c.message}, {"tree", tree_name}});
        std::filesystem::create_directories(root / tree_name);
        write_tree(root / tree_name, c.tree);
    }
    write_file(root / "history.json", hist.dump(2) + "\n");
}

inline std::vector<std::string> read_lines(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) lines.push_back(line);
    return lines;
}

}  // namespace ape_test
