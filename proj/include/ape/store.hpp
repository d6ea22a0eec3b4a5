#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ape/contract.hpp"
#include "ape/errors.hpp"
#include "ape/hash.hpp"

namespace ape {

enum class BlobKind { Source, CompiledArtifact, Annotation };

struct ContentBlob {
    std::string bytes;  // immutable once stored; identity is the bytes alone
    BlobKind kind = BlobKind::Source;
};

/// Maps one pinned (commit, toolchain) to the content hashes of its files.
/// Entries are keyed by normalized relative path; std::map keeps the JSON
/// rendering sorted for stable diffs.
struct VersionManifest {
    std::string commit;
    std::string toolchain;
    std::map<std::string, ContentHash> entries;

    bool operator==(const VersionManifest&) const = default;
};

struct DedupStats {
    std::uint64_t total_instances = 0;  // manifest entries in scope
    std::uint64_t unique_blobs = 0;     // distinct hashes referenced
    std::uint64_t naive_bytes = 0;      // bytes if every instance were stored
    std::uint64_t stored_bytes = 0;     // bytes actually stored (distinct)
    double savings_ratio = 0.0;         // 1 - stored/naive; 0 when naive == 0
};

class DanglingHashError : public Error {
public:
    explicit DanglingHashError(const std::string& digest)
        : Error("dangling-hash", "manifest references unstored blob " + digest) {}
};

class ConflictingManifestError : public Error {
public:
    explicit ConflictingManifestError(const std::string& id)
        : Error("conflicting-manifest",
                "manifest '" + id + "' already published with different entries") {}
};

class UnknownManifestError : public Error {
public:
    explicit UnknownManifestError(const std::string& id)
        : Error("unknown-manifest", "no manifest '" + id + "' in store") {}
};

/// Content-addressable, append-only store for library files across pinned
/// versions. Layout: blobs/<first2>/<digest> plus
/// manifests/<commit>.<toolchain>.json. All writes go through
/// write-temp-then-rename, so concurrent readers never observe partial
/// content and manifest publication is atomic.
class ContentStore {
public:
    explicit ContentStore(std::filesystem::path root);

    const std::filesystem::path& root() const { return root_; }

    /// Idempotent: identical bytes store one blob and return the same hash.
    ContentHash put_blob(const ContentBlob& blob);
    ContentHash put_bytes(std::string_view bytes, BlobKind kind = BlobKind::Source);

    bool has_blob(const ContentHash& hash) const;
    std::optional<std::string> get_blob(const ContentHash& hash) const;
    std::uint64_t blob_size(const ContentHash& hash) const;

    /// Number of blob files physically present (the brute-force oracle for
    /// this is the cardinality of the set of distinct byte sequences put).
    std::uint64_t stored_blob_count() const;

    static std::string manifest_id(const std::string& commit, const std::string& toolchain);

    /// Publishes atomically. Throws DanglingHashError when an entry hash is
    /// not stored, ConflictingManifestError when (commit, toolchain) exists
    /// with different entries. Republishing identical content is a no-op.
    std::string publish_manifest(const VersionManifest& m);

    bool has_manifest(const std::string& commit, const std::string& toolchain) const;
    bool has_manifest_id(const std::string& id) const;
    std::optional<VersionManifest> find_manifest(const std::string& commit,
                                                 const std::string& toolchain) const;
    VersionManifest load_manifest(const std::string& id) const;  // throws UnknownManifestError
    std::vector<std::string> list_manifest_ids() const;

    /// Writes the manifest's tree under `dest` (which must not exist or be
    /// empty) and marks every file and directory read-only. Returns the file
    /// count. Same manifest => byte-identical trees.
    std::size_t materialize_version(const std::string& commit, const std::string& toolchain,
                                    const std::filesystem::path& dest) const;
    std::size_t materialize_manifest(const std::string& id, const std::filesystem::path& dest) const;

    /// Walks `src`, stores every regular file, publishes the manifest.
    /// Returns (manifest id, file count).
    std::pair<std::string, std::size_t> ingest_tree(const std::filesystem::path& src,
                                                    const std::string& commit,
                                                    const std::string& toolchain);

    DedupStats dedup_stats() const;
    std::map<std::string, DedupStats> dedup_stats_by_toolchain() const;

    /// Adapter for validate_contract.
    ManifestLookup lookup() const;

private:
    std::filesystem::path blob_path(const ContentHash& hash) const;
    std::filesystem::path manifest_path(const std::string& id) const;
    DedupStats stats_over(const std::vector<std::string>& ids) const;

    std::filesystem::path root_;
};

/// Restores write permission recursively; used before removing materialized
/// (read-only) trees.
void make_tree_writable(const std::filesystem::path& root);

}  // namespace ape
