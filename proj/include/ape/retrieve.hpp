#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ape/contract.hpp"
#include "ape/errors.hpp"
#include "ape/hash.hpp"
#include "ape/store.hpp"

namespace ape {

struct Declaration {
    std::string name;
    std::string kind;  // "def" or "thm"
    std::string signature;
    std::string file;  // location within the queried version
    ContentHash content_hash;

    bool operator==(const Declaration&) const = default;
};

struct AnnotationRecord {
    ContentHash decl_hash;
    std::string description;
    std::vector<double> embedding;
};

enum class SearchMode { Exact, Keyword, Semantic };

std::string to_string(SearchMode m);
SearchMode search_mode_from_string(const std::string& s);

struct SearchHit {
    Declaration decl;
    double score = 0.0;  // in [0,1]
    SearchMode mode = SearchMode::Exact;
};

class VersionNotIndexedError : public Error {
public:
    explicit VersionNotIndexedError(const std::string& id)
        : Error("version-not-indexed", "no index for version '" + id + "'") {}
};

class EmptyQueryError : public Error {
public:
    EmptyQueryError() : Error("empty-query", "search query is empty") {}
};

class EmbedderUnavailableError : public Error {
public:
    explicit EmbedderUnavailableError(const std::string& why)
        : Error("embedder-unavailable", why) {}
};

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::size_t dimension() const = 0;
    virtual std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) = 0;
};

/// Deterministic stand-in: each text seeds a PRNG whose draws form a unit
/// vector, so identical text always embeds identically and no network is
/// involved.
class MockEmbedder : public Embedder {
public:
    explicit MockEmbedder(std::size_t dimension = 64) : dimension_(dimension) {}
    std::size_t dimension() const override { return dimension_; }
    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override;

private:
    std::size_t dimension_;
};

/// POST {"texts": [...]} to an embedding endpoint, expecting
/// {"vectors": [[...], ...]}.
class HttpEmbedder : public Embedder {
public:
    HttpEmbedder(std::string host, int port, std::string path = "/embed",
                 std::size_t dimension = 64);
    std::size_t dimension() const override { return dimension_; }
    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override;

private:
    std::string host_;
    int port_;
    std::string path_;
    std::size_t dimension_;
};

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

/// Canonical rendering that defines declaration identity; textually equal
/// declarations in different versions hash identically.
std::string canonical_decl_text(const std::string& kind, const std::string& name,
                                const std::string& signature);

struct IndexReport {
    std::string index_id;  // = manifest id
    std::size_t decl_instances = 0;
    std::size_t unique_added = 0;   // new records written to decls.jsonl
    std::size_t unique_reused = 0;  // hashes already known from other versions
    std::vector<std::string> parse_failures;
};

struct AnnotationOutcome {
    std::size_t new_records = 0;
    std::size_t skipped = 0;  // already annotated
    std::size_t failed = 0;
    double cost = 0.0;  // new_records * per_item cost
};

struct AnnotationCosts {
    std::uint64_t instance_count = 0;
    std::uint64_t unique_count = 0;
    double per_item = 0.0;
    double naive_cost = 0.0;   // instance_count * per_item
    double actual_cost = 0.0;  // unique_count * per_item
    double ratio = 0.0;        // actual / naive, 0 when naive is 0
};

/// Declaration index over store versions with exact, keyword and semantic
/// search. Layout under the index root: decls.jsonl (one record per unique
/// declaration), index/<manifest-id>.jsonl (hash + file per instance),
/// annotations.jsonl (descriptions + embeddings).
class RetrievalService {
public:
    using AnnotationRunner =
        std::function<std::optional<std::string>(const TaskContract&)>;

    RetrievalService(ContentStore& store, std::filesystem::path index_root,
                     std::shared_ptr<Embedder> embedder);

    IndexReport build_index(const std::string& manifest_id);
    bool is_indexed(const std::string& manifest_id) const;
    std::vector<std::string> indexed_versions() const;
    std::vector<Declaration> declarations(const std::string& manifest_id) const;

    std::vector<SearchHit> search(const std::string& query, SearchMode mode,
                                  const std::string& manifest_id, std::size_t k = 5);

    /// Runs one LibraryAnnotation contract per unannotated unique
    /// declaration of the version; already-annotated hashes are skipped, so
    /// repeated calls and shared declarations never pay twice.
    AnnotationOutcome annotate_library(const std::string& manifest_id,
                                       const AnnotationRunner& run_contract,
                                       double per_item_cost = 0.001);

    AnnotationCosts annotation_costs(const std::vector<std::string>& manifest_ids,
                                     double per_item_cost = 0.001) const;

    std::size_t annotation_count() const { return annotations_.size(); }
    std::optional<AnnotationRecord> annotation_for(const ContentHash& hash) const;

    /// The contract annotate_library executes for one declaration.
    static TaskContract annotation_contract(const Declaration& decl,
                                            const EnvironmentBinding& env);

private:
    struct DeclCore {
        std::string name;
        std::string kind;
        std::string signature;
    };

    void load();
    void append_decl(const std::string& hash_hex, const DeclCore& core);
    void append_annotation(const AnnotationRecord& record);
    std::vector<double> embedding_of(const std::string& hash_hex, const DeclCore& core);

    ContentStore& store_;
    std::filesystem::path root_;
    std::shared_ptr<Embedder> embedder_;
    std::map<std::string, DeclCore> decls_;  // hash hex -> core
    std::map<std::string, std::vector<std::pair<std::string, std::string>>>
        index_;  // manifest id -> (hash hex, file)
    std::map<std::string, AnnotationRecord> annotations_;  // hash hex -> record
    std::map<std::string, std::vector<double>> embed_cache_;
};

}  // namespace ape
