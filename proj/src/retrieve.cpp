#include "ape/retrieve.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "ape/toy.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ape {
namespace {

std::set<std::string> alnum_tokens(const std::string& text) {
    std::set<std::string> tokens;
    std::string current;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else if (!current.empty()) {
            tokens.insert(current);
            current.clear();
        }
    }
    if (!current.empty()) tokens.insert(current);
    return tokens;
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
    if (a.empty() && b.empty()) return 0.0;
    std::size_t inter = 0;
    for (const std::string& t : a) inter += b.count(t);
    std::size_t uni = a.size() + b.size() - inter;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::string toy_signature(const ToyDecl& d) {
    std::string sig = "needs ";
    for (std::size_t i = 0; i < d.deps.size(); ++i) {
        if (i) sig += ", ";
        sig += d.deps[i];
    }
    sig += " ;";
    for (const std::string& t : d.body_tokens) sig += " " + t;
    return sig;
}

void append_jsonl(const fs::path& p, const json& doc) {
    std::ofstream out(p, std::ios::binary | std::ios::app);
    if (!out) throw IoFailure("cannot append to " + p.string());
    out << doc.dump() << "\n";
}

}  // namespace

std::string to_string(SearchMode m) {
    switch (m) {
        case SearchMode::Exact: return "exact";
        case SearchMode::Keyword: return "keyword";
        case SearchMode::Semantic: return "semantic";
    }
    return "exact";
}

SearchMode search_mode_from_string(const std::string& s) {
    if (s == "exact") return SearchMode::Exact;
    if (s == "keyword") return SearchMode::Keyword;
    if (s == "semantic") return SearchMode::Semantic;
    throw SchemaError("unknown search mode '" + s + "'");
}

std::vector<std::vector<double>> MockEmbedder::embed(const std::vector<std::string>& texts) {
    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    for (const std::string& text : texts) {
        std::mt19937_64 rng(seed_from_text(text));
        std::vector<double> v(dimension_);
        double norm_sq = 0.0;
        for (double& x : v) {
            // Uniform in [-1, 1); avoids distribution classes whose draw
            // sequences the standard leaves unspecified.
            x = std::ldexp(static_cast<double>(rng() >> 11), -52) - 1.0;
            norm_sq += x * x;
        }
        double norm = std::sqrt(norm_sq);
        if (norm < 1e-12) {
            v[0] = 1.0;
        } else {
            for (double& x : v) x /= norm;
        }
        out.push_back(std::move(v));
    }
    return out;
}

HttpEmbedder::HttpEmbedder(std::string host, int port, std::string path, std::size_t dimension)
    : host_(std::move(host)), port_(port), path_(std::move(path)), dimension_(dimension) {}

std::vector<std::vector<double>> HttpEmbedder::embed(const std::vector<std::string>& texts) {
    httplib::Client client(host_, port_);
    client.set_read_timeout(30, 0);
    json body = {{"texts", texts}};
    auto res = client.Post(path_, body.dump(), "application/json");
    if (!res) throw EmbedderUnavailableError("cannot reach embedder at " + host_ + ":" +
                                             std::to_string(port_));
    if (res->status != 200)
        throw EmbedderUnavailableError("embedder returned status " + std::to_string(res->status));
    json doc;
    try {
        doc = json::parse(res->body);
    } catch (const json::parse_error& e) {
        throw EmbedderUnavailableError(std::string("embedder sent invalid JSON: ") + e.what());
    }
    auto vectors = doc.at("vectors").get<std::vector<std::vector<double>>>();
    if (vectors.size() != texts.size())
        throw EmbedderUnavailableError("embedder returned " + std::to_string(vectors.size()) +
                                       " vectors for " + std::to_string(texts.size()) + " texts");
    for (const auto& v : vectors)
        if (v.size() != dimension_)
            throw EmbedderUnavailableError("embedder dimension mismatch");
    return vectors;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    std::size_t n = std::min(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na <= 0.0 || nb <= 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::string canonical_decl_text(const std::string& kind, const std::string& name,
                                const std::string& signature) {
    return kind + " " + name + " : " + signature;
}

RetrievalService::RetrievalService(ContentStore& store, fs::path index_root,
                                   std::shared_ptr<Embedder> embedder)
    : store_(store), root_(std::move(index_root)), embedder_(std::move(embedder)) {
    fs::create_directories(root_ / "index");
    load();
}

void RetrievalService::load() {
    auto each_line = [](const fs::path& p, const std::function<void(const json&)>& fn) {
        if (!fs::exists(p)) return;
        std::ifstream in(p, std::ios::binary);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            fn(json::parse(line));
        }
    };
    each_line(root_ / "decls.jsonl", [&](const json& doc) {
        decls_[doc.at("hash").get<std::string>()] = {doc.at("name").get<std::string>(),
                                                     doc.at("kind").get<std::string>(),
                                                     doc.at("signature").get<std::string>()};
    });
    each_line(root_ / "annotations.jsonl", [&](const json& doc) {
        AnnotationRecord r;
        r.decl_hash = ContentHash{doc.at("hash").get<std::string>()};
        r.description = doc.at("description").get<std::string>();
        r.embedding = doc.at("embedding").get<std::vector<double>>();
        annotations_[r.decl_hash.digest_hex] = std::move(r);
    });
    if (fs::is_directory(root_ / "index"))
        for (const auto& entry : fs::directory_iterator(root_ / "index")) {
            if (!entry.is_regular_file() || entry.path().extension() != ".jsonl") continue;
            std::string id = entry.path().stem().string();
            auto& rows = index_[id];
            each_line(entry.path(), [&](const json& doc) {
                rows.emplace_back(doc.at("hash").get<std::string>(),
                                  doc.at("file").get<std::string>());
            });
        }
}

void RetrievalService::append_decl(const std::string& hash_hex, const DeclCore& core) {
    append_jsonl(root_ / "decls.jsonl", {{"hash", hash_hex},
                                         {"name", core.name},
                                         {"kind", core.kind},
                                         {"signature", core.signature}});
}

void RetrievalService::append_annotation(const AnnotationRecord& record) {
    append_jsonl(root_ / "annotations.jsonl", {{"hash", record.decl_hash.digest_hex},
                                               {"description", record.description},
                                               {"embedding", record.embedding}});
}

IndexReport RetrievalService::build_index(const std::string& manifest_id) {
    VersionManifest manifest = store_.load_manifest(manifest_id);  // UnknownManifestError
    IndexReport report;
    report.index_id = manifest_id;

    std::vector<std::pair<std::string, std::string>> rows;
    for (const auto& [path, hash] : manifest.entries) {
        if (fs::path(path).extension() != ".toy") continue;
        auto bytes = store_.get_blob(hash);
        if (!bytes) throw DanglingHashError(hash.digest_hex);
        ToyUnit unit = parse_toy_unit(path, *bytes);
        for (const Diagnostic& d : unit.parse_errors)
            report.parse_failures.push_back(path + ":" + std::to_string(d.line) + ": " + d.message);
        for (const ToyDecl& decl : unit.declarations) {
            DeclCore core{decl.name, decl.keyword, toy_signature(decl)};
            std::string hex =
                sha256_hex(canonical_decl_text(core.kind, core.name, core.signature));
            ++report.decl_instances;
            auto [it, inserted] = decls_.emplace(hex, core);
            if (inserted) {
                append_decl(hex, core);
                ++report.unique_added;
            } else {
                ++report.unique_reused;
            }
            rows.emplace_back(hex, path);
        }
    }

    fs::path index_file = root_ / "index" / (manifest_id + ".jsonl");
    std::ofstream out(index_file, std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("cannot write " + index_file.string());
    for (const auto& [hex, file] : rows) out << json{{"hash", hex}, {"file", file}}.dump() << "\n";
    index_[manifest_id] = std::move(rows);
    return report;
}

bool RetrievalService::is_indexed(const std::string& manifest_id) const {
    return index_.count(manifest_id) > 0;
}

std::vector<std::string> RetrievalService::indexed_versions() const {
    std::vector<std::string> ids;
    for (const auto& [id, rows] : index_) ids.push_back(id);
    return ids;
}

std::vector<Declaration> RetrievalService::declarations(const std::string& manifest_id) const {
    auto it = index_.find(manifest_id);
    if (it == index_.end()) throw VersionNotIndexedError(manifest_id);
    std::vector<Declaration> out;
    for (const auto& [hex, file] : it->second) {
        const DeclCore& core = decls_.at(hex);
        out.push_back({core.name, core.kind, core.signature, file, ContentHash{hex}});
    }
    return out;
}

std::vector<double> RetrievalService::embedding_of(const std::string& hash_hex,
                                                   const DeclCore& core) {
    auto ann = annotations_.find(hash_hex);
    if (ann != annotations_.end()) return ann->second.embedding;
    auto cached = embed_cache_.find(hash_hex);
    if (cached != embed_cache_.end()) return cached->second;
    std::vector<double> v =
        embedder_->embed({canonical_decl_text(core.kind, core.name, core.signature)})[0];
    embed_cache_[hash_hex] = v;
    return v;
}

std::vector<SearchHit> RetrievalService::search(const std::string& query, SearchMode mode,
                                                const std::string& manifest_id, std::size_t k) {
    std::string trimmed = query;
    trimmed.erase(0, trimmed.find_first_not_of(" \t\r\n"));
    if (!trimmed.empty()) trimmed.erase(trimmed.find_last_not_of(" \t\r\n") + 1);
    if (trimmed.empty()) throw EmptyQueryError();
    if (k == 0) k = 1;

    std::vector<Declaration> decls = declarations(manifest_id);  // VersionNotIndexedError
    std::vector<SearchHit> hits;

    switch (mode) {
        case SearchMode::Exact: {
            for (const Declaration& d : decls)
                if (d.name == trimmed) hits.push_back({d, 1.0, mode});
            // One hit by definition; duplicates across files collapse to the
            // lexicographically first location.
            std::sort(hits.begin(), hits.end(), [](const SearchHit& a, const SearchHit& b) {
                return a.decl.file < b.decl.file;
            });
            if (hits.size() > 1) hits.resize(1);
            return hits;
        }
        case SearchMode::Keyword: {
            std::set<std::string> q = alnum_tokens(trimmed);
            for (const Declaration& d : decls) {
                double score = jaccard(q, alnum_tokens(d.name + " " + d.signature));
                if (score > 0.0) hits.push_back({d, score, mode});
            }
            break;
        }
        case SearchMode::Semantic: {
            std::vector<double> qv = embedder_->embed({trimmed})[0];
            for (const Declaration& d : decls) {
                DeclCore core{d.name, d.kind, d.signature};
                double cos = cosine_similarity(qv, embedding_of(d.content_hash.digest_hex, core));
                hits.push_back({d, (cos + 1.0) / 2.0, mode});  // map [-1,1] onto [0,1]
            }
            break;
        }
    }

    std::sort(hits.begin(), hits.end(), [](const SearchHit& a, const SearchHit& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.decl.name != b.decl.name) return a.decl.name < b.decl.name;
        return a.decl.file < b.decl.file;
    });
    // The same declaration may appear in several files of one version; keep
    // the best-ranked instance of each hash.
    std::set<std::string> seen;
    std::vector<SearchHit> unique;
    for (SearchHit& h : hits)
        if (seen.insert(h.decl.content_hash.digest_hex).second) unique.push_back(std::move(h));
    if (unique.size() > k) unique.resize(k);
    return unique;
}

TaskContract RetrievalService::annotation_contract(const Declaration& decl,
                                                   const EnvironmentBinding& env) {
    TaskContract c;
    c.id = "annotate-" + decl.content_hash.abbrev();
    c.kind = TaskKind::LibraryAnnotation;
    c.env = env;
    c.objective.instruction =
        "Write one concise sentence describing what this library declaration provides, suitable "
        "for retrieval.";
    c.objective.structured_fields["declaration"] =
        canonical_decl_text(decl.kind, decl.name, decl.signature);
    c.objective.structured_fields["name"] = decl.name;
    c.verification.require_compile = false;
    c.verification.require_semantic = false;
    c.verification.judge_count = 1;
    c.verification.success_rule = SuccessRule::StructuredSubmission;
    return c;
}

AnnotationOutcome RetrievalService::annotate_library(const std::string& manifest_id,
                                                     const AnnotationRunner& run_contract,
                                                     double per_item_cost) {
    VersionManifest manifest = store_.load_manifest(manifest_id);
    EnvironmentBinding env{manifest.commit, manifest.toolchain, "toy"};

    // Deterministic order: by declaration name, then hash.
    std::vector<Declaration> decls = declarations(manifest_id);
    std::sort(decls.begin(), decls.end(), [](const Declaration& a, const Declaration& b) {
        if (a.name != b.name) return a.name < b.name;
        return a.content_hash.digest_hex < b.content_hash.digest_hex;
    });

    AnnotationOutcome outcome;
    std::set<std::string> handled;
    for (const Declaration& d : decls) {
        if (!handled.insert(d.content_hash.digest_hex).second) continue;
        if (annotations_.count(d.content_hash.digest_hex)) {
            ++outcome.skipped;
            continue;
        }
        std::optional<std::string> description = run_contract(annotation_contract(d, env));
        if (!description || description->empty()) {
            ++outcome.failed;
            continue;
        }
        AnnotationRecord record;
        record.decl_hash = d.content_hash;
        record.description = *description;
        record.embedding = embedder_->embed({*description})[0];
        append_annotation(record);
        annotations_[d.content_hash.digest_hex] = std::move(record);
        ++outcome.new_records;
    }
    outcome.cost = static_cast<double>(outcome.new_records) * per_item_cost;
    return outcome;
}

AnnotationCosts RetrievalService::annotation_costs(const std::vector<std::string>& manifest_ids,
                                                   double per_item_cost) const {
    AnnotationCosts costs;
    costs.per_item = per_item_cost;
    std::set<std::string> unique;
    for (const std::string& id : manifest_ids) {
        auto it = index_.find(id);
        if (it == index_.end()) throw VersionNotIndexedError(id);
        for (const auto& [hex, file] : it->second) {
            ++costs.instance_count;
            unique.insert(hex);
        }
    }
    costs.unique_count = unique.size();
    costs.naive_cost = static_cast<double>(costs.instance_count) * per_item_cost;
    costs.actual_cost = static_cast<double>(costs.unique_count) * per_item_cost;
    costs.ratio = costs.naive_cost > 0 ? costs.actual_cost / costs.naive_cost : 0.0;
    return costs;
}

std::optional<AnnotationRecord> RetrievalService::annotation_for(const ContentHash& hash) const {
    auto it = annotations_.find(hash.digest_hex);
    if (it == annotations_.end()) return std::nullopt;
    return it->second;
}

}  // namespace ape
