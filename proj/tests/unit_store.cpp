#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "ape/retrieve.hpp"
#include "ape/store.hpp"
#include "ape/workspace.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

using namespace ape;
using ape_test::TempDir;
namespace fs = std::filesystem;

// --- content store -------------------------------------------------------

TEST_CASE("blobs are content addressed and deduplicated") {
    TempDir tmp;
    ContentStore store(tmp / "store");

    ContentHash a = store.put_bytes("hello");
    ContentHash b = store.put_bytes("hello");
    ContentHash c = store.put_bytes("world");
    CHECK(a == b);
    CHECK(a != c);
    CHECK(a.digest_hex == sha256_hex("hello"));
    CHECK(store.stored_blob_count() == 2);
    CHECK(store.get_blob(a) == "hello");
    CHECK(store.blob_size(c) == 5);
    CHECK_FALSE(store.get_blob(hash_bytes("absent")).has_value());
    CHECK_THROWS_AS(store.blob_size(hash_bytes("absent")), DanglingHashError);

    // Physical layout: blobs/<first two hex>/<digest>.
    CHECK(fs::is_regular_file(tmp / "store" / "blobs" / a.digest_hex.substr(0, 2) /
                              a.digest_hex));
    CHECK(store.put_blob({"hello", BlobKind::CompiledArtifact}) == a);
    CHECK(store.stored_blob_count() == 2);  // kind never forks the address
}

TEST_CASE("manifest publish, load, and conflicts") {
    TempDir tmp;
    ContentStore store(tmp / "store");

    VersionManifest m;
    m.commit = "abc1234";
    m.toolchain = "toy-0.1";
    m.entries["a.toy"] = store.put_bytes("def a : needs ; x\n");
    m.entries["sub/b.toy"] = store.put_bytes("def b : needs a ; y\n");

    std::string id = store.publish_manifest(m);
    CHECK(id == "abc1234.toy-0.1");
    CHECK(id == ContentStore::manifest_id("abc1234", "toy-0.1"));
    CHECK(store.has_manifest("abc1234", "toy-0.1"));
    CHECK(store.has_manifest_id(id));
    CHECK(store.load_manifest(id) == m);
    CHECK(store.find_manifest("abc1234", "toy-0.1") == m);
    CHECK(store.list_manifest_ids() == std::vector<std::string>{id});

    CHECK(store.publish_manifest(m) == id);  // identical republish is a no-op

    VersionManifest changed = m;
    changed.entries.erase("a.toy");
    CHECK_THROWS_AS(store.publish_manifest(changed), ConflictingManifestError);

    VersionManifest dangling = m;
    dangling.commit = "def5678";
    dangling.entries["c.toy"] = hash_bytes("never stored");
    CHECK_THROWS_AS(store.publish_manifest(dangling), DanglingHashError);

    CHECK_THROWS_AS(store.load_manifest("missing.id"), UnknownManifestError);
    CHECK_FALSE(store.has_manifest("abc1234", "other"));
}

TEST_CASE("sanitized manifest ids do not confuse lookups") {
    TempDir tmp;
    ContentStore store(tmp / "store");
    VersionManifest m;
    m.commit = "v+1";  // sanitizes to v-1
    m.toolchain = "t";
    store.publish_manifest(m);

    // Same file name, different recorded commit: lookup must miss, and
    // publishing the colliding manifest must be refused rather than silently
    // merged.
    CHECK_FALSE(store.find_manifest("v-1", "t").has_value());
    CHECK_FALSE(store.has_manifest("v-1", "t"));
    VersionManifest collider;
    collider.commit = "v-1";
    collider.toolchain = "t";
    CHECK_THROWS_AS(store.publish_manifest(collider), ConflictingManifestError);
}

TEST_CASE("materialized trees are read-only and faithful") {
    TempDir tmp;
    ContentStore store(tmp / "store");

    std::map<std::string, std::string> files = {
        {"lib/main.toy", "def a : needs ; x\n"},
        {"lib/deep/util.toy", "def u : needs ; y\n"},
        {"readme.md", "hello\n"},
    };
    std::string id = ape_test::publish_tree(store, "abc1234", "toy-0.1", files);

    fs::path dest = tmp / "tree";
    CHECK(store.materialize_manifest(id, dest) == 3);
    for (const auto& [rel, bytes] : files) {
        CHECK(ape_test::read_file(dest / rel) == bytes);
        auto perms = fs::status(dest / rel).permissions();
        CHECK((perms & fs::perms::owner_write) == fs::perms::none);
        CHECK((perms & fs::perms::owner_read) != fs::perms::none);
    }
    auto dir_perms = fs::status(dest / "lib" / "deep").permissions();
    CHECK((dir_perms & fs::perms::owner_write) == fs::perms::none);
    CHECK((dir_perms & fs::perms::owner_exec) != fs::perms::none);

    CHECK_THROWS_AS(store.materialize_manifest(id, dest), IoFailure);  // not empty
    fs::create_directories(tmp / "empty-ok");
    CHECK(store.materialize_manifest(id, tmp / "empty-ok") == 3);  // empty dir is fine

    CHECK(store.materialize_version("abc1234", "toy-0.1", tmp / "via-version") == 3);
    CHECK(ape_test::read_file(tmp / "via-version" / "readme.md") == "hello\n");
    CHECK_THROWS_AS(store.materialize_version("unknown", "toy-0.1", tmp / "nope"),
                    UnknownManifestError);
}

TEST_CASE("ingest then materialize round trips a tree") {
    TempDir tmp;
    ContentStore store(tmp / "store");
    std::map<std::string, std::string> files = {{"a.txt", "A"}, {"d/b.txt", "B"}, {"d/c.txt", "A"}};
    ape_test::write_tree(tmp / "src", files);

    auto [id, count] = store.ingest_tree(tmp / "src", "fffff01", "tc");
    CHECK(count == 3);
    CHECK(store.stored_blob_count() == 2);  // "A" stored once

    store.materialize_manifest(id, tmp / "back");
    for (const auto& [rel, bytes] : files) CHECK(ape_test::read_file(tmp / "back" / rel) == bytes);

    CHECK_THROWS_AS(store.ingest_tree(tmp / "no-such-dir", "fffff02", "tc"), IoFailure);
}

TEST_CASE("dedup accounting matches the brute-force oracle") {
    TempDir tmp;
    ContentStore store(tmp / "store");

    // Three versions sharing most content, plus one under another toolchain.
    std::vector<std::vector<std::string>> contents = {
        {"alpha", "beta", "gamma"},
        {"alpha", "beta", "delta"},
        {"alpha", "beta", "delta"},
        {"alpha", "omega-long-content"},
    };
    const char* commits[] = {"aaaaaaa", "bbbbbbb", "ccccccc", "ddddddd"};
    for (int v = 0; v < 4; ++v) {
        VersionManifest m;
        m.commit = commits[v];
        m.toolchain = v == 3 ? "other" : "toy-0.1";
        for (std::size_t i = 0; i < contents[v].size(); ++i)
            m.entries["f" + std::to_string(i)] = store.put_bytes(contents[v][i]);
        store.publish_manifest(m);
    }

    ape_test::OracleDedup want = ape_test::oracle_dedup(contents);
    DedupStats got = store.dedup_stats();
    CHECK(got.total_instances == want.instances);
    CHECK(got.unique_blobs == want.unique);
    CHECK(got.naive_bytes == want.naive_bytes);
    CHECK(got.stored_bytes == want.stored_bytes);
    CHECK(got.savings_ratio ==
          doctest::Approx(1.0 - double(want.stored_bytes) / double(want.naive_bytes)));

    auto by_tc = store.dedup_stats_by_toolchain();
    REQUIRE(by_tc.count("toy-0.1") == 1);
    REQUIRE(by_tc.count("other") == 1);
    CHECK(by_tc["toy-0.1"].total_instances == 9);
    CHECK(by_tc["other"].total_instances == 2);

    // An empty store reports zero savings, not a division error.
    ContentStore empty(tmp / "empty-store");
    CHECK(empty.dedup_stats().savings_ratio == 0.0);
}

// --- workspace -----------------------------------------------------------

TEST_CASE("normalize_rel resolves dots and rejects escapes") {
    CHECK(normalize_rel("scratch/a.toy") == "scratch/a.toy");
    CHECK(normalize_rel("scratch/./a/../b.toy") == "scratch/b.toy");
    CHECK(normalize_rel("./scratch//x") == "scratch/x");
    CHECK(normalize_rel("scratch") == "scratch");
    CHECK_THROWS_AS(normalize_rel("/etc/passwd"), PathEscapeError);
    CHECK_THROWS_AS(normalize_rel("../up"), PathEscapeError);
    CHECK_THROWS_AS(normalize_rel("scratch/../.."), PathEscapeError);
    CHECK_THROWS_AS(normalize_rel(""), PathEscapeError);
    CHECK_THROWS_AS(normalize_rel("."), PathEscapeError);
}

static WorkspaceSet bare_workspace(bool with_reference = true) {
    WorkspaceSet ws;
    ws.boundaries.read_only = {"scratch/frozen/**", "*.lock"};
    ws.boundaries.blocked = {"**/secret.txt", "target/private/**"};
    if (with_reference) ws.reference = "/nonexistent/reference";
    return ws;
}

TEST_CASE("decide_access precedence and pattern report") {
    WorkspaceSet ws = bare_workspace();

    AccessDecision d = decide_access(ws, "scratch/notes.txt", AccessMode::Write);
    CHECK(d.allowed());
    CHECK(d.matched_pattern.empty());

    // Blocked outranks everything, read or write, and reports its pattern.
    d = decide_access(ws, "target/private/key.pem", AccessMode::Read);
    CHECK(d.verdict == AccessVerdict::DenyBlocked);
    CHECK(d.matched_pattern == "target/private/**");
    d = decide_access(ws, "scratch/sub/secret.txt", AccessMode::Write);
    CHECK(d.verdict == AccessVerdict::DenyBlocked);
    CHECK(d.matched_pattern == "**/secret.txt");

    // Writes outside the writable root carry no pattern: the root rule fired.
    d = decide_access(ws, "target/lib/a.toy", AccessMode::Write);
    CHECK(d.verdict == AccessVerdict::DenyReadOnly);
    CHECK(d.matched_pattern.empty());
    d = decide_access(ws, "reference/a.toy", AccessMode::Write);
    CHECK(d.verdict == AccessVerdict::DenyReadOnly);

    // read_only globs bind writes inside the writable root.
    d = decide_access(ws, "scratch/frozen/x.toy", AccessMode::Write);
    CHECK(d.verdict == AccessVerdict::DenyReadOnly);
    CHECK(d.matched_pattern == "scratch/frozen/**");
    CHECK(decide_access(ws, "scratch/frozen/x.toy", AccessMode::Read).allowed());

    // Patterns also match the root-relative remainder ("*.lock" vs
    // "scratch/build.lock").
    d = decide_access(ws, "scratch/build.lock", AccessMode::Write);
    CHECK(d.verdict == AccessVerdict::DenyReadOnly);
    CHECK(d.matched_pattern == "*.lock");

    CHECK_THROWS_AS(decide_access(ws, "elsewhere/x", AccessMode::Read), PathEscapeError);
    WorkspaceSet no_ref = bare_workspace(false);
    CHECK_THROWS_AS(decide_access(no_ref, "reference/a.toy", AccessMode::Read), PathEscapeError);
    CHECK(decide_access(ws, "reference/a.toy", AccessMode::Read).allowed());
}

TEST_CASE("workspace lifecycle honors the contract") {
    TempDir tmp;
    ContentStore store(tmp / "store");
    std::map<std::string, std::string> lib = {
        {"lib/base.toy", "def lib_base : needs ; x\n"},
        {"lib/secret.txt", "CLASSIFIED\n"},
    };
    ape_test::publish_tree(store, "abc1234", "toy-0.1", lib);
    std::map<std::string, std::string> ref = {{"orig.toy", "def orig : needs ; o\n"}};
    std::string ref_id = ape_test::publish_tree(store, "bbb2222", "ref", ref);

    WorkspaceManager mgr(store, tmp / "runs");
    TaskContract c = ape_test::basic_contract("task-1", "abc1234");
    c.boundaries.blocked = {"**/secret.txt"};
    c.objective.structured_fields["reference"] = ref_id;
    c.objective.structured_fields["note"] = "not a manifest id";

    WorkspaceSet ws = mgr.init_workspaces(c, "run-1");
    CHECK(ws.root == tmp / "runs" / "run-1" / "task-1");
    CHECK(fs::is_directory(ws.scratch));
    CHECK(ape_test::read_file(ws.target / "lib/base.toy") == lib["lib/base.toy"]);
    REQUIRE(ws.reference.has_value());
    CHECK(ape_test::read_file(*ws.reference / "orig.toy") == ref["orig.toy"]);
    CHECK(fs::is_regular_file(ws.scratch / "solution.toy"));  // seeded empty working file
    CHECK(fs::file_size(ws.scratch / "solution.toy") == 0);
    CHECK(fs::is_regular_file(ws.root / "workspace.json"));
    CHECK_THROWS_AS(mgr.init_workspaces(c, "run-1"), IoFailure);  // already initialized

    // The agent-facing API: write in scratch, read the target, never the rest.
    write_workspace_file(ws, "scratch/solution.toy", "def mine : needs lib_base ; b\n");
    CHECK(read_workspace_file(ws, "scratch/solution.toy") ==
          "def mine : needs lib_base ; b\n");
    CHECK(read_workspace_file(ws, "target/lib/base.toy") == lib["lib/base.toy"]);
    CHECK(read_workspace_file(ws, "reference/orig.toy") == ref["orig.toy"]);
    CHECK_THROWS_AS(write_workspace_file(ws, "target/lib/base.toy", "clobber"),
                    AccessDeniedError);
    CHECK_THROWS_AS(read_workspace_file(ws, "target/lib/secret.txt"), AccessDeniedError);
    CHECK_THROWS_AS(read_workspace_file(ws, "scratch/missing.toy"), IoFailure);

    try {
        write_workspace_file(ws, "reference/orig.toy", "x");
        FAIL("write to reference must be denied");
    } catch (const AccessDeniedError& e) {
        CHECK(e.decision.verdict == AccessVerdict::DenyReadOnly);
        CHECK(e.decision.path == "reference/orig.toy");
    }

    // Blocked files vanish from listings but stay on disk for the checker.
    auto entries = list_visible(ws, "target/lib");
    REQUIRE(entries.size() == 1);
    CHECK(entries[0].name == "base.toy");
    CHECK(fs::exists(ws.target / "lib/secret.txt"));
    auto all = list_visible_tree(ws, "target");
    CHECK(all == std::vector<std::string>{"target/lib/base.toy"});

    // Snapshots: same bytes, same manifest id; the snapshot materializes back.
    std::string snap1 = mgr.snapshot_scratch(ws);
    std::string snap2 = mgr.snapshot_scratch(ws);
    CHECK(snap1 == snap2);
    store.materialize_manifest(snap1, tmp / "snap");
    CHECK(ape_test::read_file(tmp / "snap" / "solution.toy") ==
          "def mine : needs lib_base ; b\n");

    write_workspace_file(ws, "scratch/solution.toy", "def mine : needs lib_base ; c\n");
    CHECK(mgr.snapshot_scratch(ws) != snap1);

    // The audit file records every decision made through check_access.
    mgr.flush_audit(ws);
    auto audit = nlohmann::json::parse(ape_test::read_file(ws.root / "workspace.json"));
    CHECK(audit["task_id"] == "task-1");
    CHECK(audit["has_reference"] == true);
    CHECK(audit["manifest"] == "abc1234.toy-0.1");
    bool saw_denied_write = false;
    for (const auto& d : audit["decisions"])
        if (d["path"] == "target/lib/base.toy" && d["mode"] == "write" &&
            d["verdict"] == "deny-read-only")
            saw_denied_write = true;
    CHECK(saw_denied_write);

    WorkspaceManager::destroy(ws);
    CHECK_FALSE(fs::exists(ws.root));
}

// --- retrieval -----------------------------------------------------------

namespace {

struct RetrievalFixture {
    TempDir tmp;
    ContentStore store;
    std::string v1, v2;

    RetrievalFixture() : store(tmp / "store") {
        v1 = ape_test::publish_tree(
            store, "1111111", "toy-0.1",
            {{"algebra.toy", "def mul_comm : needs ; proof one\n"
                             "thm mul_assoc : needs mul_comm ; proof two\n"},
             {"order.toy", "def le_refl : needs ; third\n"},
             {"broken.toy", "def oops missing colon\n"},
             {"notes.md", "not indexed\n"}});
        v2 = ape_test::publish_tree(
            store, "2222222", "toy-0.1",
            {{"algebra.toy", "def mul_comm : needs ; proof one\n"
                             "thm mul_assoc : needs mul_comm ; proof two revised\n"}});
    }

    RetrievalService make(const std::string& dir = "index") {
        return RetrievalService(store, tmp / dir, std::make_shared<MockEmbedder>(32));
    }
};

}  // namespace

TEST_CASE("build_index counts instances and cross-version reuse") {
    RetrievalFixture fx;
    RetrievalService svc = fx.make();

    IndexReport r1 = svc.build_index(fx.v1);
    CHECK(r1.index_id == fx.v1);
    CHECK(r1.decl_instances == 3);  // broken.toy and notes.md contribute none
    CHECK(r1.unique_added == 3);
    CHECK(r1.unique_reused == 0);
    REQUIRE(r1.parse_failures.size() == 1);
    CHECK(r1.parse_failures[0].find("broken.toy") != std::string::npos);

    IndexReport r2 = svc.build_index(fx.v2);
    CHECK(r2.decl_instances == 2);
    CHECK(r2.unique_added == 1);   // revised mul_assoc is new
    CHECK(r2.unique_reused == 1);  // mul_comm is shared with v1
    CHECK(svc.is_indexed(fx.v1));
    CHECK(svc.indexed_versions() == std::vector<std::string>{fx.v1, fx.v2});

    auto decls = svc.declarations(fx.v1);
    CHECK(decls.size() == 3);
    CHECK_THROWS_AS(svc.declarations("missing.id"), VersionNotIndexedError);
    CHECK_THROWS_AS(svc.search("x", SearchMode::Exact, "missing.id"), VersionNotIndexedError);
}

TEST_CASE("search modes behave as specified") {
    RetrievalFixture fx;
    RetrievalService svc = fx.make();
    svc.build_index(fx.v1);

    CHECK_THROWS_AS(svc.search("", SearchMode::Exact, fx.v1), EmptyQueryError);
    CHECK_THROWS_AS(svc.search("   ", SearchMode::Keyword, fx.v1), EmptyQueryError);

    auto exact = svc.search("mul_comm", SearchMode::Exact, fx.v1);
    REQUIRE(exact.size() == 1);
    CHECK(exact[0].decl.name == "mul_comm");
    CHECK(exact[0].score == 1.0);
    CHECK(svc.search("nonexistent", SearchMode::Exact, fx.v1).empty());

    auto kw = svc.search("mul proof", SearchMode::Keyword, fx.v1, 10);
    REQUIRE(kw.size() >= 2);
    for (const auto& h : kw) {
        CHECK(h.score > 0.0);
        CHECK(h.score <= 1.0);
    }
    for (std::size_t i = 1; i < kw.size(); ++i) CHECK(kw[i - 1].score >= kw[i].score);
    CHECK(svc.search("zzz qqq", SearchMode::Keyword, fx.v1).empty());

    auto sem = svc.search("commutativity of multiplication", SearchMode::Semantic, fx.v1, 2);
    CHECK(sem.size() == 2);
    for (const auto& h : sem) {
        CHECK(h.score >= 0.0);
        CHECK(h.score <= 1.0);
    }
    // k == 0 is treated as k == 1.
    CHECK(svc.search("mul", SearchMode::Keyword, fx.v1, 0).size() <= 1);
}

TEST_CASE("mock embedder is a deterministic unit vector") {
    MockEmbedder e(16);
    auto a = e.embed({"same text"});
    auto b = e.embed({"same text", "other"});
    CHECK(a[0] == b[0]);
    CHECK(b[0] != b[1]);
    double norm = 0;
    for (double x : a[0]) norm += x * x;
    CHECK(norm == doctest::Approx(1.0));
    CHECK(a[0].size() == 16);

    CHECK(cosine_similarity(a[0], a[0]) == doctest::Approx(1.0));
    CHECK(cosine_similarity({1, 0}, {0, 1}) == doctest::Approx(0.0));
    CHECK(cosine_similarity({1, 0}, {-1, 0}) == doctest::Approx(-1.0));
}

TEST_CASE("annotation pays once per unique declaration") {
    RetrievalFixture fx;
    RetrievalService svc = fx.make();
    svc.build_index(fx.v1);
    svc.build_index(fx.v2);

    int runner_calls = 0;
    auto runner = [&](const TaskContract& c) -> std::optional<std::string> {
        ++runner_calls;
        CHECK(c.kind == TaskKind::LibraryAnnotation);
        CHECK(c.id.rfind("annotate-", 0) == 0);
        CHECK(c.verification.success_rule == SuccessRule::StructuredSubmission);
        CHECK_FALSE(c.verification.require_compile);
        CHECK(c.objective.structured_fields.count("declaration") == 1);
        return "Describes " + c.objective.structured_fields.at("name") + ".";
    };

    AnnotationOutcome o1 = svc.annotate_library(fx.v1, runner, 0.5);
    CHECK(o1.new_records == 3);
    CHECK(o1.skipped == 0);
    CHECK(o1.cost == doctest::Approx(1.5));
    CHECK(runner_calls == 3);

    // v2 shares mul_comm with v1: only the revised declaration is new work.
    AnnotationOutcome o2 = svc.annotate_library(fx.v2, runner, 0.5);
    CHECK(o2.new_records == 1);
    CHECK(o2.skipped == 1);
    CHECK(runner_calls == 4);

    AnnotationOutcome o3 = svc.annotate_library(fx.v1, runner, 0.5);
    CHECK(o3.new_records == 0);
    CHECK(o3.skipped == 3);
    CHECK(o3.cost == 0.0);
    CHECK(svc.annotation_count() == 4);

    auto decls = svc.declarations(fx.v1);
    auto rec = svc.annotation_for(decls[0].content_hash);
    REQUIRE(rec.has_value());
    CHECK(rec->description.rfind("Describes ", 0) == 0);
    CHECK_FALSE(rec->embedding.empty());

    AnnotationCosts costs = svc.annotation_costs({fx.v1, fx.v2}, 2.0);
    CHECK(costs.instance_count == 5);
    CHECK(costs.unique_count == 4);
    CHECK(costs.naive_cost == doctest::Approx(10.0));
    CHECK(costs.actual_cost == doctest::Approx(8.0));
    CHECK(costs.ratio == doctest::Approx(0.8));

    // A failing runner counts as failed and retries next time.
    RetrievalService svc2 = fx.make("index2");
    svc2.build_index(fx.v1);
    auto failing = [](const TaskContract&) -> std::optional<std::string> { return std::nullopt; };
    AnnotationOutcome bad = svc2.annotate_library(fx.v1, failing);
    CHECK(bad.failed == 3);
    CHECK(bad.new_records == 0);
}

TEST_CASE("the index persists across service instances") {
    RetrievalFixture fx;
    std::vector<SearchHit> before;
    {
        RetrievalService svc = fx.make();
        svc.build_index(fx.v1);
        svc.annotate_library(fx.v1, [](const TaskContract& c) {
            return std::optional<std::string>("About " + c.objective.structured_fields.at("name"));
        });
        before = svc.search("mul proof", SearchMode::Keyword, fx.v1, 5);
    }
    RetrievalService reloaded = fx.make();
    CHECK(reloaded.is_indexed(fx.v1));
    CHECK(reloaded.annotation_count() == 3);
    auto after = reloaded.search("mul proof", SearchMode::Keyword, fx.v1, 5);
    REQUIRE(after.size() == before.size());
    for (std::size_t i = 0; i < after.size(); ++i) {
        CHECK(after[i].decl == before[i].decl);
        CHECK(after[i].score == before[i].score);
    }
}
