#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ape/diff.hpp"
#include "ape/miner.hpp"
#include "ape/runtime.hpp"
#include "ape/store.hpp"
#include "ape/verify.hpp"
#include "ape/workspace.hpp"
#include "support/fixtures.hpp"
#include "support/temp_dir.hpp"

using namespace ape;
using ape_test::SnapshotCommit;
using ape_test::TempDir;
using nlohmann::json;
namespace fs = std::filesystem;

// --- histories -----------------------------------------------------------

TEST_CASE("snapshot history walks trees and parents") {
    TempDir tmp;
    std::vector<SnapshotCommit> commits = {
        {"c1", "2025-05-01", "base", {{"a.toy", "def one : needs ; x\n"}, {"b.md", "beta\n"}}},
        {"c2", "2025-05-02", "edit",
         {{"a.toy", "def one : needs ; x\nthm two : needs one ; y\n"}}},
    };
    ape_test::write_snapshot_history(tmp.path(), commits);

    SnapshotHistory h(tmp.path());
    auto listed = h.commits();
    REQUIRE(listed.size() == 2);
    CHECK(listed[0].id == "c1");
    CHECK(listed[0].parent == "");
    CHECK(listed[1].parent == "c1");
    CHECK(listed[1].date == "2025-05-02");
    CHECK(listed[1].message == "edit");

    auto tree = h.tree("c2");
    REQUIRE(tree.size() == 1);
    CHECK(tree.at("a.toy").find("thm two") != std::string::npos);

    auto root_changes = h.changes("c1");
    REQUIRE(root_changes.size() == 2);
    CHECK(root_changes[0].path == "a.toy");
    CHECK_FALSE(root_changes[0].pre.has_value());

    auto changes = h.changes("c2");
    REQUIRE(changes.size() == 2);
    CHECK(changes[0].path == "a.toy");
    REQUIRE(changes[0].pre.has_value());
    CHECK(changes[0].pre->find("thm two") == std::string::npos);
    CHECK(changes[1].path == "b.md");
    CHECK_FALSE(changes[1].post.has_value());  // dropped from c2

    CHECK_THROWS_AS(h.tree("nope"), HistoryUnavailableError);
    CHECK_THROWS_AS(SnapshotHistory(tmp / "missing"), HistoryUnavailableError);
    TempDir bad;
    ape_test::write_file(bad / "history.json", "{broken\n");
    CHECK_THROWS_AS(SnapshotHistory(bad.path()), HistoryUnavailableError);
}

TEST_CASE("git history wraps a real repository") {
    TempDir tmp;
    std::string dir = tmp.path().string();
    auto sh = [&](const std::string& cmd) { REQUIRE(std::system(cmd.c_str()) == 0); };
    sh("git -C '" + dir + "' init -q");
    sh("git -C '" + dir + "' config user.email tester@example.com");
    sh("git -C '" + dir + "' config user.name tester");
    ape_test::write_file(tmp / "a.toy", "def g_base : needs ; x\n");
    ape_test::write_file(tmp / "b.md", "beta\n");
    sh("git -C '" + dir + "' add -A && GIT_AUTHOR_DATE=2025-06-01T12:00:00 "
       "GIT_COMMITTER_DATE=2025-06-01T12:00:00 git -C '" + dir + "' commit -q -m 'add base'");
    ape_test::write_file(tmp / "a.toy", "def g_base : needs ; x\nthm g_thm : needs g_base ; y\n");
    sh("git -C '" + dir + "' rm -q b.md && git -C '" + dir +
       "' add -A && GIT_AUTHOR_DATE=2025-06-02T12:00:00 "
       "GIT_COMMITTER_DATE=2025-06-02T12:00:00 git -C '" + dir + "' commit -q -m 'edit base'");

    GitHistory h(tmp.path());
    auto commits = h.commits();
    REQUIRE(commits.size() == 2);
    CHECK(commits[0].parent == "");
    CHECK(commits[0].date == "2025-06-01");
    CHECK(commits[0].message == "add base");
    CHECK(commits[1].parent == commits[0].id);
    CHECK(commits[1].date == "2025-06-02");

    auto changes = h.changes(commits[1].id);
    REQUIRE(changes.size() == 2);
    CHECK(changes[0].path == "a.toy");
    REQUIRE(changes[0].pre.has_value());
    CHECK(changes[0].pre->find("g_thm") == std::string::npos);
    REQUIRE(changes[0].post.has_value());
    CHECK(changes[0].post->find("g_thm") != std::string::npos);
    CHECK(changes[1].path == "b.md");
    CHECK_FALSE(changes[1].post.has_value());

    auto root = h.changes(commits[0].id);
    REQUIRE(root.size() == 2);
    CHECK_FALSE(root[0].pre.has_value());

    auto tree = h.tree(commits[1].id);
    REQUIRE(tree.size() == 1);
    CHECK(tree.count("a.toy") == 1);

    CHECK_THROWS_AS(GitHistory(tmp / "nowhere"), HistoryUnavailableError);
    TempDir plain;
    CHECK_THROWS_AS(GitHistory(plain.path()), HistoryUnavailableError);
}

// --- effective line counting ---------------------------------------------

TEST_CASE("effective line mask honors toy comments") {
    CommentSyntax toy = CommentSyntax::toy();
    auto mask = effective_line_mask("def a : needs ; x\n-- note\n\n  \ncode -- trailing\n", toy);
    REQUIRE(mask.size() == 5);
    CHECK(mask[0]);
    CHECK_FALSE(mask[1]);  // line comment
    CHECK_FALSE(mask[2]);  // empty
    CHECK_FALSE(mask[3]);  // whitespace
    CHECK(mask[4]);        // content before the trailing comment

    auto block = effective_line_mask("/- a\nb\n-/\nreal\n", toy);
    REQUIRE(block.size() == 4);
    CHECK_FALSE(block[0]);
    CHECK_FALSE(block[1]);
    CHECK_FALSE(block[2]);
    CHECK(block[3]);

    auto nested = effective_line_mask("/- outer /- inner -/ still -/ tail\n", toy);
    REQUIRE(nested.size() == 1);
    CHECK(nested[0]);  // tail sits after the outer close

    auto none = effective_line_mask("-- not a comment here\n", CommentSyntax::none());
    REQUIRE(none.size() == 1);
    CHECK(none[0]);
}

TEST_CASE("count_effective_lines charges rewrites once") {
    CommentSyntax toy = CommentSyntax::toy();
    CHECK(count_effective_lines("", "a\nb\nc\n", toy) == 3);
    CHECK(count_effective_lines("x\ny\n", "p\nq\n", toy) == 2);  // rewrite, not 4
    CHECK(count_effective_lines("keep\n", "keep\n-- note\n\n", toy) == 0);
    CHECK(count_effective_lines("a\nb\n", "a\n", toy) == 1);  // pure deletion
    CHECK(count_effective_lines("a\n/- x\n-/\nb\n", "a\n/- y\n-/\nb\n", toy) == 0);
    // Replacing 2 effective lines by 3 effective plus comments costs 3.
    CHECK(count_effective_lines("p\nq\n", "x\n-- c\ny\nz\n", toy) == 3);
    CHECK(count_effective_lines("", "-- only\n", CommentSyntax::none()) == 1);
}

// --- filtering -----------------------------------------------------------

namespace {

std::string decl_block(const std::string& prefix, int from, int to, const std::string& dep,
                       const std::string& body_tag = "b") {
    std::string out;
    for (int i = from; i < to; ++i)
        out += "thm " + prefix + std::to_string(i) + " : needs " + dep + " ; " + body_tag +
               std::to_string(i) + "\n";
    return out;
}

/// Three-commit history exercising every rejection reason plus one keeper.
void write_taxonomy_history(const fs::path& root) {
    std::map<std::string, std::string> base = {
        {"lib/core.toy", "def core_one : needs ; base\n"},
        {"doc/notes.md", "alpha\n"},
        {"lib/tiny.toy", "thm tiny_one : needs core_one ; t\n"},
        {"lib/keep.toy", "thm keep_one : needs core_one ; k\n"},
        {"lib/gone.toy", "thm gone_one : needs core_one ; g\n"},
        {"lib/scatter.toy", decl_block("sc_", 0, 200, "core_one")},
    };

    std::map<std::string, std::string> second = base;
    second.erase("lib/gone.toy");                                  // DeletedFile
    second["doc/notes.md"] = "alpha\nb1\nb2\nb3\nb4\nb5\nb6\nb7\nb8\n";  // NoDeclChange
    second["doc/small.md"] = "s1\ns2\n";                           // BelowMin beats NoDeclChange
    second["lib/tiny.toy"] += decl_block("tiny_extra_", 0, 3, "tiny_one");   // BelowMin
    second["lib/huge.toy"] = decl_block("hg_", 0, 101, "core_one");          // AboveMax
    second["img/logo.bin"] = std::string("\x00\x01raw", 5);        // BinaryFile
    second["lib/keep.toy"] += decl_block("keep_extra_", 0, 6, "keep_one");   // kept
    std::string scatter = decl_block("sc_", 0, 200, "core_one");   // Scattered: 4 groups
    for (int i : {0, 1, 60, 120, 180}) {
        std::string old_line = "thm sc_" + std::to_string(i) + " : needs core_one ; b" +
                               std::to_string(i) + "\n";
        std::string new_line = "thm sc_" + std::to_string(i) + " : needs core_one ; c" +
                               std::to_string(i) + "\n";
        scatter.replace(scatter.find(old_line), old_line.size(), new_line);
    }
    second["lib/scatter.toy"] = scatter;

    std::map<std::string, std::string> third = second;
    third["lib/keep.toy"] += decl_block("broken_", 0, 5, "ghost_name");  // PostCheckFail

    ape_test::write_snapshot_history(root, {
        {"aaaa000000000001", "2025-07-01", "seed", base},
        {"aaaa000000000002", "2025-07-02", "grow", second},
        {"aaaa000000000003", "2025-07-03", "break", third},
    });
}

}  // namespace

TEST_CASE("filter_commits classifies every changed file") {
    TempDir tmp;
    write_taxonomy_history(tmp.path());
    SnapshotHistory history(tmp.path());

    CHECK_THROWS_AS(filter_commits(history, "", "2025-07-31", FilterRules{}), SchemaError);
    CHECK_THROWS_AS(filter_commits(history, "2025-07-01", "", FilterRules{}), SchemaError);

    MineResult result = filter_commits(history, "2025-07-02", "2025-07-03", FilterRules{});
    CHECK(result.commits_scanned == 2);
    REQUIRE(result.kept.size() == 1);
    const FileEdit& kept = result.kept[0];
    CHECK(kept.file == "lib/keep.toy");
    CHECK(kept.commit == "aaaa000000000002");
    CHECK(kept.parent == "aaaa000000000001");
    CHECK(kept.effective_lines_changed == 6);
    CHECK(kept.date == "2025-07-02");
    CHECK(kept.message == "grow");
    CHECK(kept.pre_bytes.find("keep_extra_0") == std::string::npos);
    CHECK(kept.post_bytes.find("keep_extra_5") != std::string::npos);

    std::map<std::pair<std::string, std::string>, RejectionRecord> rejected;
    for (const RejectionRecord& r : result.rejected) rejected[{r.commit, r.file}] = r;
    REQUIRE(rejected.size() == 8);
    auto reason = [&](const std::string& commit, const std::string& file) {
        return rejected.at({commit, file}).reason;
    };
    CHECK(reason("aaaa000000000002", "lib/gone.toy") == RejectReason::DeletedFile);
    CHECK(reason("aaaa000000000002", "img/logo.bin") == RejectReason::BinaryFile);
    CHECK(reason("aaaa000000000002", "lib/tiny.toy") == RejectReason::BelowMin);
    CHECK(rejected.at({"aaaa000000000002", "lib/tiny.toy"}).effective_lines == 3);
    CHECK(reason("aaaa000000000002", "doc/small.md") == RejectReason::BelowMin);
    CHECK(reason("aaaa000000000002", "lib/huge.toy") == RejectReason::AboveMax);
    CHECK(rejected.at({"aaaa000000000002", "lib/huge.toy"}).effective_lines == 101);
    CHECK(reason("aaaa000000000002", "doc/notes.md") == RejectReason::NoDeclChange);
    CHECK(rejected.at({"aaaa000000000002", "doc/notes.md"}).effective_lines == 8);
    CHECK(reason("aaaa000000000002", "lib/scatter.toy") == RejectReason::Scattered);
    CHECK(rejected.at({"aaaa000000000002", "lib/scatter.toy"}).effective_lines == 5);
    CHECK(rejected.at({"aaaa000000000002", "lib/scatter.toy"}).detail ==
          "4 separated hunk groups");
    CHECK(reason("aaaa000000000003", "lib/keep.toy") == RejectReason::PostCheckFail);
    CHECK(rejected.at({"aaaa000000000003", "lib/keep.toy"}).detail ==
          "post-edit tree fails the checker");

    // Date range is inclusive on both ends.
    MineResult only_third = filter_commits(history, "2025-07-03", "2025-07-03", FilterRules{});
    CHECK(only_third.commits_scanned == 1);
    CHECK(only_third.kept.empty());
    REQUIRE(only_third.rejected.size() == 1);
    CHECK(only_third.rejected[0].reason == RejectReason::PostCheckFail);

    MineResult none = filter_commits(history, "2020-01-01", "2020-12-31", FilterRules{});
    CHECK(none.commits_scanned == 0);
    CHECK(none.kept.empty());

    json doc = mine_result_to_json(result);
    CHECK(doc["commits_scanned"] == 2);
    CHECK(doc["kept"].size() == 1);
    CHECK(doc["kept"][0]["file"] == "lib/keep.toy");
    CHECK(doc["kept"][0]["effective_lines"] == 6);
    CHECK(doc["rejected"].size() == 8);
}

TEST_CASE("reject reason names are kebab-case") {
    CHECK(std::string(to_string(RejectReason::BelowMin)) == "below-min");
    CHECK(std::string(to_string(RejectReason::AboveMax)) == "above-max");
    CHECK(std::string(to_string(RejectReason::NoDeclChange)) == "no-decl-change");
    CHECK(std::string(to_string(RejectReason::Scattered)) == "scattered");
    CHECK(std::string(to_string(RejectReason::PostCheckFail)) == "post-check-fail");
    CHECK(std::string(to_string(RejectReason::DeletedFile)) == "deleted-file");
    CHECK(std::string(to_string(RejectReason::BinaryFile)) == "binary-file");
}

TEST_CASE("size boundaries sit at 5 and 100 effective lines") {
    TempDir tmp;
    std::map<std::string, std::string> seed = {{"lib/seed.toy", "def seed : needs ; s\n"}};
    std::map<std::string, std::string> grown = seed;
    grown["lib/four.toy"] = decl_block("fr_", 0, 4, "seed");
    grown["lib/five.toy"] = decl_block("fv_", 0, 5, "seed");
    grown["lib/hundred.toy"] = decl_block("hd_", 0, 100, "seed");
    grown["lib/overmax.toy"] = decl_block("om_", 0, 101, "seed");
    ape_test::write_snapshot_history(tmp.path(), {
        {"bbbb000000000001", "2025-08-01", "seed", seed},
        {"bbbb000000000002", "2025-08-02", "grow", grown},
    });

    MineResult result =
        filter_commits(SnapshotHistory(tmp.path()), "2025-08-02", "2025-08-02", FilterRules{});
    std::map<std::string, std::string> outcome;
    for (const FileEdit& e : result.kept) outcome[e.file] = "kept";
    for (const RejectionRecord& r : result.rejected) outcome[r.file] = to_string(r.reason);
    CHECK(outcome.at("lib/four.toy") == "below-min");
    CHECK(outcome.at("lib/five.toy") == "kept");
    CHECK(outcome.at("lib/hundred.toy") == "kept");
    CHECK(outcome.at("lib/overmax.toy") == "above-max");
}

// --- instructions --------------------------------------------------------

TEST_CASE("instruction serialization and rendering") {
    Instruction ins{"Add helpers", "State the two lemmas.", "Match the file style."};
    CHECK(ins.complete());
    CHECK_FALSE(Instruction{"t", "o", "  \n"}.complete());

    Instruction back = instruction_from_json(instruction_to_json(ins));
    CHECK(back.title == ins.title);
    CHECK(back.objectives == ins.objectives);

    // Arrays of strings are tolerated and joined into a bullet list.
    Instruction listy = instruction_from_json(
        {{"title", "T"}, {"objectives", json::array({"first", "second"})}, {"guidance", "G"}});
    CHECK(listy.objectives == "- first\n- second\n");
    CHECK(instruction_from_json(json::object()).title == "");

    CHECK(render_instruction(ins, "lib/a.toy") ==
          "Add helpers\n\nFile under change: lib/a.toy\n\nObjectives:\nState the two lemmas.\n\n"
          "Guidance:\nMatch the file style.\n");
}

TEST_CASE("groundedness lint flags line numbers and verbatim diff lines") {
    FileEdit edit;
    edit.file = "lib/a.toy";
    edit.pre_bytes = "def base : needs ; x\n";
    edit.post_bytes = "def base : needs ; x\nthm deep_result : needs base ; qed\n";

    Instruction clean{"Add a theorem", "Introduce deep_result over base.", "Keep it short."};
    CHECK_FALSE(lint_instruction(clean, edit).has_value());

    Instruction liney{"Fix", "Rework lines 10 through 12.", "g"};
    CHECK(lint_instruction(liney, edit) == "instruction references line numbers");
    Instruction single{"Fix", "Only touch line 7 please.", "g"};
    CHECK(lint_instruction(single, edit).has_value());
    Instruction outline{"Fix", "Follow outline 5 from the doc.", "g"};
    CHECK_FALSE(lint_instruction(outline, edit).has_value());  // no word boundary match

    Instruction verbatim{"Add", "Write thm deep_result : needs base ; qed here.", "g"};
    auto hit = lint_instruction(verbatim, edit);
    REQUIRE(hit.has_value());
    CHECK(hit->find("reproduces a changed line verbatim") != std::string::npos);
    CHECK(hit->find("deep_result") != std::string::npos);

    // Short fragments (under 12 chars) are not treated as verbatim copies.
    FileEdit small = edit;
    small.post_bytes = "def base : needs ; x\nthm ok : a\n";
    Instruction echoes_short{"Add", "thm ok : a", "g"};
    CHECK_FALSE(lint_instruction(echoes_short, small).has_value());
}

// --- miner pipeline ------------------------------------------------------

namespace {

struct MinerFixture {
    TempDir tmp;
    ContentStore store;
    WorkspaceManager mgr;
    Runtime runtime;
    Miner miner;
    fs::path history_root;

    MinerFixture()
        : store(tmp / "store"),
          mgr(store, tmp / "runs"),
          runtime(store, mgr, CheckerRegistry::with_default_toy()),
          miner(store),
          history_root(tmp / "history") {
        std::map<std::string, std::string> base = {
            {"lib/base.toy", "def base_obj : needs ; foundation\n"},
            {"lib/algebra.toy", "thm alg_one : needs base_obj ; first\n"},
        };
        std::map<std::string, std::string> grown = base;
        grown["lib/algebra.toy"] =
            "thm alg_one : needs base_obj ; first\n"
            "thm alg_two : needs alg_one ; second\n"
            "thm alg_three : needs alg_one ; third\n"
            "thm alg_four : needs base_obj ; fourth\n"
            "thm alg_five : needs alg_two ; fifth\n"
            "thm alg_six : needs alg_three ; sixth\n";
        ape_test::write_snapshot_history(history_root, {
            {"cccc000000000001", "2025-06-01", "seed library", base},
            {"cccc000000000002", "2025-06-02", "grow algebra", grown},
        });
    }

    SnapshotHistory history() const { return SnapshotHistory(history_root); }

    FileEdit mined_edit() {
        MineResult result = filter_commits(history(), "2025-06-02", "2025-06-02", FilterRules{});
        REQUIRE(result.kept.size() == 1);
        return result.kept[0];
    }
};

}  // namespace

TEST_CASE("miner ingests trees and derives ids") {
    MinerFixture fx;
    SnapshotHistory history = fx.history();
    std::string id = fx.miner.ingest_commit_tree(history, "cccc000000000002");
    CHECK(id == "cccc000000000002.toy-0.1");
    CHECK(fx.miner.ingest_commit_tree(history, "cccc000000000002") == id);  // idempotent
    VersionManifest m = fx.store.load_manifest(id);
    CHECK(m.entries.size() == 2);

    FileEdit edit = fx.mined_edit();
    CHECK(fx.miner.task_id_for(edit) == "cccc000-lib-algebra");
}

TEST_CASE("synthesis contract exposes the diff and both snapshots") {
    MinerFixture fx;
    SnapshotHistory history = fx.history();
    FileEdit edit = fx.mined_edit();

    TaskContract c = fx.miner.synthesis_contract(edit, history);
    CHECK(c.id == "cccc000-lib-algebra-synth");
    CHECK(c.kind == TaskKind::InstructionSynthesis);
    CHECK(c.env.commit == "cccc000000000001");
    CHECK(c.verification.success_rule == SuccessRule::StructuredSubmission);
    CHECK_FALSE(c.verification.require_compile);
    CHECK(c.objective.structured_fields.at("file") == "lib/algebra.toy");
    CHECK(c.objective.structured_fields.at("diff").find("+thm alg_six") != std::string::npos);
    CHECK(c.objective.structured_fields.at("reference_pre") == "cccc000000000001.toy-0.1");
    CHECK(c.objective.structured_fields.at("reference_post") == "cccc000000000002.toy-0.1");
    CHECK(validate_contract(c, fx.store.lookup()).empty());

    Instruction ins = fx.miner.synthesize_instruction(edit, history, fx.runtime,
                                                      std::make_shared<RuleBasedClient>(),
                                                      RunConfig{});
    CHECK(ins.complete());
    CHECK(ins.title.find("alg_two") != std::string::npos);
    CHECK_FALSE(lint_instruction(ins, edit).has_value());
}

TEST_CASE("task contract pins the pre-edit tree minus the edited file") {
    MinerFixture fx;
    SnapshotHistory history = fx.history();
    FileEdit edit = fx.mined_edit();
    Instruction ins{"Grow the algebra file", "Add the five follow-up theorems.",
                    "Lean on alg_one and base_obj."};

    TaskContract c = fx.miner.task_contract(edit, history, ins);
    CHECK(c.id == "cccc000-lib-algebra");
    CHECK(c.kind == TaskKind::ProofEngineering);
    CHECK(c.verification.require_semantic);
    CHECK(c.verification.judge_count == 3);
    CHECK(c.objective.target_file == "lib/algebra.toy");
    CHECK(c.objective.instruction.find("Grow the algebra file") == 0);
    REQUIRE(c.nested.size() == 1);
    CHECK(c.nested[0].kind == TaskKind::Judgment);
    CHECK(validate_contract(c, fx.store.lookup()).empty());

    // The pinned environment holds the parent tree without the edited file.
    VersionManifest env = fx.store.load_manifest(
        ContentStore::manifest_id(c.env.commit, "toy-0.1"));
    CHECK(env.entries.count("lib/base.toy") == 1);
    CHECK(env.entries.count("lib/algebra.toy") == 0);

    // The original bytes ride along as a reference manifest.
    REQUIRE(c.objective.structured_fields.count("reference") == 1);
    VersionManifest ref =
        fx.store.load_manifest(c.objective.structured_fields.at("reference"));
    CHECK(ref.entries.count("lib/algebra.toy") == 1);

    ValidationResult validation = fx.miner.validate_task(c, edit, fx.runtime, RunConfig{});
    CHECK(validation.validated);
    CHECK(validation.verdict.final == FinalOutcome::Pass);
    CHECK(validation.verdict.compiled);
    CHECK(validation.verdict.semantic == SemanticOutcome::Accept);
    REQUIRE(validation.judges.size() == 3);
    for (const JudgeVerdict& v : validation.judges)
        CHECK(v.decision == JudgeDecision::Accept);
}

TEST_CASE("bench directory stages candidates through their statuses") {
    MinerFixture fx;
    SnapshotHistory history = fx.history();
    FileEdit edit = fx.mined_edit();
    fs::path bench = fx.tmp / "bench";

    fs::path task_dir = fx.miner.write_bench_candidate(bench, edit);
    CHECK(task_dir.filename() == "cccc000-lib-algebra");
    CHECK(ape_test::read_file(task_dir / "gold.patch") ==
          render_unified(edit.file, edit.file, edit.pre_bytes, edit.post_bytes));
    json meta = json::parse(ape_test::read_file(task_dir / "meta.json"));
    CHECK(meta["status"] == "filtered");
    CHECK(meta["task_id"] == "cccc000-lib-algebra");
    CHECK(meta["effective_lines"] == 5);

    // Stage-1 candidates without a contract are skipped by the loader.
    FileEdit spare;
    spare.commit = "dddd000000000001";
    spare.parent = "cccc000000000002";
    spare.file = "lib/spare.toy";
    spare.post_bytes = "thm spare_one : needs base_obj ; s\n";
    fx.miner.write_bench_candidate(bench, spare);
    CHECK(Miner::load_bench_dir(bench).empty());

    FileEdit round = fx.miner.edit_from_meta(task_dir);
    CHECK(round.commit == edit.commit);
    CHECK(round.parent == edit.parent);
    CHECK(round.file == edit.file);
    CHECK(round.pre_bytes == edit.pre_bytes);
    CHECK(round.post_bytes == edit.post_bytes);
    CHECK(round.effective_lines_changed == edit.effective_lines_changed);

    Instruction ins{"Grow the algebra file", "Add the five follow-up theorems.",
                    "Lean on alg_one and base_obj."};
    TaskContract c = fx.miner.task_contract(edit, history, ins);
    fx.miner.attach_instruction(task_dir, c, ins);
    meta = json::parse(ape_test::read_file(task_dir / "meta.json"));
    CHECK(meta["status"] == "synthesized");
    CHECK(meta["instruction"]["title"] == "Grow the algebra file");

    ValidationResult validation = fx.miner.validate_task(c, edit, fx.runtime, RunConfig{});
    Miner::mark_validated(task_dir, validation);
    meta = json::parse(ape_test::read_file(task_dir / "meta.json"));
    CHECK(meta["status"] == "validated");
    CHECK(meta["validation"]["final"] == "pass");
    CHECK(meta["validation"]["judges"].size() == 3);

    BenchTask loaded = Miner::load_bench_task(task_dir);
    CHECK(loaded.contract.id == c.id);
    CHECK(loaded.gold_patch == ape_test::read_file(task_dir / "gold.patch"));
    CHECK(loaded.meta["status"] == "validated");

    auto all = Miner::load_bench_dir(bench);
    REQUIRE(all.size() == 1);
    CHECK(all[0].contract.id == "cccc000-lib-algebra");
    CHECK_THROWS_AS(Miner::load_bench_dir(bench / "void"), IoFailure);
}

// --- reporting -----------------------------------------------------------

namespace {

RunTrace sample_trace(const std::string& task, const std::string& model,
                      const std::string& scaffold, bool pass,
                      const std::vector<std::string>& tools, double cost_per_turn) {
    RunTrace t;
    t.run_id = "run-1";
    t.task_id = task;
    t.scaffold_id = scaffold;
    t.model = model;
    int index = 1;
    for (const std::string& tool : tools) {
        TurnRecord turn;
        turn.index = index++;
        turn.tool_calls.push_back({tool, "d-args", "d-result"});
        turn.tokens_in = 10;
        turn.tokens_out = 5;
        turn.cost = cost_per_turn;
        t.turns.push_back(turn);
    }
    t.verdict.compiled = pass;
    t.verdict.semantic = SemanticOutcome::NotRequired;
    t.verdict.final = pass ? FinalOutcome::Pass : FinalOutcome::Fail;
    if (!pass) t.verdict.failure_reason = FailureReason::TurnLimit;
    return t;
}

}  // namespace

TEST_CASE("collect_traces skips nested verification runs") {
    TempDir tmp;
    fs::path runs = tmp / "runs";
    RunTrace a = sample_trace("a-task", "m1", "s1", true, {"edit_file", "submit"}, 0.5);
    RunTrace b = sample_trace("b-task", "m2", "s2", false, {"shell"}, 2.0);
    write_trace(runs / "run-1" / "a-task", a);
    write_trace(runs / "run-1" / "b-task", b);
    write_trace(runs / "run-1" / "verify" / "a-task", a);
    write_trace(runs / "run-1" / "judges" / "a-task-judge-1", a);
    write_trace(runs / "run-1" / "c-task", a);
    fs::remove(runs / "run-1" / "c-task" / "trace.jsonl");  // verdict without trace

    std::vector<RunTrace> collected = collect_traces(runs);
    REQUIRE(collected.size() == 2);
    CHECK(collected[0].task_id == "a-task");
    CHECK(collected[1].task_id == "b-task");
    CHECK(collected[0].verdict.final == FinalOutcome::Pass);
    CHECK(collected[0].total_cost() == doctest::Approx(1.0));
    CHECK(collected[1].verdict.failure_reason == FailureReason::TurnLimit);

    CHECK(collect_traces(tmp / "elsewhere").empty());
}

TEST_CASE("build_report aggregates per model and scaffold") {
    std::vector<RunTrace> traces = {
        sample_trace("a-task", "m1", "s1", true, {"edit_file", "submit"}, 0.5),
        sample_trace("b-task", "m2", "s2", false, {"shell"}, 2.0),
    };
    json report = build_report(traces);
    CHECK(report["traces"] == 2);
    REQUIRE(report["groups"].size() == 2);

    const json& g1 = report["groups"][0];
    CHECK(g1["model"] == "m1");
    CHECK(g1["scaffold"] == "s1");
    CHECK(g1["tasks"] == 1);
    CHECK(g1["passes"] == 1);
    CHECK(g1["pass_rate"] == 1.0);
    CHECK(g1["total_cost"] == 1.0);
    CHECK(g1["mean_turns"] == 2.0);
    CHECK(g1["failure_reasons"].empty());
    REQUIRE(g1["cost_curve"].size() == 1);
    CHECK(g1["cost_curve"][0]["x"] == 1.0);
    CHECK(g1["cost_curve"][0]["pass_rate"] == 1.0);
    CHECK(g1["turn_curve"][0]["x"] == 2.0);

    const json& g2 = report["groups"][1];
    CHECK(g2["pass_rate"] == 0.0);
    CHECK(g2["failure_reasons"]["turn_limit"] == 1);

    CHECK(report["tool_usage"]["s1"]["file_ops"] == 0.5);
    CHECK(report["tool_usage"]["s1"]["submit"] == 0.5);
    CHECK(report["tool_usage"]["s2"]["shell"] == 1.0);

    json empty = build_report({});
    CHECK(empty["traces"] == 0);
    CHECK(empty["groups"].empty());
    CHECK(empty["tool_usage"].empty());
    CHECK_THROWS_AS(tool_usage_stats({}), SchemaError);

    std::string table = render_report_table(report);
    CHECK(table.find("model") != std::string::npos);
    CHECK(table.find("scaffold") != std::string::npos);
    CHECK(table.find("m1") != std::string::npos);
    CHECK(table.find("turn_limit: 1") != std::string::npos);
    CHECK(table.find("100.0%") != std::string::npos);
}
