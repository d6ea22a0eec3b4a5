#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ape/contract.hpp"
#include "ape/errors.hpp"
#include "ape/runtime.hpp"
#include "ape/store.hpp"

namespace ape {

class HistoryUnavailableError : public Error {
public:
    explicit HistoryUnavailableError(const std::string& what)
        : Error("history-unavailable", what) {}
};

class SynthesisFailedError : public Error {
public:
    explicit SynthesisFailedError(const std::string& what) : Error("synthesis-failed", what) {}
};

struct CommitInfo {
    std::string id;
    std::string parent;  // empty for the root commit
    std::string date;    // ISO date, lexicographically comparable
    std::string message;
};

struct FileChange {
    std::string path;
    std::optional<std::string> pre;   // nullopt when the file is new
    std::optional<std::string> post;  // nullopt when the file was deleted
};

/// Read-only view of a commit history. Two implementations: a
/// directory-of-snapshots fixture format (no VCS needed) and a wrapper over
/// an external `git` binary.
class History {
public:
    virtual ~History() = default;
    virtual std::vector<CommitInfo> commits() const = 0;  // chronological order
    virtual std::vector<FileChange> changes(const std::string& commit_id) const = 0;
    virtual std::map<std::string, std::string> tree(const std::string& commit_id) const = 0;
};

/// Fixture history: <root>/history.json is a chronological array of
/// {"id", "date", "message", "tree"} records, where "tree" names a
/// subdirectory holding the full file tree at that commit. Parents are
/// implied by array order.
class SnapshotHistory : public History {
public:
    explicit SnapshotHistory(std::filesystem::path root);
    std::vector<CommitInfo> commits() const override;
    std::vector<FileChange> changes(const std::string& commit_id) const override;
    std::map<std::string, std::string> tree(const std::string& commit_id) const override;

private:
    const CommitInfo& find(const std::string& commit_id) const;
    std::filesystem::path tree_dir(const std::string& commit_id) const;

    std::filesystem::path root_;
    std::vector<CommitInfo> commits_;
    std::map<std::string, std::string> tree_names_;
};

/// History over a local git repository, via the external `git` command.
class GitHistory : public History {
public:
    explicit GitHistory(std::filesystem::path repo);
    std::vector<CommitInfo> commits() const override;
    std::vector<FileChange> changes(const std::string& commit_id) const override;
    std::map<std::string, std::string> tree(const std::string& commit_id) const override;

private:
    std::string run_git(const std::vector<std::string>& args, bool allow_fail = false) const;
    std::filesystem::path repo_;
};

struct CommentSyntax {
    std::vector<std::string> line_prefixes;
    std::string block_open;
    std::string block_close;
    bool nested = true;

    static CommentSyntax toy();   // "--" lines, nested "/- ... -/" blocks
    static CommentSyntax none();  // every line counts
};

/// Per-line flag: true when the line still has content after comments and
/// whitespace are removed. Block-comment state carries across lines.
std::vector<bool> effective_line_mask(const std::string& text, const CommentSyntax& syntax);

/// Changed lines between pre and post, excluding lines that are blank or
/// comment-only. A contiguous replacement block counts once per line:
/// max(effective removed, effective added), so a pure rewrite of N lines is
/// N, not 2N, and pure additions or deletions count naturally.
int count_effective_lines(const std::string& pre, const std::string& post,
                          const CommentSyntax& syntax);

struct FileEdit {
    std::string commit;  // post-edit commit
    std::string parent;  // pre-edit commit, empty for root
    std::string file;
    std::string pre_bytes;  // empty for new files
    std::string post_bytes;
    int effective_lines_changed = 0;
    int raw_lines_changed = 0;
    std::string date;
    std::string message;
};

struct FilterRules {
    int min_effective = 5;
    int max_effective = 100;
    CommentSyntax comments = CommentSyntax::toy();
    std::vector<std::string> decl_keywords = {"thm"};  // content predicate
    int max_hunk_groups = 3;  // more scattered groups than this is rejected
    int scatter_gap = 50;     // groups are separated by more unchanged lines than this
    bool require_post_check = true;
};

enum class RejectReason {
    BelowMin,
    AboveMax,
    NoDeclChange,
    Scattered,
    PostCheckFail,
    DeletedFile,
    BinaryFile,
};
const char* to_string(RejectReason r);

struct RejectionRecord {
    std::string commit;
    std::string file;
    RejectReason reason = RejectReason::BelowMin;
    int effective_lines = 0;
    std::string detail;
};

struct MineResult {
    std::vector<FileEdit> kept;
    std::vector<RejectionRecord> rejected;
    int commits_scanned = 0;
};

/// Scans commits with since <= date <= until (ISO dates, inclusive; both
/// required) and classifies every changed file of every commit as either a
/// kept FileEdit or a logged rejection. Deterministic for a fixed history
/// and rule set.
MineResult filter_commits(const History& history, const std::string& since,
                          const std::string& until, const FilterRules& rules);

nlohmann::json mine_result_to_json(const MineResult& result);

struct Instruction {
    std::string title;
    std::string objectives;
    std::string guidance;

    bool complete() const;
};

nlohmann::json instruction_to_json(const Instruction& ins);
Instruction instruction_from_json(const nlohmann::json& j);

/// Renders the instruction into the task text an agent sees.
std::string render_instruction(const Instruction& ins, const std::string& file);

/// Groundedness lint: returns a reason when the instruction quotes line
/// numbers or reproduces a changed diff line verbatim, empty optional when
/// clean.
std::optional<std::string> lint_instruction(const Instruction& ins, const FileEdit& edit);

struct ValidationResult {
    bool validated = false;
    Verdict verdict;
    std::vector<JudgeVerdict> judges;
};

struct BenchTask {
    TaskContract contract;
    std::string gold_patch;
    nlohmann::json meta;
};

/// Builds benchmark tasks out of kept FileEdits: ingests pre/post trees into
/// the store, runs instruction synthesis as a nested contract, and validates
/// the gold patch through dual verification.
class Miner {
public:
    Miner(ContentStore& store, std::string toolchain = "toy-0.1");

    /// Ingests the full tree at a commit; returns the manifest id. The
    /// manifest commit is the history id when it is already lowercase hex,
    /// else a hash of it.
    std::string ingest_commit_tree(const History& history, const std::string& commit_id);

    std::string task_id_for(const FileEdit& edit) const;

    /// InstructionSynthesis contract whose agent sees the gold diff and both
    /// snapshots as read-only references.
    TaskContract synthesis_contract(const FileEdit& edit, const History& history);

    Instruction synthesize_instruction(const FileEdit& edit, const History& history,
                                       Runtime& runtime, std::shared_ptr<ModelClient> client,
                                       const RunConfig& cfg, int retry_budget = 2);

    /// The benchmark task itself: ProofEngineering against the pre-edit tree
    /// with the edited file lifted out of the pinned environment (the agent
    /// rewrites it in scratch; the original rides along as reference).
    TaskContract task_contract(const FileEdit& edit, const History& history,
                               const Instruction& ins, int judge_count = 3);

    /// Applies the gold post-edit bytes as a synthetic submission and runs
    /// dual verification.
    ValidationResult validate_task(const TaskContract& contract, const FileEdit& edit,
                                   Runtime& runtime, const RunConfig& cfg);

    /// Stage 1 (mine): writes bench/<task-id>/{gold.patch, meta.json} and
    /// parks pre/post bytes in the store; meta records their hashes.
    std::filesystem::path write_bench_candidate(const std::filesystem::path& bench_dir,
                                                const FileEdit& edit);
    /// Stage 2 (synth): adds task.contract.json and the instruction.
    void attach_instruction(const std::filesystem::path& task_dir, const TaskContract& contract,
                            const Instruction& ins);
    /// Stage 3 (validate): records the gold-patch verdict in meta.json.
    static void mark_validated(const std::filesystem::path& task_dir,
                               const ValidationResult& result);

    /// Rebuilds the FileEdit from meta.json plus store blobs.
    FileEdit edit_from_meta(const std::filesystem::path& task_dir) const;

    static BenchTask load_bench_task(const std::filesystem::path& task_dir);
    /// Loads every synthesized task (dirs still missing task.contract.json
    /// are skipped; they are stage-1 candidates).
    static std::vector<BenchTask> load_bench_dir(const std::filesystem::path& bench_dir);

private:
    std::string env_commit_for(const FileEdit& edit) const;
    std::string publish_single_file(const std::string& tag, const FileEdit& edit,
                                    const std::string& bytes);

    ContentStore& store_;
    std::string toolchain_;
};

/// Loads every finished trace under a runs root, skipping nested
/// verification and judge sub-runs.
std::vector<RunTrace> collect_traces(const std::filesystem::path& runs_root);

/// Aggregates traces into per model/scaffold pass rates, efficiency curves
/// (cost and turns), failure histograms, and tool usage fractions.
nlohmann::json build_report(const std::vector<RunTrace>& traces);

std::string render_report_table(const nlohmann::json& report);

}  // namespace ape
