#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ape/contract.hpp"
#include "ape/errors.hpp"
#include "ape/retrieve.hpp"
#include "ape/scaffold.hpp"
#include "ape/store.hpp"
#include "ape/verify.hpp"
#include "ape/workspace.hpp"

namespace ape {

struct PriceRate {
    double input = 0.0;   // dollars per input token
    double output = 0.0;  // dollars per output token
};

struct PriceTable {
    std::map<std::string, PriceRate> rates;  // model -> per-token rates

    /// Unknown models fall back to the "default" entry, else free.
    PriceRate resolve(const std::string& model) const;
    static PriceTable standard();
};

struct RunConfig {
    int max_turns = 100;
    double budget_usd = 3.0;
    int judge_count = 3;  // default panel size for fixtures; contracts carry their own
    int parallelism = 1;
    PriceTable price_table = PriceTable::standard();
    bool fixed_clock = false;  // pin timestamps for byte-identical replays
};

struct ToolCallRecord {
    std::string tool;
    std::string args_digest;    // sha256 of the JSON arguments
    std::string result_digest;  // sha256 of the rendered result
};

struct TurnRecord {
    int index = 1;  // contiguous from 1
    std::vector<ToolCallRecord> tool_calls;
    std::uint64_t tokens_in = 0;
    std::uint64_t tokens_out = 0;
    double cost = 0.0;
    std::string timestamp;
};

enum class SemanticOutcome { Accept, Reject, NotRequired };
enum class FinalOutcome { Pass, Fail };
enum class FailureReason { BudgetExhausted, TurnLimit, CompileFail, SemanticReject, AgentAbort };

std::string to_string(SemanticOutcome s);
std::string to_string(FinalOutcome f);
std::string to_string(FailureReason r);
SemanticOutcome semantic_outcome_from_string(const std::string& s);
FinalOutcome final_outcome_from_string(const std::string& s);
FailureReason failure_reason_from_string(const std::string& s);

struct Verdict {
    bool compiled = false;
    SemanticOutcome semantic = SemanticOutcome::NotRequired;
    FinalOutcome final = FinalOutcome::Fail;
    std::optional<FailureReason> failure_reason;

    bool operator==(const Verdict&) const = default;
};

/// Sanity-checks the Pass definition: final == Pass exactly when the
/// solution compiled and judging either accepted or was not required.
bool verdict_consistent(const Verdict& v);

enum class JudgeDecision { Accept, Reject };
enum class Rating { Excellent, Good, Fair, Poor };

std::string to_string(JudgeDecision d);
std::string to_string(Rating r);
JudgeDecision judge_decision_from_string(const std::string& s);
Rating rating_from_string(const std::string& s);

inline constexpr std::array<const char*, 3> kJudgeDimensions = {
    "semantic_correctness", "requirement_alignment", "scope_control"};

struct JudgeVerdict {
    int judge_index = 0;
    JudgeDecision decision = JudgeDecision::Reject;
    std::map<std::string, Rating> ratings;  // all three dimensions, always
    std::string reasoning;
    int retries = 0;
};

class EvenPanelRejectedError : public Error {
public:
    explicit EvenPanelRejectedError(std::size_t n)
        : Error("even-panel", "judge panel of " + std::to_string(n) +
                                  " cannot produce a strict majority") {}
};

/// Accept iff strictly more accepts than rejects; the panel must be odd and
/// nonempty so a tie cannot occur.
JudgeDecision majority_vote(const std::vector<JudgeVerdict>& verdicts);

struct RunTrace {
    std::string run_id;
    std::string task_id;
    std::string scaffold_id;
    std::string model;
    std::vector<TurnRecord> turns;
    Verdict verdict;
    std::string submission_manifest;  // snapshot id; empty when never submitted
    nlohmann::json submission = nlohmann::json::object();
    std::vector<JudgeVerdict> judge_verdicts;

    double total_cost() const;
    int turn_count() const { return static_cast<int>(turns.size()); }
};

void write_trace(const std::filesystem::path& task_dir, const RunTrace& trace);
RunTrace load_trace(const std::filesystem::path& task_dir);

class LabelMismatchError : public Error {
public:
    explicit LabelMismatchError(const std::string& what) : Error("label-mismatch", what) {}
};

struct JudgeMetrics {
    struct Cell {
        int total = 0;
        int false_negatives = 0;  // human Pass, panel Reject
        int false_positives = 0;  // human Fail, panel Accept
        double accuracy = 0.0;    // agreements / total
    };
    std::map<std::string, Cell> by_dimension;
    Cell overall;
};

/// Reads a JSONL file of {task_id, human: {overall, <dims>...}, panel:
/// {overall, <dims>...}} with human values pass|fail and panel values
/// accept|reject. A record missing either side raises LabelMismatchError.
JudgeMetrics compute_judge_metrics(const std::filesystem::path& annotations_jsonl);
JudgeMetrics compute_judge_metrics(const std::vector<nlohmann::json>& records);

struct CurvePoint {
    double x = 0.0;          // cost or turn threshold
    double pass_rate = 0.0;  // fraction of samples passing within x
};

/// Step curve of pass rate against spend: for each distinct sample cost x,
/// the fraction of all samples that passed at cost ≤ x. Non-decreasing by
/// construction.
std::vector<CurvePoint> efficiency_curve(const std::vector<std::pair<double, bool>>& samples);

/// Per-scaffold tool family usage fractions (file_ops, shell, retrieve,
/// execute, submit, other), pooled over each scaffold's traces.
std::map<std::string, std::map<std::string, double>> tool_usage_stats(
    const std::vector<RunTrace>& traces);

/// Orchestrates contract execution: workspace setup, the scaffold loop
/// under budget and turn limits, dual verification with nested judgment
/// panels, and trace serialization under runs/<run-id>/<task-id>/.
class Runtime {
public:
    Runtime(ContentStore& store, WorkspaceManager& workspaces, CheckerRegistry checkers,
            RetrievalService* retrieval = nullptr);

    /// Judges execute as nested contracts through this client; defaults to
    /// the deterministic rule-based client.
    void set_judge_client(std::shared_ptr<ModelClient> client);

    std::pair<RunTrace, Verdict> execute_contract(const TaskContract& c, Scaffold& scaffold,
                                                  const RunConfig& cfg, std::string run_id = "");

    /// Compile gate first; judgment panel only when compilation passed and
    /// the contract requires semantic review.
    Verdict dual_verify(const TaskContract& c, const std::string& solution_snapshot,
                        const RunConfig& cfg, const std::string& run_id = "",
                        std::vector<JudgeVerdict>* out_verdicts = nullptr);

    /// Executes one judgment contract as a nested run and parses the
    /// submitted verdict; malformed output is retried once, then recorded
    /// as a Reject with reasoning "unparseable".
    JudgeVerdict run_judgment(const TaskContract& judge_contract,
                              std::shared_ptr<ModelClient> client, const RunConfig& cfg,
                              const std::string& run_id, int judge_index);

    static JudgeVerdict parse_judge_submission(const nlohmann::json& args, int judge_index);

    /// Unified diff between two snapshot manifests (the judge-facing view
    /// of what the agent changed).
    std::string snapshot_diff(const std::string& before_manifest,
                              const std::string& after_manifest) const;

    /// Executes contracts with up to cfg.parallelism workers; results in
    /// input order.
    std::vector<std::pair<RunTrace, Verdict>> run_many(
        const std::vector<TaskContract>& contracts,
        const std::function<std::unique_ptr<Scaffold>()>& scaffold_factory, const RunConfig& cfg,
        const std::string& run_id_prefix = "");

    std::string fresh_run_id();

    ContentStore& store() { return store_; }
    WorkspaceManager& workspaces() { return workspaces_; }
    const CheckerRegistry& checkers() const { return checkers_; }

private:
    Verdict verify_submission(const TaskContract& c, const std::string& snapshot_id,
                              const nlohmann::json& submission, const RunConfig& cfg,
                              const std::string& run_id, std::vector<JudgeVerdict>* out);

    ContentStore& store_;
    WorkspaceManager& workspaces_;
    CheckerRegistry checkers_;
    RetrievalService* retrieval_;
    std::shared_ptr<ModelClient> judge_client_;
};

}  // namespace ape
