#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ape/errors.hpp"

namespace ape {

/// The five task instantiations. Exhaustive; serialization uses the
/// snake_case names in kind_to_string().
enum class TaskKind {
    TheoremProving,
    ProofEngineering,
    Judgment,
    InstructionSynthesis,
    LibraryAnnotation,
};

const char* kind_to_string(TaskKind k);
std::optional<TaskKind> kind_from_string(std::string_view s);

enum class SuccessRule { CompileOnly, DualVerification, StructuredSubmission };

const char* success_rule_to_string(SuccessRule r);
std::optional<SuccessRule> success_rule_from_string(std::string_view s);

/// Pins where a task executes: repository commit, toolchain, and which
/// checker verifies it. A manifest for (commit, toolchain) must exist in the
/// store before execution.
struct EnvironmentBinding {
    std::string commit;     // 7-40 lowercase hex chars
    std::string toolchain;  // opaque version string
    std::string checker;    // CheckerRegistry id, e.g. "toy"

    bool operator==(const EnvironmentBinding&) const = default;
};

struct Objective {
    std::string instruction;  // nonempty: NL objective, theorem statement, or criteria
    std::optional<std::string> target_file;  // relative, resolves inside the target workspace
    std::map<std::string, std::string> structured_fields;

    bool operator==(const Objective&) const = default;
};

struct BoundarySpec {
    std::vector<std::string> read_only;  // glob patterns
    std::vector<std::string> blocked;    // glob patterns; disjoint from read_only
    std::string writable_root = "scratch";

    bool operator==(const BoundarySpec&) const = default;
};

struct VerificationProtocol {
    bool require_compile = true;
    bool require_semantic = false;
    int judge_count = 1;  // odd, >= 1; defaults to 3 when require_semantic
    SuccessRule success_rule = SuccessRule::CompileOnly;

    bool operator==(const VerificationProtocol&) const = default;
};

/// Declarative unit every other module consumes. Immutable after parse; safe
/// to share across concurrent executions.
struct TaskContract {
    std::string id;
    TaskKind kind = TaskKind::TheoremProving;
    EnvironmentBinding env;
    Objective objective;
    BoundarySpec boundaries;
    VerificationProtocol verification;
    std::vector<TaskContract> nested;  // judgment sub-contract templates

    bool operator==(const TaskContract&) const = default;
};

enum class ViolationCode {
    EmptyId,
    DuplicateNestedId,
    InvalidCommit,
    UnknownEnvironment,
    EmptyInstruction,
    TargetFileEscapes,
    InvalidGlob,
    BoundaryOverlap,
    WritableRootBlocked,
    JudgeCountNotPositive,
    OddJudgeCountRequired,
    MissingJudgmentTemplate,
    SemanticRequiresDualVerification,
    StructuredSubmissionKind,
    NestedKindNotJudgment,
};

const char* to_string(ViolationCode code);

/// One invariant breach. Violations are values, never exceptions: validation
/// is total over arbitrary parsed input.
struct Violation {
    ViolationCode code;
    std::string path;    // field path, e.g. "verification.judge_count"
    std::string detail;  // offending value or pattern

    bool operator==(const Violation&) const = default;
};

/// Answers "does a manifest exist for (commit, toolchain)?". A null lookup
/// skips environment resolution (used by the CLI when no store is given).
using ManifestLookup = std::function<bool(const std::string& commit, const std::string& toolchain)>;

/// Parses one `*.contract.json` document.
/// Throws SyntaxError for malformed JSON, SchemaError for missing/unknown
/// fields, bad types, invalid glob patterns, or read_only/blocked overlap
/// (the message names the field or pattern).
TaskContract parse_contract(const std::string& source);

/// Canonical serialization; parse_contract(serialize_contract(c)) == c for
/// every valid contract.
std::string serialize_contract(const TaskContract& c, int indent = 2);

std::vector<Violation> validate_contract(const TaskContract& c, const ManifestLookup& store_view);

class NotSemanticTaskError : public Error {
public:
    explicit NotSemanticTaskError(const std::string& id)
        : Error("not-semantic-task", "contract '" + id + "' does not require semantic verification") {}
};

/// Expands the parent's judgment template into judge_count concrete
/// contracts, differing only in id suffix. Each child inherits the parent
/// environment and is granted read-only access to the solution snapshot via
/// its structured fields ("reference" => materialized read-only workspace).
std::vector<TaskContract> instantiate_nested(const TaskContract& parent,
                                             const std::string& solution_ref);

/// A minimal judgment template suitable for embedding in a semantic
/// contract's `nested` list.
TaskContract default_judgment_template(const EnvironmentBinding& env);

}  // namespace ape
