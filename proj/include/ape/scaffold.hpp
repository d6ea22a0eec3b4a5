#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ape/contract.hpp"
#include "ape/model_client.hpp"
#include "ape/retrieve.hpp"
#include "ape/verify.hpp"
#include "ape/workspace.hpp"

namespace ape {

struct ToolSpec {
    std::string name;
    std::string description;
    std::map<std::string, std::string> args;  // arg name -> type hint
};

struct ToolResult {
    bool ok = true;
    std::string content;  // rendered text fed back to the model verbatim
};

class ToolRegistry {
public:
    using Handler = std::function<ToolResult(const nlohmann::json& args)>;

    void add(ToolSpec spec, Handler handler);
    bool has(const std::string& name) const;
    const ToolSpec* find(const std::string& name) const;
    std::vector<ToolSpec> specs() const;
    nlohmann::json specs_json() const;

    /// Unknown names yield ok=false with an explanatory message (the loop
    /// continues); handler exceptions are likewise turned into error text.
    ToolResult dispatch(const std::string& name, const nlohmann::json& args) const;

private:
    std::vector<std::string> order_;
    std::map<std::string, std::pair<ToolSpec, Handler>> tools_;
};

/// Family grouping used by usage statistics: file_ops, shell, retrieve,
/// execute, submit (anything else counts as other).
std::string tool_family(const std::string& tool_name);

struct ToolContext {
    WorkspaceSet* ws = nullptr;
    const CheckerRegistry* checkers = nullptr;
    EnvironmentBinding env;
    RetrievalService* retrieval = nullptr;  // optional
    std::string version_id;                 // manifest id for retrieval scoping
};

/// Standard tool set for a task kind. Mutating tools (edit_file, execute)
/// exist only for proving and engineering tasks; judgment, synthesis and
/// annotation tasks get the read-only set. All kinds include submit.
ToolRegistry standard_tools(const ToolContext& ctx, TaskKind kind);

/// Tracks turns and dollars against the configured limits. A new turn may
/// start only while both the turn count and the accumulated cost are
/// strictly under their limits; a turn in flight always completes.
class BudgetMeter {
public:
    BudgetMeter(int max_turns, double budget_usd, double rate_in, double rate_out)
        : max_turns_(max_turns), budget_(budget_usd), rate_in_(rate_in), rate_out_(rate_out) {}

    bool may_start_turn() const { return turns_ < max_turns_ && cost_ < budget_; }
    void add_turn(const TokenUsage& usage);
    double turn_cost(const TokenUsage& usage) const;
    int turns() const { return turns_; }
    double cost() const { return cost_; }
    bool budget_exhausted() const { return cost_ >= budget_; }
    bool turns_exhausted() const { return turns_ >= max_turns_; }

private:
    int max_turns_;
    double budget_;
    double rate_in_;
    double rate_out_;
    int turns_ = 0;
    double cost_ = 0.0;
};

struct ExecutedCall {
    ToolCall call;
    ToolResult result;
};

struct ScaffoldTurn {
    ModelResponse response;
    std::vector<ExecutedCall> executed;
    double cost = 0.0;
};

struct ScaffoldRun {
    bool submitted = false;
    nlohmann::json submission = nlohmann::json::object();
    bool aborted = false;  // the agent process ended without submitting
    std::string abort_note;
    std::vector<ScaffoldTurn> turns;
    nlohmann::json dialogue = nlohmann::json::array();  // chat messages, in order
};

/// A scaffold executes one contract against a prepared workspace and tool
/// registry; the bundled ReAct loop and the external-process adapter both
/// satisfy this interface, which is what makes scaffolds interchangeable.
class Scaffold {
public:
    virtual ~Scaffold() = default;
    virtual std::string id() const = 0;
    /// Model identifier used for price-table lookup; external adapters
    /// report usage in already-counted tokens under their own id.
    virtual std::string model() const { return id(); }
    virtual ScaffoldRun execute(const TaskContract& c, ToolRegistry& tools, BudgetMeter& meter) = 0;
};

/// Bundled ReAct-style loop: model call, tool dispatch, feed the result
/// back, repeat until submit or limits.
class ReactScaffold : public Scaffold {
public:
    explicit ReactScaffold(std::shared_ptr<ModelClient> client) : client_(std::move(client)) {}
    std::string id() const override { return "ape-react"; }
    std::string model() const override { return client_->model_name(); }
    ScaffoldRun execute(const TaskContract& c, ToolRegistry& tools, BudgetMeter& meter) override;

    static std::string system_prompt(const TaskContract& c);  // always < 4KB
    static std::string user_prompt(const TaskContract& c);

private:
    std::shared_ptr<ModelClient> client_;
};

/// Local HTTP bridge for external scaffolds: POST /tools/<name> with the
/// tool's JSON args (an optional "usage" object bills tokens), POST /submit
/// closes the task. GET /task describes the objective.
class ToolServer {
public:
    ToolServer(const TaskContract& c, ToolRegistry& tools, BudgetMeter& meter);
    ~ToolServer();

    int port() const { return port_; }
    void stop();
    bool submitted() const;
    ScaffoldRun take_run();  // after stop; collected turns + submission

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    int port_ = 0;
};

/// Runs an external adapter process against a ToolServer. The child
/// receives APE_TOOL_ENDPOINT, APE_TASK_ID, APE_TASK_KIND and
/// APE_INSTRUCTION in its environment; all file access goes through the
/// endpoint, never through direct paths.
class ExternalHttpScaffold : public Scaffold {
public:
    ExternalHttpScaffold(std::vector<std::string> command, std::string id = "external",
                         std::chrono::milliseconds wall_limit = std::chrono::milliseconds(60000));
    std::string id() const override { return id_; }
    ScaffoldRun execute(const TaskContract& c, ToolRegistry& tools, BudgetMeter& meter) override;

    /// Extra environment for the adapter process, on top of the APE_* set.
    void set_env(std::string key, std::string value);

private:
    std::vector<std::string> command_;
    std::string id_;
    std::chrono::milliseconds wall_limit_;
    std::vector<std::pair<std::string, std::string>> extra_env_;
};

}  // namespace ape
