#include "ape/runtime.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "ape/diff.hpp"
#include "ape/hash.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ape {
namespace {

std::string iso_timestamp(bool fixed) {
    if (fixed) return "1970-01-01T00:00:00Z";
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string file_slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoFailure("cannot open " + p.string());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

json judge_to_json(const JudgeVerdict& v) {
    json ratings = json::object();
    for (const auto& [dim, rating] : v.ratings) ratings[dim] = to_string(rating);
    return {{"judge_index", v.judge_index},
            {"decision", to_string(v.decision)},
            {"ratings", ratings},
            {"reasoning", v.reasoning},
            {"retries", v.retries}};
}

JudgeVerdict judge_from_json(const json& j) {
    JudgeVerdict v;
    v.judge_index = j.value("judge_index", 0);
    v.decision = judge_decision_from_string(j.at("decision").get<std::string>());
    for (const auto& [dim, rating] : j.at("ratings").items())
        v.ratings[dim] = rating_from_string(rating.get<std::string>());
    v.reasoning = j.value("reasoning", "");
    v.retries = j.value("retries", 0);
    return v;
}

}  // namespace

PriceRate PriceTable::resolve(const std::string& model) const {
    auto it = rates.find(model);
    if (it != rates.end()) return it->second;
    it = rates.find("default");
    if (it != rates.end()) return it->second;
    return {};
}

PriceTable PriceTable::standard() {
    PriceTable t;
    t.rates["default"] = {2e-6, 8e-6};
    return t;
}

std::string to_string(SemanticOutcome s) {
    switch (s) {
        case SemanticOutcome::Accept: return "accept";
        case SemanticOutcome::Reject: return "reject";
        case SemanticOutcome::NotRequired: return "not_required";
    }
    return "not_required";
}

std::string to_string(FinalOutcome f) { return f == FinalOutcome::Pass ? "pass" : "fail"; }

std::string to_string(FailureReason r) {
    switch (r) {
        case FailureReason::BudgetExhausted: return "budget_exhausted";
        case FailureReason::TurnLimit: return "turn_limit";
        case FailureReason::CompileFail: return "compile_fail";
        case FailureReason::SemanticReject: return "semantic_reject";
        case FailureReason::AgentAbort: return "agent_abort";
    }
    return "agent_abort";
}

SemanticOutcome semantic_outcome_from_string(const std::string& s) {
    if (s == "accept") return SemanticOutcome::Accept;
    if (s == "reject") return SemanticOutcome::Reject;
    if (s == "not_required") return SemanticOutcome::NotRequired;
    throw SchemaError("unknown semantic outcome '" + s + "'");
}

FinalOutcome final_outcome_from_string(const std::string& s) {
    if (s == "pass") return FinalOutcome::Pass;
    if (s == "fail") return FinalOutcome::Fail;
    throw SchemaError("unknown final outcome '" + s + "'");
}

FailureReason failure_reason_from_string(const std::string& s) {
    if (s == "budget_exhausted") return FailureReason::BudgetExhausted;
    if (s == "turn_limit") return FailureReason::TurnLimit;
    if (s == "compile_fail") return FailureReason::CompileFail;
    if (s == "semantic_reject") return FailureReason::SemanticReject;
    if (s == "agent_abort") return FailureReason::AgentAbort;
    throw SchemaError("unknown failure reason '" + s + "'");
}

bool verdict_consistent(const Verdict& v) {
    bool pass = v.compiled && v.semantic != SemanticOutcome::Reject;
    return (v.final == FinalOutcome::Pass) == pass;
}

std::string to_string(JudgeDecision d) { return d == JudgeDecision::Accept ? "accept" : "reject"; }

std::string to_string(Rating r) {
    switch (r) {
        case Rating::Excellent: return "excellent";
        case Rating::Good: return "good";
        case Rating::Fair: return "fair";
        case Rating::Poor: return "poor";
    }
    return "poor";
}

JudgeDecision judge_decision_from_string(const std::string& s) {
    if (s == "accept") return JudgeDecision::Accept;
    if (s == "reject") return JudgeDecision::Reject;
    throw SchemaError("unknown judge decision '" + s + "'");
}

Rating rating_from_string(const std::string& s) {
    if (s == "excellent") return Rating::Excellent;
    if (s == "good") return Rating::Good;
    if (s == "fair") return Rating::Fair;
    if (s == "poor") return Rating::Poor;
    throw SchemaError("unknown rating '" + s + "'");
}

JudgeDecision majority_vote(const std::vector<JudgeVerdict>& verdicts) {
    if (verdicts.empty() || verdicts.size() % 2 == 0)
        throw EvenPanelRejectedError(verdicts.size());
    std::size_t accepts = 0;
    for (const JudgeVerdict& v : verdicts)
        if (v.decision == JudgeDecision::Accept) ++accepts;
    return accepts > verdicts.size() - accepts ? JudgeDecision::Accept : JudgeDecision::Reject;
}

double RunTrace::total_cost() const {
    double total = 0.0;
    for (const TurnRecord& t : turns) total += t.cost;
    return total;
}

void write_trace(const fs::path& task_dir, const RunTrace& trace) {
    fs::create_directories(task_dir);
    {
        std::ofstream out(task_dir / "trace.jsonl", std::ios::binary | std::ios::trunc);
        if (!out) throw IoFailure("cannot write trace.jsonl");
        for (const TurnRecord& t : trace.turns) {
            json calls = json::array();
            for (const ToolCallRecord& c : t.tool_calls)
                calls.push_back({{"tool", c.tool},
                                 {"args_digest", c.args_digest},
                                 {"result_digest", c.result_digest}});
            out << json{{"index", t.index},
                        {"tool_calls", calls},
                        {"tokens_in", t.tokens_in},
                        {"tokens_out", t.tokens_out},
                        {"cost", t.cost},
                        {"timestamp", t.timestamp}}
                       .dump()
                << "\n";
        }
    }
    json judges = json::array();
    for (const JudgeVerdict& v : trace.judge_verdicts) judges.push_back(judge_to_json(v));
    json verdict = {{"task_id", trace.task_id},
                    {"run_id", trace.run_id},
                    {"scaffold", trace.scaffold_id},
                    {"model", trace.model},
                    {"compiled", trace.verdict.compiled},
                    {"semantic", to_string(trace.verdict.semantic)},
                    {"final", to_string(trace.verdict.final)},
                    {"failure_reason", trace.verdict.failure_reason
                                           ? json(to_string(*trace.verdict.failure_reason))
                                           : json(nullptr)},
                    {"submission_manifest", trace.submission_manifest},
                    {"submission", trace.submission},
                    {"turns", trace.turn_count()},
                    {"cost", trace.total_cost()},
                    {"judges", judges}};
    std::ofstream out(task_dir / "verdict.json", std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("cannot write verdict.json");
    out << verdict.dump(2) << "\n";
}

RunTrace load_trace(const fs::path& task_dir) {
    RunTrace trace;
    {
        std::ifstream in(task_dir / "trace.jsonl", std::ios::binary);
        if (!in) throw IoFailure("cannot open " + (task_dir / "trace.jsonl").string());
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            json doc = json::parse(line);
            TurnRecord t;
            t.index = doc.at("index").get<int>();
            for (const auto& c : doc.at("tool_calls"))
                t.tool_calls.push_back({c.at("tool").get<std::string>(),
                                        c.at("args_digest").get<std::string>(),
                                        c.at("result_digest").get<std::string>()});
            t.tokens_in = doc.at("tokens_in").get<std::uint64_t>();
            t.tokens_out = doc.at("tokens_out").get<std::uint64_t>();
            t.cost = doc.at("cost").get<double>();
            t.timestamp = doc.value("timestamp", "");
            trace.turns.push_back(std::move(t));
        }
    }
    json verdict = json::parse(file_slurp(task_dir / "verdict.json"));
    trace.task_id = verdict.value("task_id", "");
    trace.run_id = verdict.value("run_id", "");
    trace.scaffold_id = verdict.value("scaffold", "");
    trace.model = verdict.value("model", "");
    trace.verdict.compiled = verdict.at("compiled").get<bool>();
    trace.verdict.semantic = semantic_outcome_from_string(verdict.at("semantic").get<std::string>());
    trace.verdict.final = final_outcome_from_string(verdict.at("final").get<std::string>());
    if (!verdict.at("failure_reason").is_null())
        trace.verdict.failure_reason =
            failure_reason_from_string(verdict.at("failure_reason").get<std::string>());
    trace.submission_manifest = verdict.value("submission_manifest", "");
    trace.submission = verdict.value("submission", json::object());
    if (verdict.contains("judges"))
        for (const auto& j : verdict["judges"]) trace.judge_verdicts.push_back(judge_from_json(j));
    return trace;
}

JudgeMetrics compute_judge_metrics(const fs::path& annotations_jsonl) {
    std::ifstream in(annotations_jsonl, std::ios::binary);
    if (!in) throw IoFailure("cannot open " + annotations_jsonl.string());
    std::vector<json> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            records.push_back(json::parse(line));
        } catch (const json::parse_error& e) {
            throw SyntaxError(annotations_jsonl.string() + ":" + std::to_string(line_no) + ": " +
                              e.what());
        }
    }
    return compute_judge_metrics(records);
}

JudgeMetrics compute_judge_metrics(const std::vector<json>& records) {
    JudgeMetrics metrics;
    auto tally = [](JudgeMetrics::Cell& cell, const std::string& human, const std::string& panel,
                    const std::string& where) {
        if (human != "pass" && human != "fail")
            throw SchemaError("human label must be pass|fail at " + where);
        if (panel != "accept" && panel != "reject")
            throw SchemaError("panel label must be accept|reject at " + where);
        ++cell.total;
        bool human_pass = human == "pass";
        bool panel_accept = panel == "accept";
        if (human_pass && !panel_accept) ++cell.false_negatives;
        if (!human_pass && panel_accept) ++cell.false_positives;
    };

    for (const json& record : records) {
        std::string task_id = record.value("task_id", "<unknown>");
        if (!record.contains("human") || !record.contains("panel"))
            throw LabelMismatchError("item '" + task_id + "' lacks a human or panel side");
        const json& human = record["human"];
        const json& panel = record["panel"];
        for (const char* dim : kJudgeDimensions) {
            if (!human.contains(dim) || !panel.contains(dim))
                throw LabelMismatchError("item '" + task_id + "' lacks dimension '" + dim + "'");
            tally(metrics.by_dimension[dim], human[dim].get<std::string>(),
                  panel[dim].get<std::string>(), task_id + "/" + dim);
        }
        if (!human.contains("overall") || !panel.contains("overall"))
            throw LabelMismatchError("item '" + task_id + "' lacks an overall label");
        tally(metrics.overall, human["overall"].get<std::string>(),
              panel["overall"].get<std::string>(), task_id + "/overall");
    }

    auto finish = [](JudgeMetrics::Cell& cell) {
        if (cell.total > 0)
            cell.accuracy = static_cast<double>(cell.total - cell.false_negatives -
                                                cell.false_positives) /
                            static_cast<double>(cell.total);
    };
    for (auto& [dim, cell] : metrics.by_dimension) finish(cell);
    finish(metrics.overall);
    return metrics;
}

std::vector<CurvePoint> efficiency_curve(const std::vector<std::pair<double, bool>>& samples) {
    std::vector<CurvePoint> curve;
    if (samples.empty()) return curve;
    std::vector<std::pair<double, bool>> sorted = samples;
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    const double total = static_cast<double>(sorted.size());
    std::size_t passed = 0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (sorted[i].second) ++passed;
        bool last_at_x = i + 1 == sorted.size() || sorted[i + 1].first != sorted[i].first;
        if (last_at_x) curve.push_back({sorted[i].first, static_cast<double>(passed) / total});
    }
    return curve;
}

std::map<std::string, std::map<std::string, double>> tool_usage_stats(
    const std::vector<RunTrace>& traces) {
    if (traces.empty()) throw SchemaError("tool_usage_stats needs at least one trace");
    std::map<std::string, std::map<std::string, std::uint64_t>> counts;
    std::map<std::string, std::uint64_t> totals;
    for (const RunTrace& trace : traces)
        for (const TurnRecord& turn : trace.turns)
            for (const ToolCallRecord& call : turn.tool_calls) {
                ++counts[trace.scaffold_id][tool_family(call.tool)];
                ++totals[trace.scaffold_id];
            }
    std::map<std::string, std::map<std::string, double>> out;
    for (const auto& [scaffold, families] : counts) {
        double total = static_cast<double>(totals[scaffold]);
        for (const auto& [family, n] : families)
            out[scaffold][family] = static_cast<double>(n) / total;
    }
    return out;
}

Runtime::Runtime(ContentStore& store, WorkspaceManager& workspaces, CheckerRegistry checkers,
                 RetrievalService* retrieval)
    : store_(store),
      workspaces_(workspaces),
      checkers_(std::move(checkers)),
      retrieval_(retrieval),
      judge_client_(std::make_shared<RuleBasedClient>("rule-judge")) {}

void Runtime::set_judge_client(std::shared_ptr<ModelClient> client) {
    judge_client_ = std::move(client);
}

std::string Runtime::fresh_run_id() {
    static std::atomic<std::uint64_t> counter{0};
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                  std::chrono::system_clock::now().time_since_epoch())
                  .count();
    return "run-" + std::to_string(ms) + "-" + std::to_string(counter.fetch_add(1));
}

std::pair<RunTrace, Verdict> Runtime::execute_contract(const TaskContract& c, Scaffold& scaffold,
                                                       const RunConfig& cfg, std::string run_id) {
    std::vector<Violation> violations = validate_contract(c, store_.lookup());
    if (!violations.empty())
        throw SchemaError("contract '" + c.id + "' invalid: " + violations.front().path + ": " +
                          violations.front().detail);
    if (run_id.empty()) run_id = fresh_run_id();

    WorkspaceSet ws = workspaces_.init_workspaces(c, run_id);
    ToolContext ctx;
    ctx.ws = &ws;
    ctx.checkers = &checkers_;
    ctx.env = c.env;
    ctx.retrieval = retrieval_;
    ctx.version_id = ContentStore::manifest_id(c.env.commit, c.env.toolchain);
    ToolRegistry tools = standard_tools(ctx, c.kind);

    PriceRate rate = cfg.price_table.resolve(scaffold.model());
    BudgetMeter meter(cfg.max_turns, cfg.budget_usd, rate.input, rate.output);

    RunTrace trace;
    trace.run_id = run_id;
    trace.task_id = c.id;
    trace.scaffold_id = scaffold.id();
    trace.model = scaffold.model();

    ScaffoldRun srun;
    bool crashed = false;
    std::string crash_note;
    try {
        srun = scaffold.execute(c, tools, meter);
    } catch (const std::exception& e) {
        crashed = true;
        crash_note = e.what();
    }

    for (std::size_t i = 0; i < srun.turns.size(); ++i) {
        const ScaffoldTurn& st = srun.turns[i];
        TurnRecord record;
        record.index = static_cast<int>(i) + 1;
        record.tokens_in = st.response.usage.tokens_in;
        record.tokens_out = st.response.usage.tokens_out;
        record.cost = st.cost;
        record.timestamp = iso_timestamp(cfg.fixed_clock);
        for (const ExecutedCall& call : st.executed)
            record.tool_calls.push_back({call.call.name, sha256_hex(call.call.arguments.dump()),
                                         sha256_hex(call.result.content)});
        trace.turns.push_back(std::move(record));
    }

    fs::path task_dir = ws.root;
    {
        // Full dialogue for audit and playback; assistant entries carry the
        // complete model response so a PlaybackClient can re-drive the run.
        std::ofstream out(task_dir / "dialogue.jsonl", std::ios::binary | std::ios::trunc);
        if (!out) throw IoFailure("cannot write dialogue.jsonl");
        std::size_t turn_idx = 0;
        for (const auto& message : srun.dialogue) {
            if (message.value("role", "") == "assistant" && turn_idx < srun.turns.size()) {
                out << json{{"type", "model_response"},
                            {"response", to_json(srun.turns[turn_idx].response)}}
                           .dump()
                    << "\n";
                ++turn_idx;
            } else {
                out << json{{"type", "message"}, {"message", message}}.dump() << "\n";
            }
        }
        if (crashed)
            out << json{{"type", "message"},
                        {"message", {{"role", "system"}, {"content", "scaffold crash: " + crash_note}}}}
                       .dump()
                << "\n";
    }

    Verdict verdict;
    if (crashed || srun.aborted) {
        verdict.compiled = false;
        verdict.semantic = SemanticOutcome::NotRequired;
        verdict.final = FinalOutcome::Fail;
        verdict.failure_reason = FailureReason::AgentAbort;
    } else if (!srun.submitted) {
        verdict.compiled = false;
        verdict.semantic = SemanticOutcome::NotRequired;
        verdict.final = FinalOutcome::Fail;
        verdict.failure_reason =
            meter.budget_exhausted() ? FailureReason::BudgetExhausted : FailureReason::TurnLimit;
    } else {
        std::string snapshot_id = workspaces_.snapshot_scratch(ws);
        trace.submission_manifest = snapshot_id;
        trace.submission = srun.submission;
        verdict = verify_submission(c, snapshot_id, srun.submission, cfg, run_id,
                                    &trace.judge_verdicts);
    }
    trace.verdict = verdict;

    workspaces_.flush_audit(ws);
    write_trace(task_dir, trace);
    return {trace, verdict};
}

Verdict Runtime::verify_submission(const TaskContract& c, const std::string& snapshot_id,
                                   const json& submission, const RunConfig& cfg,
                                   const std::string& run_id, std::vector<JudgeVerdict>* out) {
    if (c.verification.success_rule == SuccessRule::StructuredSubmission &&
        !c.verification.require_compile) {
        // Structured tasks succeed on a well-formed submission alone.
        Verdict v;
        v.compiled = true;
        v.semantic = SemanticOutcome::NotRequired;
        std::vector<const char*> required;
        if (c.kind == TaskKind::InstructionSynthesis)
            required = {"title", "objectives", "guidance"};
        else if (c.kind == TaskKind::LibraryAnnotation)
            required = {"description"};
        bool well_formed = true;
        for (const char* key : required)
            if (!submission.contains(key) || !submission[key].is_string() ||
                submission[key].get<std::string>().empty())
                well_formed = false;
        if (well_formed && !submission.is_object()) well_formed = false;
        if (well_formed) {
            v.final = FinalOutcome::Pass;
        } else {
            v.final = FinalOutcome::Fail;
            v.semantic = SemanticOutcome::Reject;
            v.failure_reason = FailureReason::SemanticReject;
        }
        return v;
    }
    return dual_verify(c, snapshot_id, cfg, run_id, out);
}

std::string Runtime::snapshot_diff(const std::string& before_manifest,
                                   const std::string& after_manifest) const {
    VersionManifest before = store_.load_manifest(before_manifest);
    VersionManifest after = store_.load_manifest(after_manifest);
    std::vector<std::string> paths;
    for (const auto& [path, hash] : before.entries) paths.push_back(path);
    for (const auto& [path, hash] : after.entries)
        if (!before.entries.count(path)) paths.push_back(path);
    std::sort(paths.begin(), paths.end());

    std::string diff;
    for (const std::string& path : paths) {
        auto old_it = before.entries.find(path);
        auto new_it = after.entries.find(path);
        std::string old_text =
            old_it == before.entries.end() ? "" : store_.get_blob(old_it->second).value_or("");
        std::string new_text =
            new_it == after.entries.end() ? "" : store_.get_blob(new_it->second).value_or("");
        if (old_text == new_text) continue;
        diff += render_unified(path, path, old_text, new_text);
    }
    return diff;
}

Verdict Runtime::dual_verify(const TaskContract& c, const std::string& solution_snapshot,
                             const RunConfig& cfg, const std::string& run_id,
                             std::vector<JudgeVerdict>* out_verdicts) {
    std::string verify_run = (run_id.empty() ? fresh_run_id() : run_id) + "/verify";
    WorkspaceSet ws = workspaces_.init_workspaces(c, verify_run);
    std::string pristine_id = workspaces_.snapshot_scratch(ws);

    // Replace the seeded scratch with the submitted snapshot.
    for (const auto& entry : fs::directory_iterator(ws.scratch)) fs::remove_all(entry.path());
    VersionManifest solution = store_.load_manifest(solution_snapshot);
    for (const auto& [rel, hash] : solution.entries) {
        auto bytes = store_.get_blob(hash);
        if (!bytes) throw DanglingHashError(hash.digest_hex);
        fs::path dest = ws.scratch / fs::path(rel);
        fs::create_directories(dest.parent_path());
        std::ofstream out(dest, std::ios::binary | std::ios::trunc);
        out.write(bytes->data(), static_cast<std::streamsize>(bytes->size()));
    }

    Verdict verdict;
    CompileResult compile;
    if (c.verification.require_compile) {
        compile = checkers_.compile(ws, c.env);
        verdict.compiled = compile.ok;
    } else {
        verdict.compiled = true;
    }
    {
        json doc = to_json(compile);
        doc["required"] = c.verification.require_compile;
        std::ofstream out(ws.root / "compile.json", std::ios::binary | std::ios::trunc);
        out << doc.dump(2) << "\n";
    }

    if (!verdict.compiled) {
        // Compile gate failed: judging is skipped entirely, and the verdict
        // says so through the failure reason rather than a judge outcome.
        verdict.semantic =
            c.verification.require_semantic ? SemanticOutcome::Reject : SemanticOutcome::NotRequired;
        verdict.final = FinalOutcome::Fail;
        verdict.failure_reason = FailureReason::CompileFail;
        return verdict;
    }

    if (!c.verification.require_semantic) {
        verdict.semantic = SemanticOutcome::NotRequired;
        verdict.final = FinalOutcome::Pass;
        return verdict;
    }

    std::vector<TaskContract> judges = instantiate_nested(c, solution_snapshot);
    std::string diff = snapshot_diff(pristine_id, solution_snapshot);
    std::vector<JudgeVerdict> verdicts;
    for (std::size_t i = 0; i < judges.size(); ++i) {
        judges[i].objective.structured_fields["diff"] = diff;
        verdicts.push_back(run_judgment(judges[i], judge_client_, cfg,
                                        run_id.empty() ? verify_run : run_id,
                                        static_cast<int>(i) + 1));
    }

    JudgeDecision decision = majority_vote(verdicts);
    if (out_verdicts) *out_verdicts = verdicts;
    if (decision == JudgeDecision::Accept) {
        verdict.semantic = SemanticOutcome::Accept;
        verdict.final = FinalOutcome::Pass;
    } else {
        verdict.semantic = SemanticOutcome::Reject;
        verdict.final = FinalOutcome::Fail;
        verdict.failure_reason = FailureReason::SemanticReject;
    }
    return verdict;
}

JudgeVerdict Runtime::parse_judge_submission(const json& args, int judge_index) {
    if (!args.is_object()) throw SchemaError("judge submission is not an object");
    JudgeVerdict v;
    v.judge_index = judge_index;
    v.decision = judge_decision_from_string(args.at("decision").get<std::string>());
    const json& ratings = args.at("ratings");
    for (const char* dim : kJudgeDimensions) {
        if (!ratings.contains(dim)) throw SchemaError(std::string("missing rating ") + dim);
        v.ratings[dim] = rating_from_string(ratings[dim].get<std::string>());
    }
    v.reasoning = args.value("reasoning", "");
    return v;
}

JudgeVerdict Runtime::run_judgment(const TaskContract& judge_contract,
                                   std::shared_ptr<ModelClient> client, const RunConfig& cfg,
                                   const std::string& run_id, int judge_index) {
    if (judge_contract.kind != TaskKind::Judgment)
        throw SchemaError(std::string("run_judgment needs a judgment contract, got ") +
                          kind_to_string(judge_contract.kind));
    // One retry for malformed verdicts; each attempt is a full nested run
    // with its own trace directory.
    for (int attempt = 0; attempt < 2; ++attempt) {
        TaskContract judge = judge_contract;
        if (attempt > 0) judge.id += "-retry";
        ReactScaffold scaffold(client);
        std::string judge_run = run_id + "/judges";
        auto [trace, verdict] = execute_contract(judge, scaffold, cfg, judge_run);
        if (trace.submission_manifest.empty() && trace.submission.empty()) continue;
        try {
            JudgeVerdict v = parse_judge_submission(trace.submission, judge_index);
            v.retries = attempt;
            return v;
        } catch (const Error&) {
            continue;
        }
    }
    JudgeVerdict v;
    v.judge_index = judge_index;
    v.decision = JudgeDecision::Reject;
    for (const char* dim : kJudgeDimensions) v.ratings[dim] = Rating::Poor;
    v.reasoning = "unparseable";
    v.retries = 1;
    return v;
}

std::vector<std::pair<RunTrace, Verdict>> Runtime::run_many(
    const std::vector<TaskContract>& contracts,
    const std::function<std::unique_ptr<Scaffold>()>& scaffold_factory, const RunConfig& cfg,
    const std::string& run_id_prefix) {
    std::string prefix = run_id_prefix.empty() ? fresh_run_id() : run_id_prefix;
    std::vector<std::pair<RunTrace, Verdict>> results(contracts.size());
    std::atomic<std::size_t> next{0};
    std::mutex failure_mu;
    std::string failure;

    int workers = std::max(1, std::min<int>(cfg.parallelism, static_cast<int>(contracts.size())));
    auto worker = [&] {
        while (true) {
            std::size_t i = next.fetch_add(1);
            if (i >= contracts.size()) return;
            try {
                std::unique_ptr<Scaffold> scaffold = scaffold_factory();
                results[i] = execute_contract(contracts[i], *scaffold, cfg, prefix);
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(failure_mu);
                if (failure.empty())
                    failure = "task '" + contracts[i].id + "' failed: " + e.what();
            }
        }
    };
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (int w = 0; w < workers; ++w) threads.emplace_back(worker);
        for (std::thread& t : threads) t.join();
    }
    if (!failure.empty()) throw IoFailure(failure);
    return results;
}

}  // namespace ape
