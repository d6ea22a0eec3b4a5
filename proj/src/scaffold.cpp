#include "ape/scaffold.hpp"

#include <atomic>
#include <cassert>
#include <mutex>
#include <sstream>
#include <thread>

#include <signal.h>
#include <stdlib.h>
#include <sys/wait.h>
#include <unistd.h>

#include <httplib.h>

#include "ape/diff.hpp"

using nlohmann::json;

namespace ape {
namespace {

constexpr std::size_t kReadCap = 16384;
constexpr std::size_t kDiagnosticCap = 20;

ToolResult guard(const std::function<ToolResult()>& body) {
    try {
        return body();
    } catch (const Error& e) {
        return {false, e.what()};
    } catch (const std::exception& e) {
        return {false, std::string("tool failed: ") + e.what()};
    }
}

std::string capped(std::string content) {
    if (content.size() > kReadCap) {
        content.resize(kReadCap);
        content += "\n... truncated ...";
    }
    return content;
}

std::string render_listing(const std::vector<DirEntry>& entries) {
    if (entries.empty()) return "(empty)";
    std::string out;
    for (const DirEntry& e : entries) out += e.name + (e.is_dir ? "/" : "") + "\n";
    return out;
}

std::string render_hits(const std::vector<SearchHit>& hits) {
    if (hits.empty()) return "no results";
    std::ostringstream out;
    for (const SearchHit& h : hits) {
        char score[32];
        snprintf(score, sizeof score, "%.3f", h.score);
        out << h.decl.kind << " " << h.decl.name << " : " << h.decl.signature << "  [score "
            << score << ", " << h.decl.file << "]\n";
    }
    return out.str();
}

std::vector<std::string> shell_tokens(const std::string& command) {
    std::vector<std::string> tokens;
    std::istringstream in(command);
    std::string t;
    while (in >> t) tokens.push_back(t);
    return tokens;
}

/// In-process stand-ins for the allowed read-only shell commands, running
/// entirely through the boundary-checked workspace API. No subprocess, no
/// network, no writes.
ToolResult run_shell(const ToolContext& ctx, const std::string& command) {
    std::vector<std::string> argv = shell_tokens(command);
    if (argv.empty()) return {false, "empty command"};
    const std::string& cmd = argv[0];

    if (cmd == "ls") {
        std::string path = argv.size() > 1 ? argv[1] : "scratch";
        return {true, render_listing(list_visible(*ctx.ws, path))};
    }
    if (cmd == "cat") {
        if (argv.size() < 2) return {false, "cat: missing file"};
        return {true, capped(read_workspace_file(*ctx.ws, argv[1]))};
    }
    if (cmd == "head") {
        std::size_t n = 10, i = 1;
        if (argv.size() > 2 && argv[1] == "-n") {
            n = static_cast<std::size_t>(std::stoul(argv[2]));
            i = 3;
        }
        if (i >= argv.size()) return {false, "head: missing file"};
        SplitText text = split_lines(read_workspace_file(*ctx.ws, argv[i]));
        std::string out;
        for (std::size_t k = 0; k < text.lines.size() && k < n; ++k) out += text.lines[k] + "\n";
        return {true, out};
    }
    if (cmd == "wc") {
        if (argv.size() < 2) return {false, "wc: missing file"};
        std::string content = read_workspace_file(*ctx.ws, argv[1]);
        SplitText text = split_lines(content);
        return {true, std::to_string(text.lines.size()) + " " +
                          std::to_string(whitespace_token_count(content)) + " " +
                          std::to_string(content.size()) + " " + argv[1]};
    }
    if (cmd == "grep") {
        if (argv.size() < 3) return {false, "grep: usage: grep <text> <file...>"};
        std::string out;
        for (std::size_t i = 2; i < argv.size(); ++i) {
            SplitText text = split_lines(read_workspace_file(*ctx.ws, argv[i]));
            for (std::size_t k = 0; k < text.lines.size(); ++k)
                if (text.lines[k].find(argv[1]) != std::string::npos)
                    out += argv[i] + ":" + std::to_string(k + 1) + ":" + text.lines[k] + "\n";
        }
        return {true, out.empty() ? "no matches" : out};
    }
    if (cmd == "diff") {
        if (argv.size() < 3) return {false, "diff: usage: diff <a> <b>"};
        std::string a = read_workspace_file(*ctx.ws, argv[1]);
        std::string b = read_workspace_file(*ctx.ws, argv[2]);
        std::string out = render_unified(argv[1], argv[2], a, b);
        return {true, out.empty() ? "files identical" : capped(out)};
    }
    return {false, "command not allowed: " + cmd +
                       " (allowed: ls, cat, head, wc, grep, diff; read-only, fixed-string)"};
}

}  // namespace

void ToolRegistry::add(ToolSpec spec, Handler handler) {
    std::string name = spec.name;
    if (!tools_.count(name)) order_.push_back(name);
    tools_.insert_or_assign(std::move(name), std::pair(std::move(spec), std::move(handler)));
}

bool ToolRegistry::has(const std::string& name) const { return tools_.count(name) > 0; }

const ToolSpec* ToolRegistry::find(const std::string& name) const {
    auto it = tools_.find(name);
    return it == tools_.end() ? nullptr : &it->second.first;
}

std::vector<ToolSpec> ToolRegistry::specs() const {
    std::vector<ToolSpec> out;
    for (const std::string& name : order_) out.push_back(tools_.at(name).first);
    return out;
}

json ToolRegistry::specs_json() const {
    json out = json::array();
    for (const ToolSpec& spec : specs())
        out.push_back({{"name", spec.name},
                       {"description", spec.description},
                       {"args", spec.args}});
    return out;
}

ToolResult ToolRegistry::dispatch(const std::string& name, const json& args) const {
    auto it = tools_.find(name);
    if (it == tools_.end()) return {false, "unknown tool '" + name + "'"};
    const Handler& handler = it->second.second;
    return guard([&] { return handler(args.is_object() ? args : json::object()); });
}

std::string tool_family(const std::string& tool_name) {
    if (tool_name == "read_file" || tool_name == "list_files" || tool_name == "edit_file")
        return "file_ops";
    if (tool_name == "shell") return "shell";
    if (tool_name == "retrieve") return "retrieve";
    if (tool_name == "execute") return "execute";
    if (tool_name == "submit") return "submit";
    return "other";
}

ToolRegistry standard_tools(const ToolContext& ctx, TaskKind kind) {
    ToolRegistry reg;
    bool mutating = kind == TaskKind::TheoremProving || kind == TaskKind::ProofEngineering;

    reg.add({"read_file", "Read a workspace file (scratch/, target/ or reference/ path).",
             {{"path", "string"}}},
            [ctx](const json& args) {
                return guard([&]() -> ToolResult {
                    return {true, capped(read_workspace_file(*ctx.ws, args.value("path", "")))};
                });
            });
    reg.add({"list_files", "List a workspace directory. Defaults to scratch.",
             {{"path", "string"}}},
            [ctx](const json& args) {
                return guard([&]() -> ToolResult {
                    return {true,
                            render_listing(list_visible(*ctx.ws, args.value("path", "scratch")))};
                });
            });
    if (mutating) {
        reg.add({"edit_file",
                 "Replace a scratch file's content; the edit compiles atomically and returns "
                 "diagnostics.",
                 {{"path", "string"}, {"content", "string"}}},
                [ctx](const json& args) {
                    return guard([&]() -> ToolResult {
                        CompileResult result = ctx.checkers->edit_and_verify(
                            *ctx.ws, args.value("path", ""), args.value("content", ""), ctx.env);
                        return {true, render_diagnostics(result, kDiagnosticCap)};
                    });
                });
        reg.add({"execute", "Compile the scratch tree against the target library.", {}},
                [ctx](const json&) {
                    return guard([&]() -> ToolResult {
                        return {true, render_diagnostics(ctx.checkers->compile(*ctx.ws, ctx.env),
                                                         kDiagnosticCap)};
                    });
                });
        reg.add({"shell",
                 "Run a read-only command: ls, cat, head, wc, grep (fixed-string), diff.",
                 {{"command", "string"}}},
                [ctx](const json& args) {
                    return guard([&] { return run_shell(ctx, args.value("command", "")); });
                });
    }
    reg.add({"retrieve",
             "Search the target version's declarations. Modes: exact, keyword, semantic.",
             {{"query", "string"}, {"mode", "string"}, {"k", "int"}}},
            [ctx](const json& args) {
                return guard([&]() -> ToolResult {
                    if (!ctx.retrieval) return {false, "retrieval is not enabled for this run"};
                    std::string mode = args.value("mode", "keyword");
                    std::size_t k = args.value("k", std::size_t{5});
                    std::vector<SearchHit> hits =
                        ctx.retrieval->search(args.value("query", ""),
                                              search_mode_from_string(mode), ctx.version_id, k);
                    return {true, render_hits(hits)};
                });
            });
    reg.add({"submit",
             "Finish the task. File tasks submit the scratch state; structured tasks pass their "
             "fields as arguments.",
             {}},
            [](const json&) -> ToolResult { return {true, "submission received"}; });
    return reg;
}

void BudgetMeter::add_turn(const TokenUsage& usage) {
    ++turns_;
    cost_ += turn_cost(usage);
}

double BudgetMeter::turn_cost(const TokenUsage& usage) const {
    return static_cast<double>(usage.tokens_in) * rate_in_ +
           static_cast<double>(usage.tokens_out) * rate_out_;
}

std::string ReactScaffold::system_prompt(const TaskContract& c) {
    std::ostringstream out;
    out << "You operate inside an isolated task workspace with three roots: scratch/ (writable), "
           "target/ (the pinned library, read-only), reference/ (read-only context, when "
           "present).\n";
    out << "Task kind: " << kind_to_string(c.kind) << "\n";
    if (c.objective.target_file)
        out << "Working file: scratch/"
            << std::filesystem::path(*c.objective.target_file).filename().string() << "\n";
    out << "Rules: writes must stay under " << c.boundaries.writable_root
        << "/; blocked paths are invisible; call at most one tool per reply; finish with "
           "submit.\n";
    switch (c.kind) {
        case TaskKind::Judgment:
            out << "Assess the solution against the instruction along semantic_correctness, "
                   "requirement_alignment and scope_control. Submit arguments "
                   "{\"decision\": \"accept\"|\"reject\", \"ratings\": {dimension: "
                   "\"excellent\"|\"good\"|\"fair\"|\"poor\"}, \"reasoning\": \"...\"}.\n";
            break;
        case TaskKind::InstructionSynthesis:
            out << "Submit arguments {\"title\", \"objectives\", \"guidance\"} describing the "
                   "change shown in the diff without line numbers or verbatim diff content.\n";
            break;
        case TaskKind::LibraryAnnotation:
            out << "Submit arguments {\"description\"}: one concise sentence for retrieval.\n";
            break;
        default:
            out << "Edit scratch files until the checker passes, then submit.\n";
            break;
    }
    std::string prompt = out.str();
    assert(prompt.size() < 4096);
    return prompt;
}

std::string ReactScaffold::user_prompt(const TaskContract& c) {
    std::string out = "Instruction:\n" + c.objective.instruction + "\n";
    for (const auto& [key, value] : c.objective.structured_fields)
        out += "\nfield " + key + ":\n" + value + "\n";
    return out;
}

ScaffoldRun ReactScaffold::execute(const TaskContract& c, ToolRegistry& tools, BudgetMeter& meter) {
    ScaffoldRun run;
    json messages = json::array();
    messages.push_back({{"role", "system"}, {"content", system_prompt(c)}});
    messages.push_back({{"role", "user"}, {"content", user_prompt(c)}});
    json tool_specs = tools.specs_json();

    while (meter.may_start_turn()) {
        ModelResponse response = client_->complete(messages, tool_specs);
        ScaffoldTurn turn;
        turn.response = response;
        turn.cost = meter.turn_cost(response.usage);
        meter.add_turn(response.usage);

        json assistant = {{"role", "assistant"}, {"content", response.message}};
        if (!response.tool_calls.empty()) {
            json calls = json::array();
            for (const ToolCall& call : response.tool_calls)
                calls.push_back(
                    {{"id", call.id}, {"name", call.name}, {"arguments", call.arguments}});
            assistant["tool_calls"] = calls;
        }
        messages.push_back(std::move(assistant));

        bool submitted_now = false;
        for (const ToolCall& call : response.tool_calls) {
            if (call.name == "submit") {
                submitted_now = true;
                run.submission = call.arguments;
                turn.executed.push_back({call, {true, "submission received"}});
                messages.push_back({{"role", "tool"},
                                    {"tool_call_id", call.id},
                                    {"content", "submission received"}});
                break;  // calls after submit are not executed
            }
            ToolResult result = tools.dispatch(call.name, call.arguments);
            turn.executed.push_back({call, result});
            messages.push_back({{"role", "tool"},
                                {"tool_call_id", call.id},
                                {"content", (result.ok ? "" : "error: ") + result.content}});
        }
        if (response.tool_calls.empty())
            messages.push_back(
                {{"role", "user"},
                 {"content", "Reply with exactly one tool call; call submit when finished."}});

        run.turns.push_back(std::move(turn));
        if (submitted_now) {
            run.submitted = true;
            break;
        }
    }
    run.dialogue = std::move(messages);
    return run;
}

struct ToolServer::Impl {
    httplib::Server server;
    std::thread thread;
    TaskContract contract;
    ToolRegistry* tools = nullptr;
    BudgetMeter* meter = nullptr;
    std::mutex mu;
    ScaffoldRun run;
    std::atomic<bool> submitted{false};
    int next_call = 1;

    void record(const std::string& name, const json& args, const TokenUsage& usage,
                const ToolResult& result) {
        ScaffoldTurn turn;
        ToolCall call{"ext-" + std::to_string(next_call++), name, args};
        turn.response.message = "";
        turn.response.tool_calls.push_back(call);
        turn.response.usage = usage;
        turn.response.usage_explicit = true;
        turn.cost = meter->turn_cost(usage);
        turn.executed.push_back({call, result});
        run.turns.push_back(std::move(turn));
        run.dialogue.push_back({{"role", "assistant"},
                                {"content", ""},
                                {"tool_calls", json::array({{{"id", call.id},
                                                             {"name", call.name},
                                                             {"arguments", call.arguments}}})}});
        run.dialogue.push_back({{"role", "tool"},
                                {"tool_call_id", call.id},
                                {"content", (result.ok ? "" : "error: ") + result.content}});
    }
};

ToolServer::ToolServer(const TaskContract& c, ToolRegistry& tools, BudgetMeter& meter)
    : impl_(new Impl) {
    impl_->contract = c;
    impl_->tools = &tools;
    impl_->meter = &meter;

    auto parse_body = [](const std::string& body, json& args, TokenUsage& usage) {
        json doc = body.empty() ? json::object() : json::parse(body, nullptr, false);
        if (doc.is_discarded()) doc = json::object();
        if (doc.contains("args")) {
            args = doc["args"].is_object() ? doc["args"] : json::object();
            if (doc.contains("usage") && doc["usage"].is_object()) {
                usage.tokens_in = doc["usage"].value("tokens_in", std::uint64_t{0});
                usage.tokens_out = doc["usage"].value("tokens_out", std::uint64_t{0});
            }
        } else {
            args = doc.is_object() ? doc : json::object();
        }
    };

    impl_->server.Get("/task", [this](const httplib::Request&, httplib::Response& res) {
        const TaskContract& contract = impl_->contract;
        json doc = {{"task_id", contract.id},
                    {"kind", kind_to_string(contract.kind)},
                    {"instruction", contract.objective.instruction},
                    {"structured_fields", contract.objective.structured_fields},
                    {"tools", impl_->tools->specs_json()}};
        res.set_content(doc.dump(), "application/json");
    });

    impl_->server.Post(R"(/tools/([A-Za-z0-9_]+))", [this, parse_body](const httplib::Request& req,
                                                                       httplib::Response& res) {
        std::string name = req.matches[1];
        json args;
        TokenUsage usage;
        parse_body(req.body, args, usage);
        std::lock_guard<std::mutex> lock(impl_->mu);
        if (impl_->submitted) {
            res.set_content(json{{"ok", false}, {"content", "task already submitted"}}.dump(),
                            "application/json");
            return;
        }
        if (!impl_->meter->may_start_turn()) {
            res.set_content(
                json{{"ok", false}, {"content", "turn or budget limit reached; submit now"}}.dump(),
                "application/json");
            return;
        }
        if (name == "submit") {
            impl_->meter->add_turn(usage);
            impl_->run.submission = args;
            impl_->run.submitted = true;
            impl_->record(name, args, usage, {true, "submission received"});
            impl_->submitted = true;
            res.set_content(json{{"ok", true}, {"content", "submission received"}}.dump(),
                            "application/json");
            return;
        }
        ToolResult result = impl_->tools->dispatch(name, args);
        impl_->meter->add_turn(usage);
        impl_->record(name, args, usage, result);
        res.set_content(json{{"ok", result.ok}, {"content", result.content}}.dump(),
                        "application/json");
    });

    impl_->server.Post("/submit", [this, parse_body](const httplib::Request& req,
                                                     httplib::Response& res) {
        json args;
        TokenUsage usage;
        parse_body(req.body, args, usage);
        std::lock_guard<std::mutex> lock(impl_->mu);
        if (!impl_->submitted) {
            impl_->meter->add_turn(usage);
            impl_->run.submission = args;
            impl_->run.submitted = true;
            impl_->record("submit", args, usage, {true, "submission received"});
            impl_->submitted = true;
        }
        res.set_content(json{{"ok", true}, {"content", "submission received"}}.dump(),
                        "application/json");
    });

    port_ = impl_->server.bind_to_any_port("127.0.0.1");
    if (port_ <= 0) throw IoFailure("cannot bind tool server");
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
}

ToolServer::~ToolServer() { stop(); }

void ToolServer::stop() {
    if (impl_ && impl_->thread.joinable()) {
        impl_->server.stop();
        impl_->thread.join();
    }
}

bool ToolServer::submitted() const { return impl_->submitted; }

ScaffoldRun ToolServer::take_run() {
    std::lock_guard<std::mutex> lock(impl_->mu);
    return std::move(impl_->run);
}

ExternalHttpScaffold::ExternalHttpScaffold(std::vector<std::string> command, std::string id,
                                           std::chrono::milliseconds wall_limit)
    : command_(std::move(command)), id_(std::move(id)), wall_limit_(wall_limit) {
    if (command_.empty()) throw SchemaError("external scaffold needs a command");
}

void ExternalHttpScaffold::set_env(std::string key, std::string value) {
    extra_env_.emplace_back(std::move(key), std::move(value));
}

ScaffoldRun ExternalHttpScaffold::execute(const TaskContract& c, ToolRegistry& tools,
                                          BudgetMeter& meter) {
    ToolServer server(c, tools, meter);

    std::vector<char*> argv;
    std::vector<std::string> storage = command_;
    for (std::string& arg : storage) argv.push_back(arg.data());
    argv.push_back(nullptr);

    pid_t pid = fork();
    if (pid < 0) throw IoFailure("fork() failed");
    if (pid == 0) {
        setenv("APE_TOOL_ENDPOINT", ("http://127.0.0.1:" + std::to_string(server.port())).c_str(),
               1);
        setenv("APE_TASK_ID", c.id.c_str(), 1);
        setenv("APE_TASK_KIND", kind_to_string(c.kind), 1);
        setenv("APE_INSTRUCTION", c.objective.instruction.c_str(), 1);
        for (const auto& [key, value] : extra_env_) setenv(key.c_str(), value.c_str(), 1);
        execvp(argv[0], argv.data());
        _exit(127);
    }

    auto deadline = std::chrono::steady_clock::now() + wall_limit_;
    bool timed_out = false;
    int status = 0;
    while (true) {
        pid_t done = waitpid(pid, &status, WNOHANG);
        if (done == pid) break;
        if (std::chrono::steady_clock::now() >= deadline) {
            timed_out = true;
            kill(pid, SIGKILL);
            waitpid(pid, &status, 0);
            break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }

    server.stop();
    ScaffoldRun run = server.take_run();
    if (!run.submitted) {
        run.aborted = true;
        run.abort_note = timed_out ? "adapter hit the wall-clock limit"
                                   : "adapter exited without submitting";
    }
    return run;
}

}  // namespace ape
