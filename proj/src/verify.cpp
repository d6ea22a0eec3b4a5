#include "ape/verify.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "ape/toy.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ape {
namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoFailure("cannot open " + p.string());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

std::vector<fs::path> toy_files_under(const fs::path& root) {
    std::vector<fs::path> files;
    if (!fs::is_directory(root)) return files;
    for (const auto& entry : fs::recursive_directory_iterator(root))
        if (entry.is_regular_file() && entry.path().extension() == ".toy")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace

CompileResult ToyChecker::run(const WorkspaceSet& ws) {
    std::set<std::string> target_decls;
    for (const fs::path& p : toy_files_under(ws.target)) {
        std::set<std::string> names = toy_decl_names(slurp(p));
        target_decls.insert(names.begin(), names.end());
    }
    std::map<std::string, std::string> sources;
    for (const fs::path& p : toy_files_under(ws.scratch))
        sources.emplace("scratch/" + fs::relative(p, ws.scratch).generic_string(), slurp(p));
    CompileResult result = toy_check(sources, target_decls);
    result.checker = id_;
    return result;
}

SubprocessChecker::SubprocessChecker(std::string id, std::vector<std::string> command,
                                     std::chrono::milliseconds timeout)
    : id_(std::move(id)), command_(std::move(command)), timeout_(timeout) {
    if (command_.empty()) throw SchemaError("subprocess checker '" + id_ + "' has empty command");
}

CompileResult SubprocessChecker::run(const WorkspaceSet& ws) {
    auto start = std::chrono::steady_clock::now();

    std::vector<std::string> argv_storage;
    for (std::string arg : command_) {
        auto substitute = [&arg](const std::string& key, const std::string& value) {
            for (std::size_t pos = arg.find(key); pos != std::string::npos; pos = arg.find(key, pos))
                arg.replace(pos, key.size(), value), pos += value.size();
        };
        substitute("{scratch}", fs::absolute(ws.scratch).string());
        substitute("{target}", fs::absolute(ws.target).string());
        substitute("{reference}", ws.reference ? fs::absolute(*ws.reference).string() : "");
        argv_storage.push_back(std::move(arg));
    }
    std::vector<char*> argv;
    for (std::string& arg : argv_storage) argv.push_back(arg.data());
    argv.push_back(nullptr);

    int out_pipe[2];
    if (pipe(out_pipe) != 0) throw IoFailure("pipe() failed");
    pid_t pid = fork();
    if (pid < 0) {
        close(out_pipe[0]);
        close(out_pipe[1]);
        throw IoFailure("fork() failed");
    }
    if (pid == 0) {
        close(out_pipe[0]);
        dup2(out_pipe[1], STDOUT_FILENO);
        dup2(out_pipe[1], STDERR_FILENO);
        close(out_pipe[1]);
        execvp(argv[0], argv.data());
        _exit(127);
    }
    close(out_pipe[1]);

    std::string output;
    char buf[4096];
    auto deadline = start + timeout_;
    bool timed_out = false;
    while (true) {
        auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
            deadline - std::chrono::steady_clock::now());
        if (remaining.count() <= 0) {
            timed_out = true;
            break;
        }
        struct pollfd pfd{out_pipe[0], POLLIN, 0};
        int rc = poll(&pfd, 1, static_cast<int>(remaining.count()));
        if (rc == 0) {
            timed_out = true;
            break;
        }
        ssize_t n = read(out_pipe[0], buf, sizeof(buf));
        if (n < 0) {
            if (errno == EINTR) continue;
            break;
        }
        if (n == 0) break;
        output.append(buf, static_cast<std::size_t>(n));
    }
    close(out_pipe[0]);
    if (timed_out) {
        kill(pid, SIGKILL);
        waitpid(pid, nullptr, 0);
        throw TimeoutError("checker '" + id_ + "' exceeded " + std::to_string(timeout_.count()) +
                           "ms");
    }
    int status = 0;
    waitpid(pid, &status, 0);
    int exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : 128;

    std::vector<Diagnostic> diags;
    std::istringstream lines(output);
    std::string line;
    while (std::getline(lines, line)) {
        // file:line:severity:code:message; the message keeps any further colons.
        std::size_t c1 = line.find(':');
        if (c1 == std::string::npos) continue;
        std::size_t c2 = line.find(':', c1 + 1);
        if (c2 == std::string::npos) continue;
        std::size_t c3 = line.find(':', c2 + 1);
        if (c3 == std::string::npos) continue;
        std::size_t c4 = line.find(':', c3 + 1);
        if (c4 == std::string::npos) continue;
        std::string line_text = line.substr(c1 + 1, c2 - c1 - 1);
        std::string severity = line.substr(c2 + 1, c3 - c2 - 1);
        std::transform(severity.begin(), severity.end(), severity.begin(),
                       [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
        if (severity != "error" && severity != "warning") continue;
        int line_no = 0;
        try {
            line_no = std::stoi(line_text);
        } catch (...) {
            continue;
        }
        if (line_no < 1) continue;
        diags.push_back({severity == "error" ? Severity::Error : Severity::Warning,
                         line.substr(0, c1), line_no, line.substr(c3 + 1, c4 - c3 - 1),
                         line.substr(c4 + 1)});
    }
    bool any_error = std::any_of(diags.begin(), diags.end(),
                                 [](const Diagnostic& d) { return d.severity == Severity::Error; });
    if (exit_code != 0 && !any_error)
        diags.push_back({Severity::Error, "", 1, "checker-failed",
                         "checker exited with status " + std::to_string(exit_code)});

    auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - start);
    return make_compile_result(id_, std::move(diags), elapsed);
}

void CheckerRegistry::register_checker(std::shared_ptr<Checker> checker) {
    checkers_[checker->id()] = std::move(checker);
}

std::shared_ptr<Checker> CheckerRegistry::find(const std::string& id) const {
    auto it = checkers_.find(id);
    return it == checkers_.end() ? nullptr : it->second;
}

CheckerRegistry CheckerRegistry::with_default_toy() {
    CheckerRegistry r;
    r.register_checker(std::make_shared<ToyChecker>());
    return r;
}

CheckerRegistry CheckerRegistry::from_file(const fs::path& checkers_json) {
    json doc;
    try {
        doc = json::parse(slurp(checkers_json));
    } catch (const json::parse_error& e) {
        throw SyntaxError(std::string("checkers.json: ") + e.what());
    }
    if (!doc.is_object()) throw SchemaError("checkers.json must be an object");
    CheckerRegistry r;
    for (const auto& [id, entry] : doc.items()) {
        std::string kind = entry.at("kind").get<std::string>();
        if (kind == "toy") {
            r.register_checker(std::make_shared<ToyChecker>(id));
        } else if (kind == "subprocess") {
            std::vector<std::string> command = entry.at("command").get<std::vector<std::string>>();
            auto timeout = std::chrono::milliseconds(entry.value("timeout_ms", 120000));
            r.register_checker(std::make_shared<SubprocessChecker>(id, std::move(command), timeout));
        } else {
            throw SchemaError("checkers.json: unknown checker kind '" + kind + "'");
        }
    }
    return r;
}

CompileResult CheckerRegistry::compile(const WorkspaceSet& ws, const EnvironmentBinding& env) const {
    std::shared_ptr<Checker> checker = find(env.checker);
    if (!checker) throw CheckerUnavailableError(env.checker);
    return checker->run(ws);
}

CompileResult CheckerRegistry::edit_and_verify(WorkspaceSet& ws, std::string_view path,
                                               std::string_view bytes,
                                               const EnvironmentBinding& env) const {
    write_workspace_file(ws, path, bytes);  // AccessDeniedError leaves the file untouched
    return compile(ws, env);
}

}  // namespace ape
