#include "ape/miner.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "ape/diff.hpp"
#include "ape/hash.hpp"
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

void spit(const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("cannot write " + p.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

std::string trim_copy(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

bool is_lower_hex_id(const std::string& s) {
    if (s.size() < 7 || s.size() > 40) return false;
    return std::all_of(s.begin(), s.end(), [](unsigned char c) {
        return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
    });
}

/// History ids flow into env.commit, which must be short lowercase hex.
std::string hex_id(const std::string& raw) {
    if (is_lower_hex_id(raw)) return raw;
    return sha256_hex(raw).substr(0, 40);
}

bool starts_with_keyword(const std::string& line, const std::vector<std::string>& keywords) {
    std::string t = trim_copy(line);
    for (const std::string& kw : keywords)
        if (t.rfind(kw, 0) == 0 &&
            (t.size() == kw.size() || std::isspace(static_cast<unsigned char>(t[kw.size()]))))
            return true;
    return false;
}

struct EditScan {
    int effective = 0;
    int raw = 0;
    bool decl_change = false;
    int groups = 0;  // changed regions after merging gaps <= scatter_gap
};

EditScan scan_edit(const std::string& pre, const std::string& post, const FilterRules& rules) {
    SplitText a = split_lines(pre);
    SplitText b = split_lines(post);
    std::vector<bool> mask_a = effective_line_mask(pre, rules.comments);
    std::vector<bool> mask_b = effective_line_mask(post, rules.comments);
    std::vector<DiffLine> script = diff_lines(a.lines, b.lines);

    EditScan scan;
    std::size_t ia = 0, ib = 0, k = 0;
    long context_run = -1;  // unchanged lines since the previous block; -1 = none yet
    while (k < script.size()) {
        if (script[k].op == DiffLine::Op::Context) {
            ++ia;
            ++ib;
            if (context_run >= 0) ++context_run;
            ++k;
            continue;
        }
        int dels = 0, adds = 0, eff_dels = 0, eff_adds = 0;
        while (k < script.size() && script[k].op != DiffLine::Op::Context) {
            if (script[k].op == DiffLine::Op::Del) {
                ++dels;
                if (ia < mask_a.size() && mask_a[ia]) {
                    ++eff_dels;
                    if (starts_with_keyword(a.lines[ia], rules.decl_keywords))
                        scan.decl_change = true;
                }
                ++ia;
            } else {
                ++adds;
                if (ib < mask_b.size() && mask_b[ib]) {
                    ++eff_adds;
                    if (starts_with_keyword(b.lines[ib], rules.decl_keywords))
                        scan.decl_change = true;
                }
                ++ib;
            }
            ++k;
        }
        scan.effective += std::max(eff_dels, eff_adds);
        scan.raw += std::max(dels, adds);
        if (scan.groups == 0 || context_run > rules.scatter_gap) ++scan.groups;
        context_run = 0;
    }
    return scan;
}

bool post_tree_checks(const History& history, const std::string& commit_id) {
    std::map<std::string, std::string> sources;
    for (const auto& [path, bytes] : history.tree(commit_id))
        if (path.size() > 4 && path.rfind(".toy") == path.size() - 4) sources[path] = bytes;
    return toy_check(sources, {}).ok;
}

std::string sanitize_slug(const std::string& raw) {
    std::string out;
    for (char c : raw) {
        if (std::isalnum(static_cast<unsigned char>(c)))
            out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        else if (!out.empty() && out.back() != '-')
            out += '-';
    }
    while (!out.empty() && out.back() == '-') out.pop_back();
    return out.empty() ? "task" : out;
}

}  // namespace

// --- histories ----------------------------------------------------------

SnapshotHistory::SnapshotHistory(fs::path root) : root_(std::move(root)) {
    fs::path index = root_ / "history.json";
    if (!fs::exists(index))
        throw HistoryUnavailableError("no history.json under " + root_.string());
    json doc;
    try {
        doc = json::parse(slurp(index));
    } catch (const json::parse_error& e) {
        throw HistoryUnavailableError("history.json is not valid JSON: " + std::string(e.what()));
    }
    if (!doc.is_array()) throw HistoryUnavailableError("history.json must be an array");
    std::string prev;
    for (const json& entry : doc) {
        CommitInfo info;
        info.id = entry.value("id", "");
        info.date = entry.value("date", "");
        info.message = entry.value("message", "");
        info.parent = prev;
        std::string tree_name = entry.value("tree", "");
        if (info.id.empty() || tree_name.empty())
            throw HistoryUnavailableError("history entry needs id and tree");
        if (!fs::is_directory(root_ / tree_name))
            throw HistoryUnavailableError("missing tree directory " + tree_name);
        tree_names_[info.id] = tree_name;
        commits_.push_back(info);
        prev = info.id;
    }
}

const CommitInfo& SnapshotHistory::find(const std::string& commit_id) const {
    for (const CommitInfo& c : commits_)
        if (c.id == commit_id) return c;
    throw HistoryUnavailableError("unknown commit " + commit_id);
}

fs::path SnapshotHistory::tree_dir(const std::string& commit_id) const {
    auto it = tree_names_.find(commit_id);
    if (it == tree_names_.end()) throw HistoryUnavailableError("unknown commit " + commit_id);
    return root_ / it->second;
}

std::vector<CommitInfo> SnapshotHistory::commits() const { return commits_; }

std::map<std::string, std::string> SnapshotHistory::tree(const std::string& commit_id) const {
    fs::path dir = tree_dir(commit_id);
    std::map<std::string, std::string> out;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        out[fs::relative(entry.path(), dir).generic_string()] = slurp(entry.path());
    }
    return out;
}

std::vector<FileChange> SnapshotHistory::changes(const std::string& commit_id) const {
    const CommitInfo& info = find(commit_id);
    std::map<std::string, std::string> post = tree(commit_id);
    std::map<std::string, std::string> pre;
    if (!info.parent.empty()) pre = tree(info.parent);

    std::vector<FileChange> out;
    for (const auto& [path, bytes] : post) {
        auto it = pre.find(path);
        if (it == pre.end())
            out.push_back({path, std::nullopt, bytes});
        else if (it->second != bytes)
            out.push_back({path, it->second, bytes});
    }
    for (const auto& [path, bytes] : pre)
        if (!post.count(path)) out.push_back({path, bytes, std::nullopt});
    std::sort(out.begin(), out.end(),
              [](const FileChange& a, const FileChange& b) { return a.path < b.path; });
    return out;
}

GitHistory::GitHistory(fs::path repo) : repo_(std::move(repo)) {
    if (!fs::is_directory(repo_))
        throw HistoryUnavailableError("no repository at " + repo_.string());
    run_git({"rev-parse", "--git-dir"});
}

std::string GitHistory::run_git(const std::vector<std::string>& args, bool allow_fail) const {
    auto quote = [](const std::string& s) {
        std::string q = "'";
        for (char c : s)
            q += (c == '\'') ? std::string("'\\''") : std::string(1, c);
        return q + "'";
    };
    std::string cmd = "git -C " + quote(repo_.string());
    for (const std::string& a : args) cmd += " " + quote(a);
    cmd += " 2>/dev/null";

    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) throw HistoryUnavailableError("cannot spawn git");
    std::string out;
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, n);
    int status = pclose(pipe);
    if (status != 0 && !allow_fail)
        throw HistoryUnavailableError("git " + (args.empty() ? "" : args.front()) +
                                      " failed with status " + std::to_string(status));
    if (status != 0) return "";
    return out;
}

std::vector<CommitInfo> GitHistory::commits() const {
    std::string raw = run_git({"log", "--reverse", "--format=%H%x09%P%x09%cI%x09%s"});
    std::vector<CommitInfo> out;
    std::istringstream stream(raw);
    std::string line;
    while (std::getline(stream, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::size_t start = 0;
        for (int i = 0; i < 3; ++i) {
            std::size_t tab = line.find('\t', start);
            if (tab == std::string::npos) break;
            cols.push_back(line.substr(start, tab - start));
            start = tab + 1;
        }
        cols.push_back(line.substr(start));
        if (cols.size() != 4) throw HistoryUnavailableError("unparseable git log line: " + line);
        CommitInfo info;
        info.id = cols[0];
        info.parent = cols[1].substr(0, cols[1].find(' '));  // first parent
        info.date = cols[2].substr(0, 10);                   // ISO day
        info.message = cols[3];
        out.push_back(info);
    }
    return out;
}

std::vector<FileChange> GitHistory::changes(const std::string& commit_id) const {
    std::string raw =
        run_git({"diff-tree", "--root", "--no-commit-id", "--name-status", "-r", commit_id});
    std::vector<FileChange> out;
    std::istringstream stream(raw);
    std::string line;
    while (std::getline(stream, line)) {
        if (line.empty()) continue;
        std::size_t tab = line.find('\t');
        if (tab == std::string::npos) continue;
        std::string status = line.substr(0, tab);
        std::string path = line.substr(tab + 1);
        FileChange change;
        change.path = path;
        if (status != "A") {
            std::string pre = run_git({"show", commit_id + "^:" + path}, true);
            change.pre = pre;
        }
        if (status != "D") change.post = run_git({"show", commit_id + ":" + path}, true);
        out.push_back(std::move(change));
    }
    std::sort(out.begin(), out.end(),
              [](const FileChange& a, const FileChange& b) { return a.path < b.path; });
    return out;
}

std::map<std::string, std::string> GitHistory::tree(const std::string& commit_id) const {
    std::string raw = run_git({"ls-tree", "-r", "--name-only", commit_id});
    std::map<std::string, std::string> out;
    std::istringstream stream(raw);
    std::string path;
    while (std::getline(stream, path))
        if (!path.empty()) out[path] = run_git({"show", commit_id + ":" + path}, true);
    return out;
}

// --- effective line counting -------------------------------------------

CommentSyntax CommentSyntax::toy() { return {{"--"}, "/-", "-/", true}; }
CommentSyntax CommentSyntax::none() { return {{}, "", "", false}; }

std::vector<bool> effective_line_mask(const std::string& text, const CommentSyntax& syntax) {
    SplitText split = split_lines(text);
    std::vector<bool> mask;
    mask.reserve(split.lines.size());
    int depth = 0;
    for (const std::string& line : split.lines) {
        bool content = false;
        std::size_t i = 0;
        while (i < line.size()) {
            if (depth > 0) {
                if (!syntax.block_close.empty() &&
                    line.compare(i, syntax.block_close.size(), syntax.block_close) == 0) {
                    --depth;
                    i += syntax.block_close.size();
                } else if (syntax.nested && !syntax.block_open.empty() &&
                           line.compare(i, syntax.block_open.size(), syntax.block_open) == 0) {
                    ++depth;
                    i += syntax.block_open.size();
                } else {
                    ++i;
                }
                continue;
            }
            if (!syntax.block_open.empty() &&
                line.compare(i, syntax.block_open.size(), syntax.block_open) == 0) {
                depth = 1;
                i += syntax.block_open.size();
                continue;
            }
            bool line_comment = false;
            for (const std::string& prefix : syntax.line_prefixes)
                if (!prefix.empty() && line.compare(i, prefix.size(), prefix) == 0) {
                    line_comment = true;
                    break;
                }
            if (line_comment) break;
            if (!std::isspace(static_cast<unsigned char>(line[i]))) content = true;
            ++i;
        }
        mask.push_back(content);
    }
    return mask;
}

int count_effective_lines(const std::string& pre, const std::string& post,
                          const CommentSyntax& syntax) {
    FilterRules rules;
    rules.comments = syntax;
    return scan_edit(pre, post, rules).effective;
}

// --- filtering ----------------------------------------------------------

const char* to_string(RejectReason r) {
    switch (r) {
        case RejectReason::BelowMin: return "below-min";
        case RejectReason::AboveMax: return "above-max";
        case RejectReason::NoDeclChange: return "no-decl-change";
        case RejectReason::Scattered: return "scattered";
        case RejectReason::PostCheckFail: return "post-check-fail";
        case RejectReason::DeletedFile: return "deleted-file";
        case RejectReason::BinaryFile: return "binary-file";
    }
    return "below-min";
}

MineResult filter_commits(const History& history, const std::string& since,
                          const std::string& until, const FilterRules& rules) {
    if (since.empty() || until.empty())
        throw SchemaError("mining needs an explicit since/until date range");
    MineResult out;
    std::map<std::string, bool> tree_ok;
    for (const CommitInfo& commit : history.commits()) {
        if (commit.date < since || commit.date > until) continue;
        ++out.commits_scanned;
        for (const FileChange& change : history.changes(commit.id)) {
            auto reject = [&](RejectReason reason, int eff, std::string detail = "") {
                out.rejected.push_back({commit.id, change.path, reason, eff, std::move(detail)});
            };
            if (!change.post) {
                reject(RejectReason::DeletedFile, 0);
                continue;
            }
            std::string pre = change.pre.value_or("");
            const std::string& post = *change.post;
            if (pre.find('\0') != std::string::npos || post.find('\0') != std::string::npos) {
                reject(RejectReason::BinaryFile, 0);
                continue;
            }
            EditScan scan = scan_edit(pre, post, rules);
            if (scan.effective < rules.min_effective) {
                reject(RejectReason::BelowMin, scan.effective);
                continue;
            }
            if (scan.effective > rules.max_effective) {
                reject(RejectReason::AboveMax, scan.effective);
                continue;
            }
            if (!scan.decl_change) {
                reject(RejectReason::NoDeclChange, scan.effective);
                continue;
            }
            if (scan.groups > rules.max_hunk_groups) {
                reject(RejectReason::Scattered, scan.effective,
                       std::to_string(scan.groups) + " separated hunk groups");
                continue;
            }
            if (rules.require_post_check) {
                auto it = tree_ok.find(commit.id);
                if (it == tree_ok.end())
                    it = tree_ok.emplace(commit.id, post_tree_checks(history, commit.id)).first;
                if (!it->second) {
                    reject(RejectReason::PostCheckFail, scan.effective,
                           "post-edit tree fails the checker");
                    continue;
                }
            }
            out.kept.push_back({commit.id, commit.parent, change.path, pre, post, scan.effective,
                                scan.raw, commit.date, commit.message});
        }
    }
    return out;
}

json mine_result_to_json(const MineResult& result) {
    json kept = json::array();
    for (const FileEdit& edit : result.kept)
        kept.push_back({{"commit", edit.commit},
                        {"file", edit.file},
                        {"effective_lines", edit.effective_lines_changed},
                        {"raw_lines", edit.raw_lines_changed},
                        {"date", edit.date}});
    json rejected = json::array();
    for (const RejectionRecord& r : result.rejected)
        rejected.push_back({{"commit", r.commit},
                            {"file", r.file},
                            {"reason", to_string(r.reason)},
                            {"effective_lines", r.effective_lines},
                            {"detail", r.detail}});
    return {{"commits_scanned", result.commits_scanned},
            {"kept", kept},
            {"rejected", rejected}};
}

// --- instruction --------------------------------------------------------

bool Instruction::complete() const {
    return !trim_copy(title).empty() && !trim_copy(objectives).empty() &&
           !trim_copy(guidance).empty();
}

json instruction_to_json(const Instruction& ins) {
    return {{"title", ins.title}, {"objectives", ins.objectives}, {"guidance", ins.guidance}};
}

Instruction instruction_from_json(const json& j) {
    auto field = [&](const char* key) -> std::string {
        if (!j.contains(key)) return "";
        const json& v = j[key];
        if (v.is_string()) return v.get<std::string>();
        if (v.is_array()) {
            std::string joined;
            for (const json& item : v)
                if (item.is_string()) joined += "- " + item.get<std::string>() + "\n";
            return joined;
        }
        return "";
    };
    return {field("title"), field("objectives"), field("guidance")};
}

std::string render_instruction(const Instruction& ins, const std::string& file) {
    std::string out = trim_copy(ins.title) + "\n\n";
    out += "File under change: " + file + "\n\n";
    out += "Objectives:\n" + trim_copy(ins.objectives) + "\n\n";
    out += "Guidance:\n" + trim_copy(ins.guidance) + "\n";
    return out;
}

std::optional<std::string> lint_instruction(const Instruction& ins, const FileEdit& edit) {
    std::string text = ins.title + "\n" + ins.objectives + "\n" + ins.guidance;
    static const std::regex line_ref(R"(\blines?\s+\d+)", std::regex::icase);
    if (std::regex_search(text, line_ref)) return "instruction references line numbers";

    FileDiff diff = diff_texts(edit.file, edit.file, edit.pre_bytes, edit.post_bytes);
    for (const Hunk& hunk : diff.hunks)
        for (const DiffLine& line : hunk.lines) {
            if (line.op == DiffLine::Op::Context) continue;
            std::string t = trim_copy(line.text);
            if (t.size() >= 12 && text.find(t) != std::string::npos)
                return "instruction reproduces a changed line verbatim: '" + t + "'";
        }
    return std::nullopt;
}

// --- miner --------------------------------------------------------------

Miner::Miner(ContentStore& store, std::string toolchain)
    : store_(store), toolchain_(std::move(toolchain)) {}

std::string Miner::ingest_commit_tree(const History& history, const std::string& commit_id) {
    VersionManifest m;
    m.commit = hex_id(commit_id);
    m.toolchain = toolchain_;
    if (!commit_id.empty())
        for (const auto& [path, bytes] : history.tree(commit_id))
            m.entries[path] = store_.put_bytes(bytes);
    if (auto existing = store_.find_manifest(m.commit, m.toolchain))
        return ContentStore::manifest_id(m.commit, m.toolchain);
    return store_.publish_manifest(m);
}

std::string Miner::task_id_for(const FileEdit& edit) const {
    std::string stem = edit.file;
    if (stem.size() > 4 && stem.rfind(".toy") == stem.size() - 4)
        stem = stem.substr(0, stem.size() - 4);
    return hex_id(edit.commit).substr(0, 7) + "-" + sanitize_slug(stem);
}

std::string Miner::env_commit_for(const FileEdit& edit) const {
    return sha256_hex(hex_id(edit.parent) + ":" + edit.file).substr(0, 40);
}

std::string Miner::publish_single_file(const std::string& tag, const FileEdit& edit,
                                       const std::string& bytes) {
    VersionManifest m;
    m.commit = sha256_hex(tag + ":" + edit.commit + ":" + edit.file).substr(0, 40);
    m.toolchain = "ref";
    m.entries[edit.file] = store_.put_bytes(bytes);
    return store_.publish_manifest(m);
}

TaskContract Miner::synthesis_contract(const FileEdit& edit, const History& history) {
    std::string pre_manifest = ingest_commit_tree(history, edit.parent);
    std::string post_manifest = ingest_commit_tree(history, edit.commit);

    TaskContract c;
    c.id = task_id_for(edit) + "-synth";
    c.kind = TaskKind::InstructionSynthesis;
    c.env = {hex_id(edit.parent), toolchain_, "toy"};
    c.objective.instruction =
        "Study the recorded change to " + edit.file +
        " (the diff below, plus the full pre- and post-edit snapshots under reference/) and "
        "write the task instruction a proof engineer would need to reproduce it. Submit "
        "{title, objectives, guidance}: state intent and required declarations, never line "
        "numbers or copied diff lines.";
    c.objective.structured_fields["file"] = edit.file;
    c.objective.structured_fields["diff"] =
        render_unified(edit.file, edit.file, edit.pre_bytes, edit.post_bytes);
    c.objective.structured_fields["reference_pre"] = pre_manifest;
    c.objective.structured_fields["reference_post"] = post_manifest;
    c.verification.require_compile = false;
    c.verification.require_semantic = false;
    c.verification.judge_count = 1;
    c.verification.success_rule = SuccessRule::StructuredSubmission;
    return c;
}

Instruction Miner::synthesize_instruction(const FileEdit& edit, const History& history,
                                          Runtime& runtime, std::shared_ptr<ModelClient> client,
                                          const RunConfig& cfg, int retry_budget) {
    TaskContract base = synthesis_contract(edit, history);
    std::string last_note = "no attempts made";
    for (int attempt = 0; attempt < retry_budget; ++attempt) {
        TaskContract c = base;
        if (attempt > 0) c.id += "-r" + std::to_string(attempt);
        ReactScaffold scaffold(client);
        auto [trace, verdict] = runtime.execute_contract(c, scaffold, cfg);
        if (verdict.final != FinalOutcome::Pass) {
            last_note = "attempt " + std::to_string(attempt + 1) + ": no well-formed submission";
            continue;
        }
        Instruction ins = instruction_from_json(trace.submission);
        if (!ins.complete()) {
            last_note = "attempt " + std::to_string(attempt + 1) + ": empty instruction field";
            continue;
        }
        if (auto lint = lint_instruction(ins, edit)) {
            last_note = "attempt " + std::to_string(attempt + 1) + ": " + *lint;
            continue;
        }
        return ins;
    }
    throw SynthesisFailedError("synthesis for " + task_id_for(edit) + " failed: " + last_note);
}

TaskContract Miner::task_contract(const FileEdit& edit, const History& history,
                                  const Instruction& ins, int judge_count) {
    // The pinned environment is the pre-edit tree with the edited file
    // lifted out, so rewriting it in scratch cannot collide with itself.
    VersionManifest m;
    m.commit = env_commit_for(edit);
    m.toolchain = toolchain_;
    if (!edit.parent.empty())
        for (const auto& [path, bytes] : history.tree(edit.parent)) {
            if (path == edit.file) continue;
            m.entries[path] = store_.put_bytes(bytes);
        }
    if (!store_.find_manifest(m.commit, m.toolchain)) store_.publish_manifest(m);

    TaskContract c;
    c.id = task_id_for(edit);
    c.kind = TaskKind::ProofEngineering;
    c.env = {m.commit, toolchain_, "toy"};
    c.objective.instruction = render_instruction(ins, edit.file);
    c.objective.target_file = edit.file;
    if (!edit.pre_bytes.empty())
        c.objective.structured_fields["reference"] = publish_single_file("orig", edit,
                                                                         edit.pre_bytes);
    c.verification.require_compile = true;
    c.verification.require_semantic = true;
    c.verification.judge_count = judge_count;
    c.verification.success_rule = SuccessRule::DualVerification;
    c.nested.push_back(default_judgment_template(c.env));
    return c;
}

ValidationResult Miner::validate_task(const TaskContract& contract, const FileEdit& edit,
                                      Runtime& runtime, const RunConfig& cfg) {
    VersionManifest m;
    m.commit = sha256_hex("gold:" + edit.commit + ":" + edit.file).substr(0, 40);
    m.toolchain = "snapshot";
    std::string rel = fs::path(edit.file).filename().string();
    m.entries[rel] = store_.put_bytes(edit.post_bytes);
    std::string gold_id = store_.publish_manifest(m);

    ValidationResult result;
    result.verdict = runtime.dual_verify(contract, gold_id, cfg, "", &result.judges);
    result.validated = result.verdict.final == FinalOutcome::Pass;
    return result;
}

fs::path Miner::write_bench_candidate(const fs::path& bench_dir, const FileEdit& edit) {
    fs::path task_dir = bench_dir / task_id_for(edit);
    fs::create_directories(task_dir);
    spit(task_dir / "gold.patch",
         render_unified(edit.file, edit.file, edit.pre_bytes, edit.post_bytes));
    json meta = {{"task_id", task_id_for(edit)},
                 {"commit", edit.commit},
                 {"parent", edit.parent},
                 {"file", edit.file},
                 {"date", edit.date},
                 {"message", edit.message},
                 {"effective_lines", edit.effective_lines_changed},
                 {"raw_lines", edit.raw_lines_changed},
                 {"pre_hash", store_.put_bytes(edit.pre_bytes).digest_hex},
                 {"post_hash", store_.put_bytes(edit.post_bytes).digest_hex},
                 {"status", "filtered"}};
    spit(task_dir / "meta.json", meta.dump(2) + "\n");
    return task_dir;
}

void Miner::attach_instruction(const fs::path& task_dir, const TaskContract& contract,
                               const Instruction& ins) {
    spit(task_dir / "task.contract.json", serialize_contract(contract) + "\n");
    json meta = json::parse(slurp(task_dir / "meta.json"));
    meta["instruction"] = instruction_to_json(ins);
    meta["status"] = "synthesized";
    spit(task_dir / "meta.json", meta.dump(2) + "\n");
}

void Miner::mark_validated(const fs::path& task_dir, const ValidationResult& result) {
    json meta = json::parse(slurp(task_dir / "meta.json"));
    meta["status"] = result.validated ? "validated" : "rejected";
    json validation = {{"compiled", result.verdict.compiled},
                       {"semantic", to_string(result.verdict.semantic)},
                       {"final", to_string(result.verdict.final)}};
    validation["failure_reason"] = result.verdict.failure_reason
                                       ? json(to_string(*result.verdict.failure_reason))
                                       : json(nullptr);
    json judges = json::array();
    for (const JudgeVerdict& v : result.judges)
        judges.push_back({{"judge_index", v.judge_index}, {"decision", to_string(v.decision)}});
    validation["judges"] = judges;
    meta["validation"] = validation;
    spit(task_dir / "meta.json", meta.dump(2) + "\n");
}

FileEdit Miner::edit_from_meta(const fs::path& task_dir) const {
    json meta = json::parse(slurp(task_dir / "meta.json"));
    FileEdit edit;
    edit.commit = meta.value("commit", "");
    edit.parent = meta.value("parent", "");
    edit.file = meta.value("file", "");
    edit.date = meta.value("date", "");
    edit.message = meta.value("message", "");
    edit.effective_lines_changed = meta.value("effective_lines", 0);
    edit.raw_lines_changed = meta.value("raw_lines", 0);
    auto fetch = [&](const char* key) -> std::string {
        ContentHash h{meta.value(key, "")};
        auto bytes = store_.get_blob(h);
        if (!bytes) throw DanglingHashError(h.digest_hex);
        return *bytes;
    };
    edit.pre_bytes = fetch("pre_hash");
    edit.post_bytes = fetch("post_hash");
    return edit;
}

BenchTask Miner::load_bench_task(const fs::path& task_dir) {
    BenchTask task;
    task.contract = parse_contract(slurp(task_dir / "task.contract.json"));
    task.gold_patch = slurp(task_dir / "gold.patch");
    task.meta = json::parse(slurp(task_dir / "meta.json"));
    return task;
}

std::vector<BenchTask> Miner::load_bench_dir(const fs::path& bench_dir) {
    if (!fs::is_directory(bench_dir))
        throw IoFailure("no bench directory at " + bench_dir.string());
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(bench_dir))
        if (entry.is_directory() && fs::exists(entry.path() / "task.contract.json"))
            dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
    std::vector<BenchTask> out;
    for (const fs::path& dir : dirs) out.push_back(load_bench_task(dir));
    return out;
}

// --- reporting ----------------------------------------------------------

std::vector<RunTrace> collect_traces(const fs::path& runs_root) {
    std::vector<RunTrace> out;
    if (!fs::is_directory(runs_root)) return out;
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::recursive_directory_iterator(runs_root)) {
        if (!entry.is_regular_file() || entry.path().filename() != "verdict.json") continue;
        fs::path dir = entry.path().parent_path();
        if (!fs::exists(dir / "trace.jsonl")) continue;
        bool nested = false;
        for (const fs::path& part : fs::relative(dir, runs_root))
            if (part == "judges" || part == "verify") nested = true;
        if (!nested) dirs.push_back(dir);
    }
    std::sort(dirs.begin(), dirs.end());
    for (const fs::path& dir : dirs) out.push_back(load_trace(dir));
    return out;
}

namespace {

json curve_to_json(const std::vector<CurvePoint>& curve) {
    double prev_x = -1.0, prev_y = -1.0;
    json out = json::array();
    for (const CurvePoint& p : curve) {
        if (!out.empty() && p.x <= prev_x)
            throw SchemaError("efficiency curve x values must strictly increase");
        if (p.pass_rate < prev_y || p.pass_rate < 0.0 || p.pass_rate > 1.0)
            throw SchemaError("efficiency curve pass rate must be non-decreasing in [0,1]");
        out.push_back({{"x", p.x}, {"pass_rate", p.pass_rate}});
        prev_x = p.x;
        prev_y = p.pass_rate;
    }
    return out;
}

}  // namespace

json build_report(const std::vector<RunTrace>& traces) {
    std::map<std::string, std::vector<const RunTrace*>> groups;
    for (const RunTrace& trace : traces)
        groups[trace.model + "\t" + trace.scaffold_id].push_back(&trace);

    json group_array = json::array();
    for (const auto& [key, members] : groups) {
        std::size_t tab = key.find('\t');
        std::vector<std::pair<double, bool>> by_cost, by_turns;
        std::map<std::string, int> failures;
        int passes = 0;
        double total_cost = 0.0;
        long total_turns = 0;
        for (const RunTrace* t : members) {
            bool pass = t->verdict.final == FinalOutcome::Pass;
            if (pass) ++passes;
            by_cost.push_back({t->total_cost(), pass});
            by_turns.push_back({static_cast<double>(t->turn_count()), pass});
            total_cost += t->total_cost();
            total_turns += t->turn_count();
            if (t->verdict.failure_reason) ++failures[to_string(*t->verdict.failure_reason)];
        }
        double n = static_cast<double>(members.size());
        group_array.push_back(
            {{"model", key.substr(0, tab)},
             {"scaffold", key.substr(tab + 1)},
             {"tasks", members.size()},
             {"passes", passes},
             {"pass_rate", passes / n},
             {"total_cost", total_cost},
             {"mean_turns", total_turns / n},
             {"failure_reasons", failures},
             {"cost_curve", curve_to_json(efficiency_curve(by_cost))},
             {"turn_curve", curve_to_json(efficiency_curve(by_turns))}});
    }

    json report;
    report["traces"] = traces.size();
    report["groups"] = group_array;
    report["tool_usage"] = traces.empty() ? json::object() : json(tool_usage_stats(traces));
    return report;
}

std::string render_report_table(const json& report) {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof line, "%-20s %-14s %6s %6s %8s %10s %10s\n", "model", "scaffold",
                  "tasks", "pass", "rate", "cost", "turns");
    out << line;
    for (const json& g : report.at("groups")) {
        std::snprintf(line, sizeof line, "%-20s %-14s %6d %6d %7.1f%% %10.4f %10.1f\n",
                      g.at("model").get<std::string>().c_str(),
                      g.at("scaffold").get<std::string>().c_str(), g.at("tasks").get<int>(),
                      g.at("passes").get<int>(), g.at("pass_rate").get<double>() * 100.0,
                      g.at("total_cost").get<double>(), g.at("mean_turns").get<double>());
        out << line;
        for (const auto& [reason, count] : g.at("failure_reasons").items())
            out << "    " << reason << ": " << count.get<int>() << "\n";
    }
    return out.str();
}

}  // namespace ape
