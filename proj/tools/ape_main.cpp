#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ape/contract.hpp"
#include "ape/errors.hpp"
#include "ape/miner.hpp"
#include "ape/retrieve.hpp"
#include "ape/runtime.hpp"
#include "ape/scaffold.hpp"
#include "ape/store.hpp"
#include "ape/verify.hpp"
#include "ape/workspace.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ape::IoFailure("cannot open " + p.string());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void spit(const fs::path& p, const std::string& content) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw ape::IoFailure("cannot write " + p.string());
    out << content;
}

std::unique_ptr<ape::History> open_history(const fs::path& repo) {
    if (fs::exists(repo / "history.json"))
        return std::make_unique<ape::SnapshotHistory>(repo);
    return std::make_unique<ape::GitHistory>(repo);
}

std::shared_ptr<ape::ModelClient> make_client(const std::string& model,
                                              const std::string& transcript,
                                              const std::string& endpoint) {
    if (model == "rule-based") return std::make_shared<ape::RuleBasedClient>();
    if (model == "playback") {
        if (transcript.empty())
            throw ape::SchemaError("--model playback needs --transcript <file>");
        return std::make_shared<ape::PlaybackClient>(transcript);
    }
    if (!endpoint.empty()) {
        std::size_t colon = endpoint.rfind(':');
        if (colon == std::string::npos)
            throw ape::SchemaError("--endpoint must look like host:port");
        return std::make_shared<ape::HttpModelClient>(endpoint.substr(0, colon),
                                                      std::stoi(endpoint.substr(colon + 1)),
                                                      "/complete", model);
    }
    throw ape::SchemaError("unknown model '" + model +
                           "' (use rule-based, playback, or any name with --endpoint)");
}

struct CommonPaths {
    std::string store = "store";
    std::string runs = "runs";
    std::string bench = "bench";
    std::string index = "index";
};

void add_store_opt(CLI::App* cmd, CommonPaths& paths) {
    cmd->add_option("--store", paths.store, "content store root")->capture_default_str();
}

int print_verdict_lines(const std::vector<std::pair<ape::RunTrace, ape::Verdict>>& results) {
    int failures = 0;
    for (const auto& [trace, verdict] : results) {
        std::string reason =
            verdict.failure_reason ? ape::to_string(*verdict.failure_reason) : "-";
        std::printf("%-40s %-4s compiled=%d semantic=%s reason=%s turns=%d cost=%.4f\n",
                    trace.task_id.c_str(), ape::to_string(verdict.final).c_str(),
                    verdict.compiled ? 1 : 0, ape::to_string(verdict.semantic).c_str(),
                    reason.c_str(), trace.turn_count(), trace.total_cost());
        if (verdict.final != ape::FinalOutcome::Pass) ++failures;
    }
    return failures;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ape: task-contract harness for proof-engineering evaluation"};
    app.require_subcommand(1);
    CommonPaths paths;

    // --- store ----------------------------------------------------------
    auto* store_cmd = app.add_subcommand("store", "content-addressable store operations");
    store_cmd->require_subcommand(1);

    std::string tree_arg, commit_arg, toolchain_arg = "toy-0.1", dest_arg, manifest_arg;
    bool stats_json = false;

    auto* ingest = store_cmd->add_subcommand("ingest", "store a file tree as one version");
    ingest->add_option("tree", tree_arg, "directory to ingest")->required();
    ingest->add_option("--commit", commit_arg, "lowercase hex commit id")->required();
    ingest->add_option("--toolchain", toolchain_arg, "toolchain version")
        ->capture_default_str();
    add_store_opt(ingest, paths);
    ingest->callback([&] {
        ape::ContentStore store(paths.store);
        auto [id, files] = store.ingest_tree(tree_arg, commit_arg, toolchain_arg);
        std::printf("%s  (%zu files)\n", id.c_str(), files);
    });

    auto* materialize = store_cmd->add_subcommand("materialize", "write a version to disk");
    materialize->add_option("manifest", manifest_arg, "manifest id (<commit>.<toolchain>)")
        ->required();
    materialize->add_option("--dest", dest_arg, "destination directory")->required();
    add_store_opt(materialize, paths);
    materialize->callback([&] {
        ape::ContentStore store(paths.store);
        std::size_t files = store.materialize_manifest(manifest_arg, dest_arg);
        std::printf("materialized %zu files into %s\n", files, dest_arg.c_str());
    });

    auto* stats = store_cmd->add_subcommand("stats", "dedup accounting over all manifests");
    stats->add_flag("--json", stats_json, "machine-readable output");
    add_store_opt(stats, paths);
    stats->callback([&] {
        ape::ContentStore store(paths.store);
        ape::DedupStats s = store.dedup_stats();
        if (stats_json) {
            json doc = {{"total_instances", s.total_instances},
                        {"unique_blobs", s.unique_blobs},
                        {"naive_bytes", s.naive_bytes},
                        {"stored_bytes", s.stored_bytes},
                        {"savings_ratio", s.savings_ratio}};
            std::cout << doc.dump(2) << "\n";
        } else {
            std::printf("instances:     %zu\n", s.total_instances);
            std::printf("unique blobs:  %zu\n", s.unique_blobs);
            std::printf("naive bytes:   %zu\n", s.naive_bytes);
            std::printf("stored bytes:  %zu\n", s.stored_bytes);
            std::printf("savings:       %.1f%%\n", s.savings_ratio * 100.0);
        }
    });

    // --- contracts ------------------------------------------------------
    auto* contracts_cmd = app.add_subcommand("contracts", "contract schema operations");
    contracts_cmd->require_subcommand(1);
    std::vector<std::string> contract_paths;
    bool contracts_use_store = false;
    auto* cvalidate = contracts_cmd->add_subcommand("validate", "check contract files");
    cvalidate->add_option("paths", contract_paths, "*.contract.json files")->required();
    cvalidate->add_flag("--resolve-env", contracts_use_store,
                        "also require env commit+toolchain to exist in the store");
    add_store_opt(cvalidate, paths);
    int violations_seen = 0;
    cvalidate->callback([&] {
        std::unique_ptr<ape::ContentStore> store;
        if (contracts_use_store) store = std::make_unique<ape::ContentStore>(paths.store);
        for (const std::string& path : contract_paths) {
            ape::TaskContract c = ape::parse_contract(slurp(path));
            auto violations =
                ape::validate_contract(c, store ? store->lookup() : ape::ManifestLookup{});
            for (const ape::Violation& v : violations) {
                std::printf("%s: %s at %s: %s\n", path.c_str(), ape::to_string(v.code),
                            v.path.c_str(), v.detail.c_str());
                ++violations_seen;
            }
            if (violations.empty()) std::printf("%s: ok\n", path.c_str());
        }
    });

    // --- retrieve -------------------------------------------------------
    auto* retrieve_cmd = app.add_subcommand("retrieve", "declaration index and search");
    retrieve_cmd->require_subcommand(1);
    std::string r_commit, r_query, r_mode = "semantic", r_embedder;
    std::size_t r_k = 5;

    auto make_retrieval = [&](ape::ContentStore& store) {
        std::shared_ptr<ape::Embedder> embedder;
        if (r_embedder.empty()) {
            embedder = std::make_shared<ape::MockEmbedder>();
        } else {
            std::size_t colon = r_embedder.rfind(':');
            if (colon == std::string::npos)
                throw ape::SchemaError("--embedder must look like host:port");
            embedder = std::make_shared<ape::HttpEmbedder>(
                r_embedder.substr(0, colon), std::stoi(r_embedder.substr(colon + 1)));
        }
        return std::make_unique<ape::RetrievalService>(store, paths.index, embedder);
    };

    auto* rindex = retrieve_cmd->add_subcommand("index", "index one version's declarations");
    rindex->add_option("commit", r_commit, "commit id")->required();
    rindex->add_option("--toolchain", toolchain_arg, "toolchain version")
        ->capture_default_str();
    rindex->add_option("--index", paths.index, "index root")->capture_default_str();
    rindex->add_option("--embedder", r_embedder, "host:port of an embedding server");
    add_store_opt(rindex, paths);
    rindex->callback([&] {
        ape::ContentStore store(paths.store);
        auto svc = make_retrieval(store);
        ape::IndexReport report =
            svc->build_index(ape::ContentStore::manifest_id(r_commit, toolchain_arg));
        json doc = {{"index_id", report.index_id},
                    {"decl_instances", report.decl_instances},
                    {"unique_added", report.unique_added},
                    {"unique_reused", report.unique_reused},
                    {"parse_failures", report.parse_failures}};
        std::cout << doc.dump() << "\n";
    });

    auto* rsearch = retrieve_cmd->add_subcommand("search", "search an indexed version");
    rsearch->add_option("query", r_query, "search query")->required();
    rsearch->add_option("--version", r_commit, "commit id")->required();
    rsearch->add_option("--toolchain", toolchain_arg, "toolchain version")
        ->capture_default_str();
    rsearch->add_option("--mode", r_mode, "exact|keyword|semantic")->capture_default_str();
    rsearch->add_option("-k", r_k, "maximum hits")->capture_default_str();
    rsearch->add_option("--index", paths.index, "index root")->capture_default_str();
    rsearch->add_option("--embedder", r_embedder, "host:port of an embedding server");
    add_store_opt(rsearch, paths);
    rsearch->callback([&] {
        ape::ContentStore store(paths.store);
        auto svc = make_retrieval(store);
        auto hits = svc->search(r_query, ape::search_mode_from_string(r_mode),
                                ape::ContentStore::manifest_id(r_commit, toolchain_arg), r_k);
        for (const ape::SearchHit& hit : hits) {
            json doc = {{"name", hit.decl.name},
                        {"kind", hit.decl.kind},
                        {"signature", hit.decl.signature},
                        {"file", hit.decl.file},
                        {"score", hit.score},
                        {"mode", ape::to_string(hit.mode)}};
            std::cout << doc.dump() << "\n";
        }
    });

    // --- mine -----------------------------------------------------------
    std::string repo_arg, since_arg, until_arg, out_arg;
    ape::FilterRules rules;
    auto* mine = app.add_subcommand("mine", "filter a commit history into candidates");
    mine->add_option("--repo", repo_arg, "git repo or snapshot-history directory")->required();
    mine->add_option("--since", since_arg, "ISO date, inclusive")->required();
    mine->add_option("--until", until_arg, "ISO date, inclusive")->required();
    mine->add_option("--bench", paths.bench, "bench output directory")->capture_default_str();
    mine->add_option("--out", out_arg, "also write the mine log as JSON");
    mine->add_option("--min-lines", rules.min_effective, "minimum effective lines")
        ->capture_default_str();
    mine->add_option("--max-lines", rules.max_effective, "maximum effective lines")
        ->capture_default_str();
    mine->add_option("--toolchain", toolchain_arg, "toolchain version")->capture_default_str();
    add_store_opt(mine, paths);
    mine->callback([&] {
        auto history = open_history(repo_arg);
        ape::MineResult result = ape::filter_commits(*history, since_arg, until_arg, rules);
        ape::ContentStore store(paths.store);
        ape::Miner miner(store, toolchain_arg);
        for (const ape::FileEdit& edit : result.kept) {
            miner.ingest_commit_tree(*history, edit.commit);
            if (!edit.parent.empty()) miner.ingest_commit_tree(*history, edit.parent);
            fs::path dir = miner.write_bench_candidate(paths.bench, edit);
            std::printf("kept      %-30s %s (%d lines)\n", edit.file.c_str(),
                        dir.filename().string().c_str(), edit.effective_lines_changed);
        }
        for (const ape::RejectionRecord& r : result.rejected)
            std::printf("rejected  %-30s %s (%d lines)\n", r.file.c_str(),
                        ape::to_string(r.reason), r.effective_lines);
        if (!out_arg.empty()) spit(out_arg, ape::mine_result_to_json(result).dump(2) + "\n");
        std::printf("%d commits scanned, %zu kept, %zu rejected\n", result.commits_scanned,
                    result.kept.size(), result.rejected.size());
    });

    // --- synth ----------------------------------------------------------
    std::string model_arg = "rule-based", transcript_arg, endpoint_arg, scaffold_arg = "react";
    std::vector<std::string> adapter_arg;
    ape::RunConfig cfg;
    auto add_run_opts = [&](CLI::App* cmd) {
        cmd->add_option("--budget", cfg.budget_usd, "dollar budget per task")
            ->capture_default_str();
        cmd->add_option("--max-turns", cfg.max_turns, "turn limit per task")
            ->capture_default_str();
        cmd->add_option("--judges", cfg.judge_count, "judge panel size")->capture_default_str();
        cmd->add_option("--runs", paths.runs, "trace output root")->capture_default_str();
        cmd->add_option("--model", model_arg, "rule-based | playback | name with --endpoint")
            ->capture_default_str();
        cmd->add_option("--transcript", transcript_arg, "transcript for --model playback");
        cmd->add_option("--endpoint", endpoint_arg, "host:port of a model server");
    };

    auto* synth = app.add_subcommand("synth", "synthesize instructions for mined candidates");
    synth->add_option("--repo", repo_arg, "history the candidates came from")->required();
    synth->add_option("--bench", paths.bench, "bench directory")->capture_default_str();
    synth->add_option("--toolchain", toolchain_arg, "toolchain version")->capture_default_str();
    add_run_opts(synth);
    add_store_opt(synth, paths);
    synth->callback([&] {
        auto history = open_history(repo_arg);
        ape::ContentStore store(paths.store);
        ape::WorkspaceManager workspaces(store, paths.runs);
        ape::Runtime runtime(store, workspaces, ape::CheckerRegistry::with_default_toy());
        ape::Miner miner(store, toolchain_arg);
        auto client = make_client(model_arg, transcript_arg, endpoint_arg);
        int ok = 0, failed = 0;
        for (const auto& entry : fs::directory_iterator(paths.bench)) {
            if (!entry.is_directory() || !fs::exists(entry.path() / "meta.json")) continue;
            if (fs::exists(entry.path() / "task.contract.json")) continue;  // already done
            ape::FileEdit edit = miner.edit_from_meta(entry.path());
            try {
                ape::Instruction ins =
                    miner.synthesize_instruction(edit, *history, runtime, client, cfg);
                ape::TaskContract contract =
                    miner.task_contract(edit, *history, ins, cfg.judge_count);
                miner.attach_instruction(entry.path(), contract, ins);
                std::printf("synthesized %s: %s\n", contract.id.c_str(), ins.title.c_str());
                ++ok;
            } catch (const ape::SynthesisFailedError& e) {
                std::printf("failed      %s: %s\n", entry.path().filename().string().c_str(),
                            e.what());
                ++failed;
            }
        }
        std::printf("%d synthesized, %d failed\n", ok, failed);
    });

    // --- validate -------------------------------------------------------
    auto* validate = app.add_subcommand("validate", "replay gold patches through verification");
    validate->add_option("--bench", paths.bench, "bench directory")->capture_default_str();
    validate->add_option("--toolchain", toolchain_arg, "toolchain version")
        ->capture_default_str();
    add_run_opts(validate);
    add_store_opt(validate, paths);
    validate->callback([&] {
        ape::ContentStore store(paths.store);
        ape::WorkspaceManager workspaces(store, paths.runs);
        ape::Runtime runtime(store, workspaces, ape::CheckerRegistry::with_default_toy());
        ape::Miner miner(store, toolchain_arg);
        int validated = 0, rejected = 0;
        for (const auto& entry : fs::directory_iterator(paths.bench)) {
            if (!entry.is_directory() || !fs::exists(entry.path() / "task.contract.json"))
                continue;
            ape::BenchTask task = ape::Miner::load_bench_task(entry.path());
            ape::FileEdit edit = miner.edit_from_meta(entry.path());
            ape::ValidationResult result =
                miner.validate_task(task.contract, edit, runtime, cfg);
            ape::Miner::mark_validated(entry.path(), result);
            std::printf("%-40s %s\n", task.contract.id.c_str(),
                        result.validated ? "validated" : "rejected");
            (result.validated ? validated : rejected)++;
        }
        std::printf("%d validated, %d rejected\n", validated, rejected);
    });

    // --- run ------------------------------------------------------------
    auto* run = app.add_subcommand("run", "execute bench tasks with a scaffold");
    run->add_option("--bench", paths.bench, "bench directory")->capture_default_str();
    run->add_option("--scaffold", scaffold_arg, "react | external")->capture_default_str();
    run->add_option("--adapter", adapter_arg, "external adapter command (with --scaffold external)");
    run->add_option("--parallel", cfg.parallelism, "worker count")->capture_default_str();
    run->add_flag("--fixed-clock", cfg.fixed_clock, "pin trace timestamps");
    std::string run_id_arg;
    run->add_option("--run-id", run_id_arg, "run id prefix (default: fresh)");
    add_run_opts(run);
    add_store_opt(run, paths);
    run->callback([&] {
        ape::ContentStore store(paths.store);
        ape::WorkspaceManager workspaces(store, paths.runs);
        ape::Runtime runtime(store, workspaces, ape::CheckerRegistry::with_default_toy());
        std::vector<ape::BenchTask> tasks = ape::Miner::load_bench_dir(paths.bench);
        if (tasks.empty()) throw ape::IoFailure("no synthesized tasks under " + paths.bench);
        std::vector<ape::TaskContract> contracts;
        for (const ape::BenchTask& t : tasks) contracts.push_back(t.contract);

        std::function<std::unique_ptr<ape::Scaffold>()> factory;
        if (scaffold_arg == "react") {
            factory = [&] {
                return std::make_unique<ape::ReactScaffold>(
                    make_client(model_arg, transcript_arg, endpoint_arg));
            };
        } else if (scaffold_arg == "external") {
            if (adapter_arg.empty())
                throw ape::SchemaError("--scaffold external needs --adapter <command...>");
            factory = [&] { return std::make_unique<ape::ExternalHttpScaffold>(adapter_arg); };
        } else {
            throw ape::SchemaError("unknown scaffold '" + scaffold_arg + "'");
        }

        auto results = runtime.run_many(contracts, factory, cfg, run_id_arg);
        int failures = print_verdict_lines(results);
        std::printf("%zu tasks, %zu passed\n", results.size(), results.size() - failures);
    });

    // --- report ---------------------------------------------------------
    std::string report_out = "report.json";
    auto* report = app.add_subcommand("report", "aggregate traces into curves and pass rates");
    report->add_option("--runs", paths.runs, "trace root to scan")->capture_default_str();
    report->add_option("--out", report_out, "output JSON path")->capture_default_str();
    report->callback([&] {
        std::vector<ape::RunTrace> traces = ape::collect_traces(paths.runs);
        json doc = ape::build_report(traces);
        spit(report_out, doc.dump(2) + "\n");
        std::cout << ape::render_report_table(doc);
        std::printf("wrote %s (%zu traces)\n", report_out.c_str(), traces.size());
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const ape::Error& e) {
        std::fprintf(stderr, "error [%s]: %s\n", e.code().c_str(), e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return violations_seen > 0 ? 2 : 0;
}
