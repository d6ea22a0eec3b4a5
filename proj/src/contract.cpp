#include "ape/contract.hpp"

#include <algorithm>
#include <set>

#include <nlohmann/json.hpp>

#include "ape/glob.hpp"

namespace ape {

using nlohmann::json;

const char* kind_to_string(TaskKind k) {
    switch (k) {
        case TaskKind::TheoremProving: return "theorem_proving";
        case TaskKind::ProofEngineering: return "proof_engineering";
        case TaskKind::Judgment: return "judgment";
        case TaskKind::InstructionSynthesis: return "instruction_synthesis";
        case TaskKind::LibraryAnnotation: return "library_annotation";
    }
    return "?";
}

std::optional<TaskKind> kind_from_string(std::string_view s) {
    if (s == "theorem_proving") return TaskKind::TheoremProving;
    if (s == "proof_engineering") return TaskKind::ProofEngineering;
    if (s == "judgment") return TaskKind::Judgment;
    if (s == "instruction_synthesis") return TaskKind::InstructionSynthesis;
    if (s == "library_annotation") return TaskKind::LibraryAnnotation;
    return std::nullopt;
}

const char* success_rule_to_string(SuccessRule r) {
    switch (r) {
        case SuccessRule::CompileOnly: return "compile_only";
        case SuccessRule::DualVerification: return "dual_verification";
        case SuccessRule::StructuredSubmission: return "structured_submission";
    }
    return "?";
}

std::optional<SuccessRule> success_rule_from_string(std::string_view s) {
    if (s == "compile_only") return SuccessRule::CompileOnly;
    if (s == "dual_verification") return SuccessRule::DualVerification;
    if (s == "structured_submission") return SuccessRule::StructuredSubmission;
    return std::nullopt;
}

const char* to_string(ViolationCode code) {
    switch (code) {
        case ViolationCode::EmptyId: return "EmptyId";
        case ViolationCode::DuplicateNestedId: return "DuplicateNestedId";
        case ViolationCode::InvalidCommit: return "InvalidCommit";
        case ViolationCode::UnknownEnvironment: return "UnknownEnvironment";
        case ViolationCode::EmptyInstruction: return "EmptyInstruction";
        case ViolationCode::TargetFileEscapes: return "TargetFileEscapes";
        case ViolationCode::InvalidGlob: return "InvalidGlob";
        case ViolationCode::BoundaryOverlap: return "BoundaryOverlap";
        case ViolationCode::WritableRootBlocked: return "WritableRootBlocked";
        case ViolationCode::JudgeCountNotPositive: return "JudgeCountNotPositive";
        case ViolationCode::OddJudgeCountRequired: return "OddJudgeCountRequired";
        case ViolationCode::MissingJudgmentTemplate: return "MissingJudgmentTemplate";
        case ViolationCode::SemanticRequiresDualVerification: return "SemanticRequiresDualVerification";
        case ViolationCode::StructuredSubmissionKind: return "StructuredSubmissionKind";
        case ViolationCode::NestedKindNotJudgment: return "NestedKindNotJudgment";
    }
    return "?";
}

namespace {

bool is_lower_hex(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](char c) {
        return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
    });
}

// True when `rel` is a relative path that stays inside its root after
// lexical resolution.
bool stays_relative(std::string_view rel) {
    if (rel.empty() || rel.front() == '/') return false;
    int depth = 0;
    for (const auto& seg : split_path_segments(rel)) {
        if (seg == ".") continue;
        if (seg == "..") {
            if (--depth < 0) return false;
        } else {
            ++depth;
        }
    }
    return true;
}

void require_keys(const json& j, const std::string& where, const std::set<std::string>& required,
                  const std::set<std::string>& optional) {
    if (!j.is_object()) throw SchemaError(where + ": expected an object");
    for (const auto& key : required) {
        if (!j.contains(key)) throw SchemaError(where + ": missing field '" + key + "'");
    }
    for (const auto& item : j.items()) {
        if (!required.count(item.key()) && !optional.count(item.key())) {
            throw SchemaError(where + ": unknown field '" + item.key() + "'");
        }
    }
}

std::string get_string(const json& j, const std::string& where, const char* key) {
    const json& v = j.at(key);
    if (!v.is_string()) throw SchemaError(where + "." + key + ": expected a string");
    return v.get<std::string>();
}

bool get_bool(const json& j, const std::string& where, const char* key) {
    const json& v = j.at(key);
    if (!v.is_boolean()) throw SchemaError(where + "." + key + ": expected a boolean");
    return v.get<bool>();
}

std::vector<std::string> get_string_list(const json& v, const std::string& where) {
    if (!v.is_array()) throw SchemaError(where + ": expected an array of strings");
    std::vector<std::string> out;
    for (const auto& item : v) {
        if (!item.is_string()) throw SchemaError(where + ": expected an array of strings");
        out.push_back(item.get<std::string>());
    }
    return out;
}

void check_patterns(const std::vector<std::string>& patterns, const std::string& where) {
    for (const auto& p : patterns) {
        const std::string err = glob_error(p);
        if (!err.empty()) throw SchemaError(where + ": invalid pattern '" + p + "': " + err);
    }
}

TaskContract parse_contract_json(const json& j, const std::string& where);

std::vector<TaskContract> parse_nested(const json& v, const std::string& where) {
    if (!v.is_array()) throw SchemaError(where + ": expected an array");
    std::vector<TaskContract> out;
    for (size_t i = 0; i < v.size(); ++i) {
        out.push_back(parse_contract_json(v[i], where + "[" + std::to_string(i) + "]"));
    }
    return out;
}

TaskContract parse_contract_json(const json& j, const std::string& where) {
    require_keys(j, where, {"id", "kind", "env", "objective", "verification"},
                 {"boundaries", "nested"});
    TaskContract c;
    c.id = get_string(j, where, "id");

    const std::string kind = get_string(j, where, "kind");
    const auto parsed_kind = kind_from_string(kind);
    if (!parsed_kind) throw SchemaError(where + ".kind: unknown kind '" + kind + "'");
    c.kind = *parsed_kind;

    const json& env = j.at("env");
    require_keys(env, where + ".env", {"commit", "toolchain", "checker"}, {});
    c.env.commit = get_string(env, where + ".env", "commit");
    c.env.toolchain = get_string(env, where + ".env", "toolchain");
    c.env.checker = get_string(env, where + ".env", "checker");

    const json& obj = j.at("objective");
    require_keys(obj, where + ".objective", {"instruction"}, {"target_file", "structured_fields"});
    c.objective.instruction = get_string(obj, where + ".objective", "instruction");
    if (obj.contains("target_file")) {
        c.objective.target_file = get_string(obj, where + ".objective", "target_file");
    }
    if (obj.contains("structured_fields")) {
        const json& sf = obj.at("structured_fields");
        if (!sf.is_object()) throw SchemaError(where + ".objective.structured_fields: expected an object");
        for (const auto& item : sf.items()) {
            if (!item.value().is_string()) {
                throw SchemaError(where + ".objective.structured_fields." + item.key() +
                                  ": expected a string");
            }
            c.objective.structured_fields[item.key()] = item.value().get<std::string>();
        }
    }

    if (j.contains("boundaries")) {
        const json& b = j.at("boundaries");
        require_keys(b, where + ".boundaries", {}, {"read_only", "blocked", "writable_root"});
        if (b.contains("read_only")) {
            c.boundaries.read_only = get_string_list(b.at("read_only"), where + ".boundaries.read_only");
        }
        if (b.contains("blocked")) {
            c.boundaries.blocked = get_string_list(b.at("blocked"), where + ".boundaries.blocked");
        }
        if (b.contains("writable_root")) {
            c.boundaries.writable_root = get_string(b, where + ".boundaries", "writable_root");
        }
    }
    check_patterns(c.boundaries.read_only, where + ".boundaries.read_only");
    check_patterns(c.boundaries.blocked, where + ".boundaries.blocked");
    for (const auto& p : c.boundaries.blocked) {
        if (std::find(c.boundaries.read_only.begin(), c.boundaries.read_only.end(), p) !=
            c.boundaries.read_only.end()) {
            throw SchemaError(where + ".boundaries: pattern '" + p +
                              "' is both read_only and blocked");
        }
    }

    const json& v = j.at("verification");
    require_keys(v, where + ".verification", {"require_compile", "require_semantic", "success_rule"},
                 {"judge_count"});
    c.verification.require_compile = get_bool(v, where + ".verification", "require_compile");
    c.verification.require_semantic = get_bool(v, where + ".verification", "require_semantic");
    const std::string rule = get_string(v, where + ".verification", "success_rule");
    const auto parsed_rule = success_rule_from_string(rule);
    if (!parsed_rule) throw SchemaError(where + ".verification.success_rule: unknown rule '" + rule + "'");
    c.verification.success_rule = *parsed_rule;
    if (v.contains("judge_count")) {
        const json& jc = v.at("judge_count");
        if (!jc.is_number_integer()) {
            throw SchemaError(where + ".verification.judge_count: expected an integer");
        }
        c.verification.judge_count = jc.get<int>();
    } else {
        c.verification.judge_count = c.verification.require_semantic ? 3 : 1;
    }

    if (j.contains("nested")) c.nested = parse_nested(j.at("nested"), where + ".nested");
    return c;
}

json contract_to_json(const TaskContract& c) {
    json obj = {{"instruction", c.objective.instruction}};
    if (c.objective.target_file) obj["target_file"] = *c.objective.target_file;
    json sf = json::object();
    for (const auto& [k, v] : c.objective.structured_fields) sf[k] = v;
    obj["structured_fields"] = sf;

    json nested = json::array();
    for (const auto& t : c.nested) nested.push_back(contract_to_json(t));

    return {{"id", c.id},
            {"kind", kind_to_string(c.kind)},
            {"env",
             {{"commit", c.env.commit}, {"toolchain", c.env.toolchain}, {"checker", c.env.checker}}},
            {"objective", obj},
            {"boundaries",
             {{"read_only", c.boundaries.read_only},
              {"blocked", c.boundaries.blocked},
              {"writable_root", c.boundaries.writable_root}}},
            {"verification",
             {{"require_compile", c.verification.require_compile},
              {"require_semantic", c.verification.require_semantic},
              {"judge_count", c.verification.judge_count},
              {"success_rule", success_rule_to_string(c.verification.success_rule)}}},
            {"nested", nested}};
}

void validate_into(const TaskContract& c, const ManifestLookup& store_view,
                   const std::string& where, std::vector<Violation>& out) {
    auto add = [&](ViolationCode code, const std::string& path, const std::string& detail) {
        out.push_back(Violation{code, where.empty() ? path : where + "." + path, detail});
    };

    if (c.id.empty()) add(ViolationCode::EmptyId, "id", "");

    if (c.env.commit.size() < 7 || c.env.commit.size() > 40 || !is_lower_hex(c.env.commit)) {
        add(ViolationCode::InvalidCommit, "env.commit", c.env.commit);
    } else if (store_view && !store_view(c.env.commit, c.env.toolchain)) {
        add(ViolationCode::UnknownEnvironment, "env", c.env.commit + "@" + c.env.toolchain);
    }

    if (c.objective.instruction.empty()) add(ViolationCode::EmptyInstruction, "objective.instruction", "");
    if (c.objective.target_file && !stays_relative(*c.objective.target_file)) {
        add(ViolationCode::TargetFileEscapes, "objective.target_file", *c.objective.target_file);
    }

    auto check_globs = [&](const std::vector<std::string>& patterns, const char* field) {
        for (const auto& p : patterns) {
            if (!glob_error(p).empty()) {
                add(ViolationCode::InvalidGlob, std::string("boundaries.") + field, p);
            }
        }
    };
    check_globs(c.boundaries.read_only, "read_only");
    check_globs(c.boundaries.blocked, "blocked");
    for (const auto& p : c.boundaries.blocked) {
        if (std::find(c.boundaries.read_only.begin(), c.boundaries.read_only.end(), p) !=
            c.boundaries.read_only.end()) {
            add(ViolationCode::BoundaryOverlap, "boundaries", p);
        }
    }
    if (!c.boundaries.writable_root.empty() &&
        matches_any(c.boundaries.blocked, c.boundaries.writable_root)) {
        add(ViolationCode::WritableRootBlocked, "boundaries.writable_root", c.boundaries.writable_root);
    }

    const auto& v = c.verification;
    if (v.judge_count < 1) {
        add(ViolationCode::JudgeCountNotPositive, "verification.judge_count",
            std::to_string(v.judge_count));
    } else if (v.judge_count % 2 == 0) {
        // even panels cannot implement a majority
        add(ViolationCode::OddJudgeCountRequired, "verification.judge_count",
            std::to_string(v.judge_count));
    }
    if (v.require_semantic) {
        if (v.success_rule != SuccessRule::DualVerification) {
            add(ViolationCode::SemanticRequiresDualVerification, "verification.success_rule",
                success_rule_to_string(v.success_rule));
        }
        const bool has_template = std::any_of(c.nested.begin(), c.nested.end(), [](const TaskContract& t) {
            return t.kind == TaskKind::Judgment;
        });
        if (!has_template) add(ViolationCode::MissingJudgmentTemplate, "nested", "");
    }
    if (v.success_rule == SuccessRule::StructuredSubmission &&
        c.kind != TaskKind::InstructionSynthesis && c.kind != TaskKind::LibraryAnnotation) {
        add(ViolationCode::StructuredSubmissionKind, "verification.success_rule", kind_to_string(c.kind));
    }

    std::set<std::string> nested_ids;
    for (size_t i = 0; i < c.nested.size(); ++i) {
        const TaskContract& t = c.nested[i];
        const std::string child = (where.empty() ? std::string() : where + ".") + "nested[" +
                                  std::to_string(i) + "]";
        if (t.kind != TaskKind::Judgment) {
            out.push_back(Violation{ViolationCode::NestedKindNotJudgment, child + ".kind",
                                    kind_to_string(t.kind)});
        }
        if (!nested_ids.insert(t.id).second) {
            out.push_back(Violation{ViolationCode::DuplicateNestedId, child + ".id", t.id});
        }
        validate_into(t, store_view, child, out);
    }
}

}  // namespace

TaskContract parse_contract(const std::string& source) {
    json j;
    try {
        j = json::parse(source);
    } catch (const json::parse_error& e) {
        throw SyntaxError(std::string("contract is not valid JSON: ") + e.what());
    }
    return parse_contract_json(j, "contract");
}

std::string serialize_contract(const TaskContract& c, int indent) {
    return contract_to_json(c).dump(indent);
}

std::vector<Violation> validate_contract(const TaskContract& c, const ManifestLookup& store_view) {
    std::vector<Violation> out;
    validate_into(c, store_view, "", out);
    return out;
}

std::vector<TaskContract> instantiate_nested(const TaskContract& parent,
                                             const std::string& solution_ref) {
    if (!parent.verification.require_semantic) throw NotSemanticTaskError(parent.id);
    const TaskContract* tmpl = nullptr;
    for (const auto& t : parent.nested) {
        if (t.kind == TaskKind::Judgment) {
            tmpl = &t;
            break;
        }
    }
    if (!tmpl) {
        throw Error("missing-judgment-template",
                    "contract '" + parent.id + "' has no judgment template");
    }

    std::vector<TaskContract> out;
    out.reserve(static_cast<size_t>(parent.verification.judge_count));
    for (int i = 1; i <= parent.verification.judge_count; ++i) {
        TaskContract j = *tmpl;
        j.id = parent.id + "-judge-" + std::to_string(i);
        j.env = parent.env;
        j.objective.structured_fields["solution_snapshot"] = solution_ref;
        j.objective.structured_fields["parent_instruction"] = parent.objective.instruction;
        // read-only view of the solution, materialized as the reference workspace
        j.objective.structured_fields["reference"] = solution_ref;
        out.push_back(std::move(j));
    }
    return out;
}

TaskContract default_judgment_template(const EnvironmentBinding& env) {
    TaskContract t;
    t.id = "judge-template";
    t.kind = TaskKind::Judgment;
    t.env = env;
    t.objective.instruction =
        "Assess the submitted solution against the task instruction. Rate semantic correctness, "
        "requirement alignment, and scope control as excellent/good/fair/poor, then decide "
        "accept or reject. Reply by calling submit with fields {decision, ratings, reasoning}.";
    t.verification.require_compile = false;
    t.verification.require_semantic = false;
    t.verification.judge_count = 1;
    t.verification.success_rule = SuccessRule::CompileOnly;
    return t;
}

}  // namespace ape
