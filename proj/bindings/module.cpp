#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>

#include <nlohmann/json.hpp>

#include "ape/contract.hpp"
#include "ape/diagnostics.hpp"
#include "ape/diff.hpp"
#include "ape/glob.hpp"
#include "ape/hash.hpp"
#include "ape/miner.hpp"
#include "ape/retrieve.hpp"
#include "ape/runtime.hpp"
#include "ape/store.hpp"
#include "ape/toy.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

py::object json_to_py(const json& j) {
    switch (j.type()) {
        case json::value_t::null: return py::none();
        case json::value_t::boolean: return py::bool_(j.get<bool>());
        case json::value_t::number_integer: return py::int_(j.get<long long>());
        case json::value_t::number_unsigned: return py::int_(j.get<unsigned long long>());
        case json::value_t::number_float: return py::float_(j.get<double>());
        case json::value_t::string: return py::str(j.get<std::string>());
        case json::value_t::array: {
            py::list out;
            for (const json& item : j) out.append(json_to_py(item));
            return out;
        }
        case json::value_t::object: {
            py::dict out;
            for (const auto& [key, value] : j.items()) out[py::str(key)] = json_to_py(value);
            return out;
        }
        default: return py::none();
    }
}

}  // namespace

PYBIND11_MODULE(_ape, m) {
    m.doc() = "Task-contract harness core: hashing, storage, toy checking, retrieval.";

    py::register_exception<ape::Error>(m, "ApeError");

    m.def("sha256_hex", [](const std::string& bytes) { return ape::sha256_hex(bytes); },
          py::arg("data"));

    m.def("glob_match",
          [](const std::string& pattern, const std::string& path) {
              std::string err = ape::glob_error(pattern);
              if (!err.empty()) throw ape::SyntaxError(err);
              return ape::glob_match(pattern, path);
          },
          py::arg("pattern"), py::arg("path"));
    m.def("glob_error",
          [](const std::string& pattern) -> py::object {
              std::string err = ape::glob_error(pattern);
              return err.empty() ? py::object(py::none()) : py::object(py::str(err));
          },
          py::arg("pattern"));

    m.def("toy_check",
          [](const std::map<std::string, std::string>& sources,
             const std::vector<std::string>& target_decls) {
              std::set<std::string> targets(target_decls.begin(), target_decls.end());
              return json_to_py(ape::to_json(ape::toy_check(sources, targets), false));
          },
          py::arg("sources"), py::arg("target_decls") = std::vector<std::string>{});

    m.def("count_effective_lines",
          [](const std::string& pre, const std::string& post) {
              return ape::count_effective_lines(pre, post, ape::CommentSyntax::toy());
          },
          py::arg("pre"), py::arg("post"));

    m.def("parse_contract",
          [](const std::string& text) {
              return json_to_py(json::parse(ape::serialize_contract(ape::parse_contract(text))));
          },
          py::arg("text"), "Parses and canonicalizes a contract; returns it as a dict.");
    m.def("validate_contract",
          [](const std::string& text) {
              ape::TaskContract c = ape::parse_contract(text);
              py::list out;
              for (const ape::Violation& v : ape::validate_contract(c, nullptr)) {
                  py::dict d;
                  d["code"] = ape::to_string(v.code);
                  d["path"] = v.path;
                  d["detail"] = v.detail;
                  out.append(d);
              }
              return out;
          },
          py::arg("text"), "Schema violations as dicts; env resolution is skipped.");

    m.def("majority_vote",
          [](const std::vector<std::string>& decisions) {
              std::vector<ape::JudgeVerdict> verdicts;
              for (std::size_t i = 0; i < decisions.size(); ++i) {
                  ape::JudgeVerdict v;
                  v.judge_index = static_cast<int>(i) + 1;
                  v.decision = ape::judge_decision_from_string(decisions[i]);
                  verdicts.push_back(v);
              }
              return ape::to_string(ape::majority_vote(verdicts));
          },
          py::arg("decisions"));

    m.def("efficiency_curve",
          [](const std::vector<std::pair<double, bool>>& samples) {
              py::list out;
              for (const ape::CurvePoint& p : ape::efficiency_curve(samples))
                  out.append(py::make_tuple(p.x, p.pass_rate));
              return out;
          },
          py::arg("samples"));

    m.def("render_unified",
          [](const std::string& path, const std::string& old_text, const std::string& new_text) {
              return ape::render_unified(path, path, old_text, new_text);
          },
          py::arg("path"), py::arg("old_text"), py::arg("new_text"));

    py::class_<ape::ContentStore>(m, "ContentStore")
        .def(py::init<std::filesystem::path>(), py::arg("root"))
        .def("put_bytes",
             [](ape::ContentStore& s, const std::string& bytes) {
                 return s.put_bytes(bytes).digest_hex;
             },
             py::arg("data"))
        .def("get_blob",
             [](const ape::ContentStore& s, const std::string& digest) -> py::object {
                 auto bytes = s.get_blob(ape::ContentHash{digest});
                 return bytes ? py::object(py::bytes(*bytes)) : py::object(py::none());
             },
             py::arg("digest"))
        .def("ingest_tree", &ape::ContentStore::ingest_tree, py::arg("src"), py::arg("commit"),
             py::arg("toolchain"))
        .def("materialize_manifest", &ape::ContentStore::materialize_manifest, py::arg("id"),
             py::arg("dest"))
        .def("list_manifest_ids", &ape::ContentStore::list_manifest_ids)
        .def("dedup_stats",
             [](const ape::ContentStore& s) {
                 ape::DedupStats d = s.dedup_stats();
                 py::dict out;
                 out["total_instances"] = d.total_instances;
                 out["unique_blobs"] = d.unique_blobs;
                 out["naive_bytes"] = d.naive_bytes;
                 out["stored_bytes"] = d.stored_bytes;
                 out["savings_ratio"] = d.savings_ratio;
                 return out;
             })
        .def_static("manifest_id", &ape::ContentStore::manifest_id, py::arg("commit"),
                    py::arg("toolchain"));

    py::class_<ape::RetrievalService>(m, "Retrieval")
        .def(py::init([](ape::ContentStore& store, std::filesystem::path index_root) {
                 return std::make_unique<ape::RetrievalService>(
                     store, std::move(index_root), std::make_shared<ape::MockEmbedder>());
             }),
             py::arg("store"), py::arg("index_root"), py::keep_alive<1, 2>())
        .def("build_index",
             [](ape::RetrievalService& svc, const std::string& manifest_id) {
                 ape::IndexReport r = svc.build_index(manifest_id);
                 py::dict out;
                 out["index_id"] = r.index_id;
                 out["decl_instances"] = r.decl_instances;
                 out["unique_added"] = r.unique_added;
                 out["unique_reused"] = r.unique_reused;
                 out["parse_failures"] = r.parse_failures;
                 return out;
             },
             py::arg("manifest_id"))
        .def("search",
             [](ape::RetrievalService& svc, const std::string& query, const std::string& mode,
                const std::string& manifest_id, std::size_t k) {
                 py::list out;
                 for (const ape::SearchHit& hit :
                      svc.search(query, ape::search_mode_from_string(mode), manifest_id, k)) {
                     py::dict d;
                     d["name"] = hit.decl.name;
                     d["kind"] = hit.decl.kind;
                     d["signature"] = hit.decl.signature;
                     d["file"] = hit.decl.file;
                     d["score"] = hit.score;
                     out.append(d);
                 }
                 return out;
             },
             py::arg("query"), py::arg("mode"), py::arg("manifest_id"), py::arg("k") = 5);
}
