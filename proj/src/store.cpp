#include "ape/store.hpp"

#include <atomic>
#include <fstream>
#include <sstream>
#include <system_error>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace ape {
namespace {

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoFailure("cannot open " + p.string());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void write_file_atomic(const fs::path& target, std::string_view bytes) {
    static std::atomic<std::uint64_t> counter{0};
    fs::path tmp = target;
    tmp += ".tmp." + std::to_string(counter.fetch_add(1));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoFailure("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoFailure("short write to " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp);
        // A concurrent writer may have landed the identical content first.
        if (!fs::exists(target)) throw IoFailure("cannot publish " + target.string());
    }
}

std::string sanitize_component(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char ch : s) {
        bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') ||
                  (ch >= '0' && ch <= '9') || ch == '.' || ch == '_' || ch == '-';
        out.push_back(ok ? ch : '-');
    }
    return out.empty() ? std::string("-") : out;
}

}  // namespace

ContentStore::ContentStore(fs::path root) : root_(std::move(root)) {
    fs::create_directories(root_ / "blobs");
    fs::create_directories(root_ / "manifests");
}

fs::path ContentStore::blob_path(const ContentHash& hash) const {
    return root_ / "blobs" / hash.digest_hex.substr(0, 2) / hash.digest_hex;
}

fs::path ContentStore::manifest_path(const std::string& id) const {
    return root_ / "manifests" / (id + ".json");
}

ContentHash ContentStore::put_blob(const ContentBlob& blob) {
    return put_bytes(blob.bytes, blob.kind);
}

ContentHash ContentStore::put_bytes(std::string_view bytes, BlobKind) {
    ContentHash hash{sha256_hex(bytes)};
    fs::path target = blob_path(hash);
    if (!fs::exists(target)) {
        fs::create_directories(target.parent_path());
        write_file_atomic(target, bytes);
    }
    return hash;
}

bool ContentStore::has_blob(const ContentHash& hash) const {
    return hash.valid() && fs::exists(blob_path(hash));
}

std::optional<std::string> ContentStore::get_blob(const ContentHash& hash) const {
    if (!has_blob(hash)) return std::nullopt;
    return read_file(blob_path(hash));
}

std::uint64_t ContentStore::blob_size(const ContentHash& hash) const {
    if (!has_blob(hash)) throw DanglingHashError(hash.digest_hex);
    return static_cast<std::uint64_t>(fs::file_size(blob_path(hash)));
}

std::uint64_t ContentStore::stored_blob_count() const {
    std::uint64_t n = 0;
    for (const auto& entry : fs::recursive_directory_iterator(root_ / "blobs"))
        if (entry.is_regular_file()) ++n;
    return n;
}

std::string ContentStore::manifest_id(const std::string& commit, const std::string& toolchain) {
    return sanitize_component(commit) + "." + sanitize_component(toolchain);
}

std::string ContentStore::publish_manifest(const VersionManifest& m) {
    for (const auto& [path, hash] : m.entries)
        if (!has_blob(hash)) throw DanglingHashError(hash.digest_hex);

    const std::string id = manifest_id(m.commit, m.toolchain);
    if (fs::exists(manifest_path(id))) {
        VersionManifest existing = load_manifest(id);
        if (existing == m) return id;  // idempotent republish
        throw ConflictingManifestError(id);
    }

    json entries = json::object();
    for (const auto& [path, hash] : m.entries) entries[path] = hash.digest_hex;
    json doc = {{"commit", m.commit}, {"toolchain", m.toolchain}, {"entries", entries}};
    write_file_atomic(manifest_path(id), doc.dump(2) + "\n");
    return id;
}

bool ContentStore::has_manifest(const std::string& commit, const std::string& toolchain) const {
    return find_manifest(commit, toolchain).has_value();
}

bool ContentStore::has_manifest_id(const std::string& id) const {
    return fs::exists(manifest_path(id));
}

std::optional<VersionManifest> ContentStore::find_manifest(const std::string& commit,
                                                           const std::string& toolchain) const {
    const std::string id = manifest_id(commit, toolchain);
    if (!fs::exists(manifest_path(id))) return std::nullopt;
    VersionManifest m = load_manifest(id);
    // Sanitized filenames can collide; trust the recorded fields, not the name.
    if (m.commit != commit || m.toolchain != toolchain) return std::nullopt;
    return m;
}

VersionManifest ContentStore::load_manifest(const std::string& id) const {
    fs::path p = manifest_path(id);
    if (!fs::exists(p)) throw UnknownManifestError(id);
    json doc;
    try {
        doc = json::parse(read_file(p));
    } catch (const json::parse_error& e) {
        throw IoFailure("corrupt manifest " + id + ": " + e.what());
    }
    VersionManifest m;
    m.commit = doc.at("commit").get<std::string>();
    m.toolchain = doc.at("toolchain").get<std::string>();
    for (const auto& [path, digest] : doc.at("entries").items())
        m.entries.emplace(path, ContentHash{digest.get<std::string>()});
    return m;
}

std::vector<std::string> ContentStore::list_manifest_ids() const {
    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(root_ / "manifests")) {
        if (!entry.is_regular_file()) continue;
        fs::path name = entry.path().filename();
        if (name.extension() != ".json") continue;
        ids.push_back(name.stem().string());
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::size_t ContentStore::materialize_version(const std::string& commit,
                                              const std::string& toolchain,
                                              const fs::path& dest) const {
    auto m = find_manifest(commit, toolchain);
    if (!m) throw UnknownManifestError(manifest_id(commit, toolchain));
    return materialize_manifest(manifest_id(commit, toolchain), dest);
}

std::size_t ContentStore::materialize_manifest(const std::string& id, const fs::path& dest) const {
    VersionManifest m = load_manifest(id);
    if (fs::exists(dest) && !fs::is_empty(dest))
        throw IoFailure("materialize destination not empty: " + dest.string());
    fs::create_directories(dest);

    std::vector<fs::path> dirs{dest};
    for (const auto& [rel, hash] : m.entries) {
        auto bytes = get_blob(hash);
        if (!bytes) throw DanglingHashError(hash.digest_hex);
        fs::path target = dest / fs::path(rel);
        for (fs::path d = target.parent_path(); d != dest && !d.empty(); d = d.parent_path())
            dirs.push_back(d);
        fs::create_directories(target.parent_path());
        std::ofstream out(target, std::ios::binary | std::ios::trunc);
        if (!out) throw IoFailure("cannot write " + target.string());
        out.write(bytes->data(), static_cast<std::streamsize>(bytes->size()));
        out.close();
        fs::permissions(target, fs::perms::owner_read | fs::perms::group_read | fs::perms::others_read,
                        fs::perm_options::replace);
    }
    // Directories last: r-x so the tree stays listable but not writable.
    for (const auto& d : dirs)
        fs::permissions(d,
                        fs::perms::owner_read | fs::perms::owner_exec | fs::perms::group_read |
                            fs::perms::group_exec | fs::perms::others_read | fs::perms::others_exec,
                        fs::perm_options::replace);
    return m.entries.size();
}

std::pair<std::string, std::size_t> ContentStore::ingest_tree(const fs::path& src,
                                                              const std::string& commit,
                                                              const std::string& toolchain) {
    if (!fs::is_directory(src)) throw IoFailure("ingest source is not a directory: " + src.string());
    VersionManifest m;
    m.commit = commit;
    m.toolchain = toolchain;
    for (const auto& entry : fs::recursive_directory_iterator(src)) {
        if (!entry.is_regular_file()) continue;
        std::string rel = fs::relative(entry.path(), src).generic_string();
        m.entries.emplace(rel, put_bytes(read_file(entry.path())));
    }
    return {publish_manifest(m), m.entries.size()};
}

DedupStats ContentStore::stats_over(const std::vector<std::string>& ids) const {
    DedupStats s;
    std::map<std::string, std::uint64_t> unique;  // digest -> size
    for (const auto& id : ids) {
        VersionManifest m = load_manifest(id);
        for (const auto& [path, hash] : m.entries) {
            std::uint64_t size = blob_size(hash);
            ++s.total_instances;
            s.naive_bytes += size;
            unique.emplace(hash.digest_hex, size);
        }
    }
    s.unique_blobs = unique.size();
    for (const auto& [digest, size] : unique) s.stored_bytes += size;
    if (s.naive_bytes > 0)
        s.savings_ratio =
            1.0 - static_cast<double>(s.stored_bytes) / static_cast<double>(s.naive_bytes);
    return s;
}

DedupStats ContentStore::dedup_stats() const { return stats_over(list_manifest_ids()); }

std::map<std::string, DedupStats> ContentStore::dedup_stats_by_toolchain() const {
    std::map<std::string, std::vector<std::string>> groups;
    for (const auto& id : list_manifest_ids()) groups[load_manifest(id).toolchain].push_back(id);
    std::map<std::string, DedupStats> out;
    for (const auto& [toolchain, ids] : groups) out.emplace(toolchain, stats_over(ids));
    return out;
}

ManifestLookup ContentStore::lookup() const {
    return [this](const std::string& commit, const std::string& toolchain) {
        return has_manifest(commit, toolchain);
    };
}

void make_tree_writable(const fs::path& root) {
    if (!fs::exists(root)) return;
    auto add_write = [](const fs::path& p) {
        std::error_code ec;
        fs::permissions(p, fs::perms::owner_write, fs::perm_options::add, ec);
    };
    add_write(root);
    if (fs::is_directory(root))
        for (const auto& entry : fs::recursive_directory_iterator(root)) add_write(entry.path());
}

}  // namespace ape
