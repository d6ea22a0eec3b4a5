#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

namespace ape {

/// Content address: SHA-256 over raw bytes, hex-rendered.
///
/// The algorithm is fixed for the lifetime of a store. Equal digests are
/// treated as equal bytes; bytes are never normalized before hashing, so the
/// brute-force oracle for dedup accounting is a plain set of byte strings.
struct ContentHash {
    std::string digest_hex;  // 64 lowercase hex characters

    static constexpr const char* algo = "sha256";

    bool operator==(const ContentHash&) const = default;
    auto operator<=>(const ContentHash&) const = default;

    /// True when digest_hex is exactly 64 lowercase hex characters.
    bool valid() const noexcept;

    /// First 12 hex characters; used for human-facing ids and trace digests.
    std::string abbrev() const { return digest_hex.substr(0, 12); }
};

std::string sha256_hex(std::string_view bytes);

inline ContentHash hash_bytes(std::string_view bytes) {
    return ContentHash{sha256_hex(bytes)};
}

/// Stable 64-bit value derived from the digest prefix. Used to seed
/// deterministic pseudorandom constructions (e.g. the mock embedder).
std::uint64_t seed_from_text(std::string_view text);

}  // namespace ape
