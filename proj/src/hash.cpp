#include "ape/hash.hpp"

#include <openssl/evp.h>

#include <array>
#include <stdexcept>

namespace ape {

namespace {

constexpr char kHexDigits[] = "0123456789abcdef";

}  // namespace

bool ContentHash::valid() const noexcept {
    if (digest_hex.size() != 64) return false;
    for (char c : digest_hex) {
        const bool hex = (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
        if (!hex) return false;
    }
    return true;
}

std::string sha256_hex(std::string_view bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256 digest failed");
    }
    std::string hex;
    hex.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        hex.push_back(kHexDigits[digest[i] >> 4]);
        hex.push_back(kHexDigits[digest[i] & 0x0f]);
    }
    return hex;
}

std::uint64_t seed_from_text(std::string_view text) {
    const std::string hex = sha256_hex(text);
    std::uint64_t seed = 0;
    for (int i = 0; i < 16; ++i) {
        const char c = hex[static_cast<size_t>(i)];
        const std::uint64_t nibble =
            c <= '9' ? static_cast<std::uint64_t>(c - '0') : static_cast<std::uint64_t>(c - 'a' + 10);
        seed = (seed << 4) | nibble;
    }
    return seed;
}

}  // namespace ape
