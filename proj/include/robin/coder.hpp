#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace robin::coder {

// Byte strings are carried in std::string throughout.
using Bytes = std::string;

enum class Codec { base64, base64url, url_percent, hex_lower, html_entity };
enum class Direction { encode, decode };
enum class DigestScheme { md5, sha1, sha256 };

std::optional<Codec> parse_codec(std::string_view name);
std::optional<DigestScheme> parse_digest(std::string_view name);
std::string_view to_string(Codec codec) noexcept;
std::string_view to_string(DigestScheme scheme) noexcept;

// base64 is RFC 4648 with padding; base64url encodes without padding and
// accepts either on decode. Malformed decode input throws
// Error(invalid_encoding).
Bytes transform(Codec codec, Direction direction, std::string_view input);

// Lowercase hex digest.
std::string digest(DigestScheme scheme, std::string_view input);
std::size_t digest_hex_length(DigestScheme scheme) noexcept;

struct CipherSpec {
    enum class Algorithm { aes128, aes256 } algorithm = Algorithm::aes128;
    enum class Mode { cbc, gcm } mode = Mode::cbc;
    Bytes key;
    Bytes iv;  // 16 bytes for CBC, 12 for GCM
};

// CBC uses PKCS#7 padding. GCM output is ciphertext || 16-byte tag and
// decryption verifies the tag (Error(authentication_failed)).
Bytes cipher(const CipherSpec& spec, Direction direction, std::string_view input);

// Raw single-block AES (no padding), used for known-answer checks.
Bytes aes_ecb_block(std::string_view key, std::string_view block);

enum class Mangle { as_is, lowercase, uppercase };
std::string_view to_string(Mangle rule) noexcept;
std::optional<Mangle> parse_mangle(std::string_view name);

struct CrackJob {
    std::string target_hex;
    DigestScheme scheme = DigestScheme::md5;
    std::filesystem::path wordlist;
    std::vector<Mangle> rules{Mangle::as_is};
    // Called every `progress_every` candidates with the number tried so far.
    std::function<void(std::uint64_t)> on_progress;
    std::uint64_t progress_every = 10000;
};

struct CrackHit {
    std::string word;
    Mangle rule = Mangle::as_is;
    std::uint64_t line = 0;  // 1-based
};

struct CrackResult {
    std::optional<CrackHit> hit;
    std::uint64_t candidates_tried = 0;
};

// Earliest (line, rule) match in file order. Throws Error(wordlist_unreadable)
// and Error(invalid_argument) when the digest length does not fit the scheme.
CrackResult crack_digest(const CrackJob& job);

// Pointwise XOR; Error(length_mismatch) on unequal lengths.
Bytes xor_combine(std::string_view a, std::string_view b);

struct CribHit {
    std::size_t offset = 0;
    Bytes fragment;
    double printable_score = 0.0;
};

inline constexpr double kCribPrintableThreshold = 0.9;

// Slides `crib` along `xored`, keeping fragments whose printable fraction
// (0x20..0x7E plus \n and \t) reaches the threshold; sorted by score desc,
// then offset asc. Error(crib_too_long) when |crib| > |xored|.
std::vector<CribHit> crib_drag(std::string_view xored, std::string_view crib,
                               double threshold = kCribPrintableThreshold);

double printable_fraction(std::string_view bytes) noexcept;

// Convenience hex helpers (lowercase output, case-insensitive input).
std::string to_hex(std::string_view bytes);
Bytes from_hex(std::string_view hex);

} // namespace robin::coder
