#include "robin/coder.hpp"

#include "robin/error.hpp"

#include <openssl/evp.h>

#include <cctype>
#include <fstream>
#include <memory>

namespace robin::coder {

namespace {

struct CipherCtxDeleter {
    void operator()(EVP_CIPHER_CTX* ctx) const { EVP_CIPHER_CTX_free(ctx); }
};
using CipherCtx = std::unique_ptr<EVP_CIPHER_CTX, CipherCtxDeleter>;

const EVP_MD* md_for(DigestScheme scheme) {
    switch (scheme) {
    case DigestScheme::md5: return EVP_md5();
    case DigestScheme::sha1: return EVP_sha1();
    case DigestScheme::sha256: return EVP_sha256();
    }
    return nullptr;
}

std::string raw_digest(const EVP_MD* md, std::string_view input) {
    unsigned char out[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(input.data(), input.size(), out, &len, md, nullptr) != 1)
        throw Error(ErrorCode::internal, "digest failed");
    return std::string(reinterpret_cast<char*>(out), len);
}

const EVP_CIPHER* evp_cipher(const CipherSpec& spec) {
    using A = CipherSpec::Algorithm;
    using M = CipherSpec::Mode;
    if (spec.algorithm == A::aes128) return spec.mode == M::cbc ? EVP_aes_128_cbc() : EVP_aes_128_gcm();
    return spec.mode == M::cbc ? EVP_aes_256_cbc() : EVP_aes_256_gcm();
}

std::string apply_rule(std::string_view word, Mangle rule) {
    std::string out(word);
    if (rule == Mangle::lowercase)
        for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (rule == Mangle::uppercase)
        for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

} // namespace

std::optional<DigestScheme> parse_digest(std::string_view name) {
    if (name == "md5") return DigestScheme::md5;
    if (name == "sha1") return DigestScheme::sha1;
    if (name == "sha256") return DigestScheme::sha256;
    return std::nullopt;
}

std::string_view to_string(DigestScheme scheme) noexcept {
    switch (scheme) {
    case DigestScheme::md5: return "md5";
    case DigestScheme::sha1: return "sha1";
    case DigestScheme::sha256: return "sha256";
    }
    return "?";
}

std::size_t digest_hex_length(DigestScheme scheme) noexcept {
    switch (scheme) {
    case DigestScheme::md5: return 32;
    case DigestScheme::sha1: return 40;
    case DigestScheme::sha256: return 64;
    }
    return 0;
}

std::string digest(DigestScheme scheme, std::string_view input) {
    return to_hex(raw_digest(md_for(scheme), input));
}

Bytes cipher(const CipherSpec& spec, Direction direction, std::string_view input) {
    std::size_t want_key = spec.algorithm == CipherSpec::Algorithm::aes128 ? 16 : 32;
    if (spec.key.size() != want_key)
        throw Error(ErrorCode::bad_key_length, "key must be " + std::to_string(want_key) + " bytes, got " +
                                                   std::to_string(spec.key.size()));
    bool gcm = spec.mode == CipherSpec::Mode::gcm;
    std::size_t want_iv = gcm ? 12 : 16;
    if (spec.iv.size() != want_iv)
        throw Error(ErrorCode::bad_key_length,
                    std::string(gcm ? "nonce" : "iv") + " must be " + std::to_string(want_iv) + " bytes");

    constexpr std::size_t kTag = 16;
    bool enc = direction == Direction::encode;
    std::string_view body = input;
    std::string_view tag;
    if (gcm && !enc) {
        if (input.size() < kTag) throw Error(ErrorCode::authentication_failed, "ciphertext shorter than GCM tag");
        body = input.substr(0, input.size() - kTag);
        tag = input.substr(input.size() - kTag);
    }

    CipherCtx ctx(EVP_CIPHER_CTX_new());
    const auto* key = reinterpret_cast<const unsigned char*>(spec.key.data());
    const auto* iv = reinterpret_cast<const unsigned char*>(spec.iv.data());
    if (EVP_CipherInit_ex(ctx.get(), evp_cipher(spec), nullptr, nullptr, nullptr, enc ? 1 : 0) != 1)
        throw Error(ErrorCode::internal, "cipher init failed");
    if (gcm && EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN, static_cast<int>(want_iv), nullptr) != 1)
        throw Error(ErrorCode::internal, "gcm ivlen failed");
    if (EVP_CipherInit_ex(ctx.get(), nullptr, nullptr, key, iv, enc ? 1 : 0) != 1)
        throw Error(ErrorCode::internal, "cipher key setup failed");

    Bytes out(body.size() + 32, '\0');
    int len = 0, total = 0;
    if (!body.empty() &&
        EVP_CipherUpdate(ctx.get(), reinterpret_cast<unsigned char*>(out.data()), &len,
                         reinterpret_cast<const unsigned char*>(body.data()), static_cast<int>(body.size())) != 1)
        throw Error(ErrorCode::internal, "cipher update failed");
    total = len;
    if (gcm && !enc &&
        EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, static_cast<int>(kTag),
                            const_cast<char*>(tag.data())) != 1)
        throw Error(ErrorCode::internal, "gcm set tag failed");
    if (EVP_CipherFinal_ex(ctx.get(), reinterpret_cast<unsigned char*>(out.data()) + total, &len) != 1) {
        if (gcm) throw Error(ErrorCode::authentication_failed, "GCM tag verification failed");
        throw Error(ErrorCode::invalid_encoding, "bad CBC padding");
    }
    total += len;
    out.resize(static_cast<std::size_t>(total));
    if (gcm && enc) {
        unsigned char t[kTag];
        if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, static_cast<int>(kTag), t) != 1)
            throw Error(ErrorCode::internal, "gcm get tag failed");
        out.append(reinterpret_cast<char*>(t), kTag);
    }
    return out;
}

Bytes aes_ecb_block(std::string_view key, std::string_view block) {
    if (block.size() != 16) throw Error(ErrorCode::invalid_argument, "AES block must be 16 bytes");
    const EVP_CIPHER* c = nullptr;
    if (key.size() == 16) c = EVP_aes_128_ecb();
    else if (key.size() == 32) c = EVP_aes_256_ecb();
    else throw Error(ErrorCode::bad_key_length, "AES key must be 16 or 32 bytes");
    CipherCtx ctx(EVP_CIPHER_CTX_new());
    EVP_EncryptInit_ex(ctx.get(), c, nullptr, reinterpret_cast<const unsigned char*>(key.data()), nullptr);
    EVP_CIPHER_CTX_set_padding(ctx.get(), 0);
    Bytes out(32, '\0');
    int len = 0, fin = 0;
    EVP_EncryptUpdate(ctx.get(), reinterpret_cast<unsigned char*>(out.data()), &len,
                      reinterpret_cast<const unsigned char*>(block.data()), 16);
    EVP_EncryptFinal_ex(ctx.get(), reinterpret_cast<unsigned char*>(out.data()) + len, &fin);
    out.resize(static_cast<std::size_t>(len + fin));
    return out;
}

std::string_view to_string(Mangle rule) noexcept {
    switch (rule) {
    case Mangle::as_is: return "as-is";
    case Mangle::lowercase: return "lowercase";
    case Mangle::uppercase: return "uppercase";
    }
    return "?";
}

std::optional<Mangle> parse_mangle(std::string_view name) {
    if (name == "as-is" || name == "as_is") return Mangle::as_is;
    if (name == "lowercase") return Mangle::lowercase;
    if (name == "uppercase") return Mangle::uppercase;
    return std::nullopt;
}

CrackResult crack_digest(const CrackJob& job) {
    if (job.target_hex.size() != digest_hex_length(job.scheme))
        throw Error(ErrorCode::invalid_argument, "target digest length does not match " +
                                                     std::string(to_string(job.scheme)));
    Bytes target = from_hex(job.target_hex);
    std::ifstream in(job.wordlist, std::ios::binary);
    if (!in) throw Error(ErrorCode::wordlist_unreadable, "cannot read wordlist " + job.wordlist.string());

    const EVP_MD* md = md_for(job.scheme);
    CrackResult result;
    std::string line;
    std::uint64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        for (Mangle rule : job.rules) {
            std::string candidate = rule == Mangle::as_is ? line : apply_rule(line, rule);
            ++result.candidates_tried;
            if (job.on_progress && job.progress_every > 0 && result.candidates_tried % job.progress_every == 0)
                job.on_progress(result.candidates_tried);
            if (raw_digest(md, candidate) == target) {
                result.hit = CrackHit{line, rule, line_no};
                return result;
            }
        }
    }
    if (in.bad()) throw Error(ErrorCode::wordlist_unreadable, "read error on " + job.wordlist.string());
    return result;
}

} // namespace robin::coder
