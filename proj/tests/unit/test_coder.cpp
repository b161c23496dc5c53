#include "robin/coder.hpp"
#include "robin/error.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

using namespace robin;
using namespace robin::coder;

namespace {

std::string random_bytes(std::mt19937& rng, std::size_t n) {
    std::uniform_int_distribution<int> byte(0, 255);
    std::string s(n, '\0');
    for (auto& c : s) c = static_cast<char>(byte(rng));
    return s;
}

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::ok;
}

std::filesystem::path write_temp(const std::string& name, const std::string& content) {
    auto p = std::filesystem::temp_directory_path() / name;
    std::ofstream(p, std::ios::binary) << content;
    return p;
}

} // namespace

TEST(Codec, Base64KnownValues) {
    EXPECT_EQ(transform(Codec::base64, Direction::encode, "hello"), "aGVsbG8=");
    EXPECT_EQ(transform(Codec::base64, Direction::decode, "aGVsbG8="), "hello");
    // RFC 4648 test vectors.
    const std::pair<const char*, const char*> v[] = {{"", ""},         {"f", "Zg=="},         {"fo", "Zm8="},
                                                     {"foo", "Zm9v"},  {"foob", "Zm9vYg=="}, {"fooba", "Zm9vYmE="},
                                                     {"foobar", "Zm9vYmFy"}};
    for (auto [plain, enc] : v) EXPECT_EQ(transform(Codec::base64, Direction::encode, plain), enc);
}

TEST(Codec, Base64RejectsMalformed) {
    EXPECT_EQ(code_of([] { transform(Codec::base64, Direction::decode, "aGVsbG8"); }), ErrorCode::invalid_encoding);
    EXPECT_EQ(code_of([] { transform(Codec::base64, Direction::decode, "a$==") ; }), ErrorCode::invalid_encoding);
    EXPECT_EQ(code_of([] { transform(Codec::base64, Direction::decode, "Zh=="); }), ErrorCode::invalid_encoding);
}

TEST(Codec, Base64UrlNoPadding) {
    EXPECT_EQ(transform(Codec::base64url, Direction::encode, "\xfb\xff"), "-_8");
    EXPECT_EQ(transform(Codec::base64url, Direction::decode, "-_8"), "\xfb\xff");
    EXPECT_EQ(transform(Codec::base64url, Direction::decode, "-_8="), "\xfb\xff");
}

TEST(Codec, PercentAndHtml) {
    EXPECT_EQ(transform(Codec::url_percent, Direction::encode, "a b/c~"), "a%20b%2Fc~");
    EXPECT_EQ(transform(Codec::url_percent, Direction::decode, "a%20b%2fc"), "a b/c");
    EXPECT_EQ(code_of([] { transform(Codec::url_percent, Direction::decode, "%4"); }), ErrorCode::invalid_encoding);
    EXPECT_EQ(code_of([] { transform(Codec::url_percent, Direction::decode, "%zz"); }), ErrorCode::invalid_encoding);
    EXPECT_EQ(transform(Codec::html_entity, Direction::encode, "<a href=\"x\">'&'</a>"),
              "&lt;a href=&quot;x&quot;&gt;&#39;&amp;&#39;&lt;/a&gt;");
    EXPECT_EQ(transform(Codec::html_entity, Direction::decode, "&lt;&#x41;&#66;&amp;"), "<AB&");
    EXPECT_EQ(code_of([] { transform(Codec::html_entity, Direction::decode, "&bogus;"); }),
              ErrorCode::invalid_encoding);
}

TEST(Codec, HexRoundTrip) {
    EXPECT_EQ(transform(Codec::hex_lower, Direction::encode, std::string("\x00\xff\x10", 3)), "00ff10");
    EXPECT_EQ(transform(Codec::hex_lower, Direction::decode, "00FF10"), std::string("\x00\xff\x10", 3));
    EXPECT_EQ(code_of([] { transform(Codec::hex_lower, Direction::decode, "abc"); }), ErrorCode::invalid_encoding);
}

TEST(Codec, RoundTripProperty) {
    std::mt19937 rng(1234);
    std::uniform_int_distribution<std::size_t> len(0, 64);
    for (auto c : {Codec::base64, Codec::base64url, Codec::url_percent, Codec::hex_lower, Codec::html_entity}) {
        for (int i = 0; i < 10000; ++i) {
            auto s = random_bytes(rng, len(rng));
            ASSERT_EQ(transform(c, Direction::decode, transform(c, Direction::encode, s)), s)
                << to_string(c) << " " << to_hex(s);
        }
    }
}

TEST(Digest, KnownVectors) {
    // RFC 1321 and FIPS 180 examples.
    EXPECT_EQ(digest(DigestScheme::md5, ""), "d41d8cd98f00b204e9800998ecf8427e");
    EXPECT_EQ(digest(DigestScheme::md5, "abc"), "900150983cd24fb0d6963f7d28e17f72");
    EXPECT_EQ(digest(DigestScheme::md5, "message digest"), "f96b697d7cb7938d525a2f31aaf161d0");
    EXPECT_EQ(digest(DigestScheme::sha1, "abc"), "a9993e364706816aba3e25717850c26c9cd0d89d");
    EXPECT_EQ(digest(DigestScheme::sha256, "abc"),
              "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    EXPECT_EQ(digest(DigestScheme::sha256, "abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq"),
              "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
    EXPECT_EQ(digest_hex_length(DigestScheme::sha1), 40u);
}

TEST(Cipher, Fips197Block) {
    auto key = from_hex("000102030405060708090a0b0c0d0e0f");
    auto pt = from_hex("00112233445566778899aabbccddeeff");
    EXPECT_EQ(to_hex(aes_ecb_block(key, pt)), "69c4e0d86a7b0430d8cdb78070b4c55a");
}

TEST(Cipher, CbcAndGcmRoundTrip) {
    std::mt19937 rng(7);
    for (auto alg : {CipherSpec::Algorithm::aes128, CipherSpec::Algorithm::aes256}) {
        for (auto mode : {CipherSpec::Mode::cbc, CipherSpec::Mode::gcm}) {
            CipherSpec spec{alg, mode, random_bytes(rng, alg == CipherSpec::Algorithm::aes128 ? 16 : 32),
                            random_bytes(rng, mode == CipherSpec::Mode::cbc ? 16 : 12)};
            for (std::size_t n : {0u, 1u, 15u, 16u, 17u, 100u}) {
                auto pt = random_bytes(rng, n);
                auto ct = cipher(spec, Direction::encode, pt);
                EXPECT_EQ(cipher(spec, Direction::decode, ct), pt);
            }
        }
    }
}

TEST(Cipher, GcmTamperFails) {
    CipherSpec spec{CipherSpec::Algorithm::aes128, CipherSpec::Mode::gcm, std::string(16, 'k'), std::string(12, 'n')};
    auto ct = cipher(spec, Direction::encode, "attack at dawn");
    ct[0] ^= 1;
    EXPECT_EQ(code_of([&] { cipher(spec, Direction::decode, ct); }), ErrorCode::authentication_failed);
}

TEST(Cipher, BadKeyLength) {
    CipherSpec spec{CipherSpec::Algorithm::aes256, CipherSpec::Mode::cbc, std::string(16, 'k'), std::string(16, 'i')};
    EXPECT_EQ(code_of([&] { cipher(spec, Direction::encode, "x"); }), ErrorCode::bad_key_length);
}

TEST(Crack, FindsEarliestMatchWithRules) {
    auto wl = write_temp("robin_unit_wl.txt", "alpha\r\nSecret\nbeta\nsecret\n");
    CrackJob job;
    job.target_hex = digest(DigestScheme::sha1, "secret");
    job.scheme = DigestScheme::sha1;
    job.wordlist = wl;
    job.rules = {Mangle::as_is, Mangle::lowercase};
    auto r = crack_digest(job);
    ASSERT_TRUE(r.hit);
    EXPECT_EQ(r.hit->word, "Secret");
    EXPECT_EQ(r.hit->line, 2u);
    EXPECT_EQ(r.hit->rule, Mangle::lowercase);

    job.target_hex = digest(DigestScheme::sha1, "nothere");
    r = crack_digest(job);
    EXPECT_FALSE(r.hit);
    EXPECT_EQ(r.candidates_tried, 8u);

    job.wordlist = "/nonexistent/wl.txt";
    EXPECT_EQ(code_of([&] { crack_digest(job); }), ErrorCode::wordlist_unreadable);
    job.wordlist = wl;
    job.target_hex = "abcd";
    EXPECT_EQ(code_of([&] { crack_digest(job); }), ErrorCode::invalid_argument);
}

TEST(Xor, CribDragRecoversPlaintext) {
    std::string p1 = "the quick brown fox jumps over the lazy dog";
    std::string p2 = "pack my box with five dozen liquor jugs now";
    std::mt19937 rng(99);
    auto key = random_bytes(rng, p1.size());
    auto c1 = xor_combine(p1, key), c2 = xor_combine(p2, key);
    auto x = xor_combine(c1, c2);
    EXPECT_EQ(x, xor_combine(p1, p2));
    auto hits = crib_drag(x, "the quick");
    ASSERT_FALSE(hits.empty());
    bool found = false;
    for (const auto& h : hits)
        if (h.offset == 0 && h.fragment == p2.substr(0, 9)) found = true;
    EXPECT_TRUE(found);
    for (std::size_t i = 1; i < hits.size(); ++i) {
        EXPECT_TRUE(hits[i - 1].printable_score > hits[i].printable_score ||
                    (hits[i - 1].printable_score == hits[i].printable_score && hits[i - 1].offset < hits[i].offset));
    }
    EXPECT_EQ(code_of([] { xor_combine("ab", "abc"); }), ErrorCode::length_mismatch);
    EXPECT_EQ(code_of([] { crib_drag("ab", "abc"); }), ErrorCode::crib_too_long);
}
