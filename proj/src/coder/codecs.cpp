#include "robin/coder.hpp"

#include "robin/error.hpp"

#include <algorithm>
#include <array>
#include <charconv>

namespace robin::coder {

namespace {

constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
constexpr char kB64Url[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";

[[noreturn]] void invalid(const std::string& what) {
    throw Error(ErrorCode::invalid_encoding, what);
}

std::string b64_encode(std::string_view in, const char* alphabet, bool pad) {
    std::string out;
    out.reserve((in.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 3 <= in.size(); i += 3) {
        std::uint32_t v = (static_cast<unsigned char>(in[i]) << 16) | (static_cast<unsigned char>(in[i + 1]) << 8) |
                          static_cast<unsigned char>(in[i + 2]);
        out += alphabet[(v >> 18) & 63];
        out += alphabet[(v >> 12) & 63];
        out += alphabet[(v >> 6) & 63];
        out += alphabet[v & 63];
    }
    std::size_t rest = in.size() - i;
    if (rest == 1) {
        std::uint32_t v = static_cast<unsigned char>(in[i]) << 16;
        out += alphabet[(v >> 18) & 63];
        out += alphabet[(v >> 12) & 63];
        if (pad) out += "==";
    } else if (rest == 2) {
        std::uint32_t v = (static_cast<unsigned char>(in[i]) << 16) | (static_cast<unsigned char>(in[i + 1]) << 8);
        out += alphabet[(v >> 18) & 63];
        out += alphabet[(v >> 12) & 63];
        out += alphabet[(v >> 6) & 63];
        if (pad) out += '=';
    }
    return out;
}

std::string b64_decode(std::string_view in, const char* alphabet, bool require_padding) {
    std::array<int, 256> rev;
    rev.fill(-1);
    for (int i = 0; i < 64; ++i) rev[static_cast<unsigned char>(alphabet[i])] = i;

    std::size_t padding = 0;
    while (!in.empty() && in.back() == '=' && padding < 2) {
        in.remove_suffix(1);
        ++padding;
    }
    if (require_padding && (in.size() + padding) % 4 != 0) invalid("base64 length is not a multiple of 4");
    if (padding > 0 && (in.size() + padding) % 4 != 0) invalid("misplaced base64 padding");
    if (in.size() % 4 == 1) invalid("truncated base64 quantum");

    std::string out;
    out.reserve(in.size() * 3 / 4);
    std::uint32_t acc = 0;
    int bits = 0;
    for (char c : in) {
        int v = rev[static_cast<unsigned char>(c)];
        if (v < 0) invalid(std::string("invalid base64 character '") + c + "'");
        acc = (acc << 6) | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out += static_cast<char>((acc >> bits) & 0xff);
        }
    }
    // Non-canonical encodings carry stray low bits; reject them.
    if (bits > 0 && (acc & ((1u << bits) - 1)) != 0) invalid("non-canonical base64 trailing bits");
    return out;
}

int hex_value(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

bool unreserved(unsigned char c) {
    return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-' || c == '.' ||
           c == '_' || c == '~';
}

std::string percent_encode(std::string_view in) {
    static constexpr char kHexUpper[] = "0123456789ABCDEF";
    std::string out;
    out.reserve(in.size());
    for (unsigned char c : in) {
        if (unreserved(c)) {
            out += static_cast<char>(c);
        } else {
            out += '%';
            out += kHexUpper[c >> 4];
            out += kHexUpper[c & 15];
        }
    }
    return out;
}

std::string percent_decode(std::string_view in) {
    std::string out;
    out.reserve(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        if (in[i] != '%') {
            out += in[i];
            continue;
        }
        if (i + 2 >= in.size()) invalid("truncated percent escape");
        int hi = hex_value(in[i + 1]), lo = hex_value(in[i + 2]);
        if (hi < 0 || lo < 0) invalid("invalid percent escape");
        out += static_cast<char>(hi * 16 + lo);
        i += 2;
    }
    return out;
}

std::string html_encode(std::string_view in) {
    std::string out;
    out.reserve(in.size());
    for (char c : in) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        case '\'': out += "&#39;"; break;
        default: out += c;
        }
    }
    return out;
}

void append_utf8(std::string& out, std::uint32_t cp) {
    if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        out += static_cast<char>(0xF0 | (cp >> 18));
        out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
}

std::string html_decode(std::string_view in) {
    std::string out;
    out.reserve(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        if (in[i] != '&') {
            out += in[i];
            continue;
        }
        auto semi = in.find(';', i);
        if (semi == std::string_view::npos || semi - i > 12) invalid("unterminated character reference");
        std::string_view ref = in.substr(i + 1, semi - i - 1);
        if (ref == "amp") out += '&';
        else if (ref == "lt") out += '<';
        else if (ref == "gt") out += '>';
        else if (ref == "quot") out += '"';
        else if (ref == "apos") out += '\'';
        else if (ref.size() >= 2 && ref[0] == '#') {
            std::uint32_t cp = 0;
            std::string_view digits = ref.substr(1);
            int base = 10;
            if (!digits.empty() && (digits[0] == 'x' || digits[0] == 'X')) {
                base = 16;
                digits.remove_prefix(1);
            }
            auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), cp, base);
            if (digits.empty() || ec != std::errc() || ptr != digits.data() + digits.size() || cp > 0x10FFFF ||
                (cp >= 0xD800 && cp <= 0xDFFF))
                invalid("invalid numeric character reference");
            append_utf8(out, cp);
        } else {
            invalid("unknown character reference &" + std::string(ref) + ";");
        }
        i = semi;
    }
    return out;
}

} // namespace

std::optional<Codec> parse_codec(std::string_view name) {
    if (name == "base64") return Codec::base64;
    if (name == "base64url") return Codec::base64url;
    if (name == "url" || name == "url_percent") return Codec::url_percent;
    if (name == "hex" || name == "hex_lower") return Codec::hex_lower;
    if (name == "html" || name == "html_entity") return Codec::html_entity;
    return std::nullopt;
}

std::string_view to_string(Codec codec) noexcept {
    switch (codec) {
    case Codec::base64: return "base64";
    case Codec::base64url: return "base64url";
    case Codec::url_percent: return "url_percent";
    case Codec::hex_lower: return "hex_lower";
    case Codec::html_entity: return "html_entity";
    }
    return "?";
}

std::string to_hex(std::string_view bytes) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (unsigned char c : bytes) {
        out += kHex[c >> 4];
        out += kHex[c & 15];
    }
    return out;
}

Bytes from_hex(std::string_view hex) {
    if (hex.size() % 2 != 0) invalid("odd-length hex string");
    Bytes out;
    out.reserve(hex.size() / 2);
    for (std::size_t i = 0; i < hex.size(); i += 2) {
        int hi = hex_value(hex[i]), lo = hex_value(hex[i + 1]);
        if (hi < 0 || lo < 0) invalid("invalid hex digit");
        out += static_cast<char>(hi * 16 + lo);
    }
    return out;
}

Bytes transform(Codec codec, Direction direction, std::string_view input) {
    bool enc = direction == Direction::encode;
    switch (codec) {
    case Codec::base64: return enc ? b64_encode(input, kB64, true) : b64_decode(input, kB64, true);
    case Codec::base64url: return enc ? b64_encode(input, kB64Url, false) : b64_decode(input, kB64Url, false);
    case Codec::url_percent: return enc ? percent_encode(input) : percent_decode(input);
    case Codec::hex_lower: return enc ? to_hex(input) : from_hex(input);
    case Codec::html_entity: return enc ? html_encode(input) : html_decode(input);
    }
    throw Error(ErrorCode::invalid_argument, "unknown codec");
}

Bytes xor_combine(std::string_view a, std::string_view b) {
    if (a.size() != b.size())
        throw Error(ErrorCode::length_mismatch,
                    "xor inputs differ in length (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
    Bytes out(a.size(), '\0');
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = static_cast<char>(a[i] ^ b[i]);
    return out;
}

double printable_fraction(std::string_view bytes) noexcept {
    if (bytes.empty()) return 0.0;
    std::size_t ok = 0;
    for (unsigned char c : bytes)
        if ((c >= 0x20 && c <= 0x7e) || c == '\n' || c == '\t') ++ok;
    return static_cast<double>(ok) / static_cast<double>(bytes.size());
}

std::vector<CribHit> crib_drag(std::string_view xored, std::string_view crib, double threshold) {
    if (crib.size() > xored.size())
        throw Error(ErrorCode::crib_too_long, "crib is longer than the xored input");
    std::vector<CribHit> hits;
    if (crib.empty()) return hits;
    for (std::size_t off = 0; off + crib.size() <= xored.size(); ++off) {
        Bytes fragment = xor_combine(xored.substr(off, crib.size()), crib);
        double score = printable_fraction(fragment);
        if (score >= threshold) hits.push_back({off, std::move(fragment), score});
    }
    std::stable_sort(hits.begin(), hits.end(), [](const CribHit& a, const CribHit& b) {
        if (a.printable_score != b.printable_score) return a.printable_score > b.printable_score;
        return a.offset < b.offset;
    });
    return hits;
}

} // namespace robin::coder
