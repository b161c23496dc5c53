#include "robin/ca.hpp"

#include "robin/error.hpp"
#include "robin/net.hpp"

#include <arpa/inet.h>
#include <sys/stat.h>

#include <openssl/bn.h>
#include <openssl/evp.h>
#include <openssl/pem.h>
#include <openssl/rand.h>
#include <openssl/ssl.h>
#include <openssl/x509.h>
#include <openssl/x509v3.h>

#include <fstream>
#include <cctype>
#include <optional>
#include <sstream>

namespace robin::ca {

namespace fs = std::filesystem;

namespace {

template <typename T, void (*Free)(T*)>
struct Deleter {
    void operator()(T* p) const { Free(p); }
};
using Bio = std::unique_ptr<BIO, Deleter<BIO, BIO_free_all>>;
using Pkey = std::unique_ptr<EVP_PKEY, Deleter<EVP_PKEY, EVP_PKEY_free>>;
using Cert = std::unique_ptr<X509, Deleter<X509, X509_free>>;
using Bignum = std::unique_ptr<BIGNUM, Deleter<BIGNUM, BN_free>>;
using Extension = std::unique_ptr<X509_EXTENSION, Deleter<X509_EXTENSION, X509_EXTENSION_free>>;

[[noreturn]] void fail(ErrorCode code, const std::string& what) {
    throw Error(code, what + ": " + net::openssl_errors());
}

Pkey generate_p256() {
    EVP_PKEY* key = EVP_PKEY_Q_keygen(nullptr, nullptr, "EC", "P-256");
    if (!key) fail(ErrorCode::internal, "EC key generation failed");
    return Pkey(key);
}

std::string bio_string(BIO* bio) {
    char* data = nullptr;
    long len = BIO_get_mem_data(bio, &data);
    return std::string(data, static_cast<std::size_t>(len));
}

std::string cert_to_pem(X509* cert) {
    Bio bio(BIO_new(BIO_s_mem()));
    if (PEM_write_bio_X509(bio.get(), cert) != 1) fail(ErrorCode::internal, "PEM encode certificate");
    return bio_string(bio.get());
}

std::string key_to_pkcs8_pem(EVP_PKEY* key) {
    Bio bio(BIO_new(BIO_s_mem()));
    if (PEM_write_bio_PKCS8PrivateKey(bio.get(), key, nullptr, nullptr, 0, nullptr, nullptr) != 1)
        fail(ErrorCode::internal, "PEM encode key");
    return bio_string(bio.get());
}

// Random positive 127-bit serial.
std::string set_random_serial(X509* cert) {
    unsigned char raw[16];
    if (RAND_bytes(raw, sizeof raw) != 1) fail(ErrorCode::internal, "RAND_bytes");
    raw[0] &= 0x7f;
    raw[0] |= 0x01;
    Bignum bn(BN_bin2bn(raw, sizeof raw, nullptr));
    ASN1_INTEGER* serial = X509_get_serialNumber(cert);
    BN_to_ASN1_INTEGER(bn.get(), serial);
    char* hex = BN_bn2hex(bn.get());
    std::string out(hex);
    OPENSSL_free(hex);
    return out;
}

void add_ext(X509* cert, X509* issuer, int nid, const char* value) {
    X509V3_CTX ctx;
    X509V3_set_ctx_nodb(&ctx);
    X509V3_set_ctx(&ctx, issuer, cert, nullptr, nullptr, 0);
    Extension ext(X509V3_EXT_conf_nid(nullptr, &ctx, nid, value));
    if (!ext || X509_add_ext(cert, ext.get(), -1) != 1) fail(ErrorCode::internal, "add certificate extension");
}

Clock::time_point asn1_to_time(const ASN1_TIME* t) {
    struct tm tm {};
    ASN1_TIME_to_tm(t, &tm);
    return Clock::from_time_t(timegm(&tm));
}

void set_validity(X509* cert, Clock::time_point from, Clock::time_point to) {
    ASN1_TIME_set(X509_getm_notBefore(cert), Clock::to_time_t(from));
    ASN1_TIME_set(X509_getm_notAfter(cert), Clock::to_time_t(to));
}

std::optional<std::string> read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& data, fs::perms perms) {
    fs::path tmp = p;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::directory_unwritable, "cannot write " + tmp.string());
        // Restrict before content lands on disk.
        std::error_code ec;
        fs::permissions(tmp, perms, fs::perm_options::replace, ec);
        out << data;
        if (!out.flush()) throw Error(ErrorCode::directory_unwritable, "cannot write " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, p, ec);
    if (ec) throw Error(ErrorCode::directory_unwritable, "cannot rename into " + p.string() + ": " + ec.message());
}

std::shared_ptr<SSL_CTX> make_server_ctx(X509* leaf, X509* root, EVP_PKEY* key) {
    SSL_CTX* raw = SSL_CTX_new(TLS_server_method());
    if (!raw) fail(ErrorCode::internal, "SSL_CTX_new");
    std::shared_ptr<SSL_CTX> ctx(raw, SSL_CTX_free);
    SSL_CTX_set_min_proto_version(raw, TLS1_2_VERSION);
    if (SSL_CTX_use_certificate(raw, leaf) != 1 || SSL_CTX_use_PrivateKey(raw, key) != 1)
        fail(ErrorCode::internal, "load leaf into TLS context");
    X509_up_ref(root);
    SSL_CTX_add_extra_chain_cert(raw, root);
    SSL_CTX_set_alpn_select_cb(
        raw,
        [](SSL*, const unsigned char** out, unsigned char* outlen, const unsigned char* in, unsigned int inlen,
           void*) -> int {
            static const unsigned char h11[] = {8, 'h', 't', 't', 'p', '/', '1', '.', '1'};
            unsigned char* selected = nullptr;
            if (SSL_select_next_proto(&selected, outlen, h11, sizeof h11, in, inlen) == OPENSSL_NPN_NEGOTIATED) {
                *out = selected;
                return SSL_TLSEXT_ERR_OK;
            }
            return SSL_TLSEXT_ERR_NOACK;
        },
        nullptr);
    return ctx;
}

} // namespace

bool is_ip_literal(std::string_view host) {
    std::string h(host);
    in_addr a4{};
    in6_addr a6{};
    return ::inet_pton(AF_INET, h.c_str(), &a4) == 1 || ::inet_pton(AF_INET6, h.c_str(), &a6) == 1;
}

bool is_valid_host(std::string_view host) {
    if (host.empty()) return false;
    if (is_ip_literal(host)) return true;
    if (host.back() == '.') host.remove_suffix(1);
    if (host.empty() || host.size() > 253) return false;
    std::size_t start = 0;
    while (start <= host.size()) {
        auto dot = host.find('.', start);
        auto label = host.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start);
        if (label.empty() || label.size() > 63 || label.front() == '-' || label.back() == '-') return false;
        for (unsigned char c : label)
            if (!std::isalnum(c) && c != '-' && c != '_') return false;
        if (dot == std::string_view::npos) break;
        start = dot + 1;
    }
    return true;
}

std::shared_ptr<CertAuthority> CertAuthority::init(const fs::path& ca_dir) {
    std::shared_ptr<CertAuthority> ca(new CertAuthority());
    ca->dir_ = ca_dir;
    const fs::path key_path = ca_dir / kKeyFile;
    const fs::path cert_path = ca_dir / kCertFile;

    std::error_code ec;
    bool have_key = fs::exists(key_path, ec);
    bool have_cert = fs::exists(cert_path, ec);

    if (have_key || have_cert) {
        if (!have_key || !have_cert)
            throw Error(ErrorCode::corrupt_ca_files, "incomplete CA in " + ca_dir.string() + " (need both " +
                                                         kKeyFile + " and " + kCertFile + ")");
        auto key_pem = read_file(key_path);
        auto cert_pem = read_file(cert_path);
        if (!key_pem || !cert_pem) throw Error(ErrorCode::ca_unavailable, "cannot read CA files in " + ca_dir.string());
        Bio kb(BIO_new_mem_buf(key_pem->data(), static_cast<int>(key_pem->size())));
        Pkey key(PEM_read_bio_PrivateKey(kb.get(), nullptr, nullptr, nullptr));
        Bio cb(BIO_new_mem_buf(cert_pem->data(), static_cast<int>(cert_pem->size())));
        Cert cert(PEM_read_bio_X509(cb.get(), nullptr, nullptr, nullptr));
        if (!key || !cert) fail(ErrorCode::corrupt_ca_files, "unparseable CA files in " + ca_dir.string());
        if (X509_check_private_key(cert.get(), key.get()) != 1)
            fail(ErrorCode::corrupt_ca_files, "CA key does not match certificate");
        ca->root_pem_ = *cert_pem;
        ca->root_key_ = key.release();
        ca->root_cert_ = cert.release();
    } else {
        fs::create_directories(ca_dir, ec);
        if (ec && !fs::is_directory(ca_dir))
            throw Error(ErrorCode::directory_unwritable, "cannot create " + ca_dir.string() + ": " + ec.message());

        Pkey key = generate_p256();
        Cert cert(X509_new());
        X509_set_version(cert.get(), 2);
        set_random_serial(cert.get());
        auto now = Clock::now();
        set_validity(cert.get(), now - std::chrono::hours(1), now + std::chrono::hours(24 * 3650));
        X509_NAME* name = X509_get_subject_name(cert.get());
        X509_NAME_add_entry_by_txt(name, "O", MBSTRING_ASC, reinterpret_cast<const unsigned char*>("Robin"), -1, -1, 0);
        X509_NAME_add_entry_by_txt(name, "CN", MBSTRING_ASC,
                                   reinterpret_cast<const unsigned char*>(kRootCommonName), -1, -1, 0);
        X509_set_issuer_name(cert.get(), name);
        X509_set_pubkey(cert.get(), key.get());
        add_ext(cert.get(), cert.get(), NID_basic_constraints, "critical,CA:TRUE");
        add_ext(cert.get(), cert.get(), NID_key_usage, "critical,keyCertSign,cRLSign,digitalSignature");
        add_ext(cert.get(), cert.get(), NID_subject_key_identifier, "hash");
        if (X509_sign(cert.get(), key.get(), EVP_sha256()) <= 0) fail(ErrorCode::internal, "sign root certificate");

        std::string key_pem = key_to_pkcs8_pem(key.get());
        std::string cert_pem = cert_to_pem(cert.get());
        write_file(key_path, key_pem, fs::perms::owner_read | fs::perms::owner_write);
        write_file(cert_path, cert_pem,
                   fs::perms::owner_read | fs::perms::owner_write | fs::perms::group_read | fs::perms::others_read);
        ca->root_pem_ = cert_pem;
        ca->root_key_ = key.release();
        ca->root_cert_ = cert.release();
        ca->generated_ = true;
    }
    ca->not_before_ = asn1_to_time(X509_get0_notBefore(ca->root_cert_));
    ca->not_after_ = asn1_to_time(X509_get0_notAfter(ca->root_cert_));
    return ca;
}

CertAuthority::~CertAuthority() {
    EVP_PKEY_free(root_key_);
    X509_free(root_cert_);
}

std::size_t CertAuthority::cached_leaf_count() const {
    std::lock_guard lock(mu_);
    return cache_.size();
}

std::shared_ptr<const LeafCertificate> CertAuthority::issue_leaf(const std::string& host_in) {
    std::string host = host_in;
    for (char& c : host) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (!host.empty() && host.front() == '[' && host.back() == ']') host = host.substr(1, host.size() - 2);
    if (!is_valid_host(host)) throw Error(ErrorCode::invalid_host_name, "invalid host name: " + host_in);

    // Minting under the lock makes concurrent first issuance single-flight.
    std::lock_guard lock(mu_);
    auto it = cache_.find(host);
    if (it != cache_.end() && it->second->not_after - Clock::now() >= kLeafRenewMargin) return it->second;
    auto leaf = mint(host);
    cache_[host] = leaf;
    return leaf;
}

std::shared_ptr<const LeafCertificate> CertAuthority::mint(const std::string& host) {
    Pkey key = generate_p256();
    Cert cert(X509_new());
    X509_set_version(cert.get(), 2);
    std::string serial;
    do {
        serial = set_random_serial(cert.get());
    } while (serials_.count(serial));
    serials_.insert(serial);

    auto now = Clock::now();
    auto not_before = now - std::chrono::hours(1);
    auto not_after = now + kLeafValidity;
    set_validity(cert.get(), not_before, not_after);

    X509_NAME* name = X509_get_subject_name(cert.get());
    std::string cn = host.substr(0, 64);
    X509_NAME_add_entry_by_txt(name, "CN", MBSTRING_ASC, reinterpret_cast<const unsigned char*>(cn.c_str()), -1, -1, 0);
    X509_set_issuer_name(cert.get(), X509_get_subject_name(root_cert_));
    X509_set_pubkey(cert.get(), key.get());

    bool ip = is_ip_literal(host);
    std::string san = (ip ? "IP:" : "DNS:") + host;
    add_ext(cert.get(), root_cert_, NID_basic_constraints, "critical,CA:FALSE");
    add_ext(cert.get(), root_cert_, NID_key_usage, "critical,digitalSignature");
    add_ext(cert.get(), root_cert_, NID_ext_key_usage, "serverAuth");
    add_ext(cert.get(), root_cert_, NID_subject_alt_name, san.c_str());
    add_ext(cert.get(), root_cert_, NID_authority_key_identifier, "keyid:always");
    if (X509_sign(cert.get(), root_key_, EVP_sha256()) <= 0) fail(ErrorCode::internal, "sign leaf certificate");

    auto leaf = std::make_shared<LeafCertificate>();
    leaf->host = host;
    leaf->cert_pem = cert_to_pem(cert.get());
    leaf->chain_pem = leaf->cert_pem + root_pem_;
    leaf->key_pem = key_to_pkcs8_pem(key.get());
    leaf->serial_hex = serial;
    leaf->ip_address = ip;
    leaf->not_before = asn1_to_time(X509_get0_notBefore(cert.get()));
    leaf->not_after = asn1_to_time(X509_get0_notAfter(cert.get()));
    leaf->server_ctx = make_server_ctx(cert.get(), root_cert_, key.get());
    return leaf;
}

} // namespace robin::ca
