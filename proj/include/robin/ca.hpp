#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>

typedef struct ssl_ctx_st SSL_CTX;
typedef struct evp_pkey_st EVP_PKEY;
typedef struct x509_st X509;

namespace robin::ca {

using Clock = std::chrono::system_clock;

inline constexpr const char* kKeyFile = "robin-ca.key.pem";
inline constexpr const char* kCertFile = "robin-ca.cert.pem";
inline constexpr const char* kRootCommonName = "Robin Local CA";
inline constexpr auto kLeafValidity = std::chrono::hours(24 * 397);
inline constexpr auto kLeafRenewMargin = std::chrono::hours(24);

struct LeafCertificate {
    std::string host;
    std::string cert_pem;
    std::string chain_pem;  // leaf followed by root
    std::string key_pem;    // leaf key only
    std::string serial_hex;
    bool ip_address = false;
    Clock::time_point not_before;
    Clock::time_point not_after;
    // Ready-to-use server context presenting this leaf (ALPN: http/1.1 only).
    std::shared_ptr<SSL_CTX> server_ctx;
};

// True for syntactically valid DNS names and IPv4/IPv6 literals.
bool is_valid_host(std::string_view host);
bool is_ip_literal(std::string_view host);

// Local root of trust. The root private key never leaves this object.
class CertAuthority {
public:
    // Loads robin-ca.{key,cert}.pem from ca_dir, or generates and persists a
    // fresh ECDSA P-256 root valid for ten years. Throws
    // Error(corrupt_ca_files) / Error(directory_unwritable).
    static std::shared_ptr<CertAuthority> init(const std::filesystem::path& ca_dir);

    ~CertAuthority();
    CertAuthority(const CertAuthority&) = delete;
    CertAuthority& operator=(const CertAuthority&) = delete;

    // PEM of the root certificate exactly as stored on disk.
    const std::string& export_root_pem() const noexcept { return root_pem_; }
    Clock::time_point not_before() const noexcept { return not_before_; }
    Clock::time_point not_after() const noexcept { return not_after_; }
    const std::filesystem::path& directory() const noexcept { return dir_; }
    bool generated() const noexcept { return generated_; }

    // Cached per host; re-minted when within a day of expiry. Throws
    // Error(invalid_host_name).
    std::shared_ptr<const LeafCertificate> issue_leaf(const std::string& host);
    std::size_t cached_leaf_count() const;

private:
    CertAuthority() = default;
    std::shared_ptr<const LeafCertificate> mint(const std::string& host);

    std::filesystem::path dir_;
    std::string root_pem_;
    EVP_PKEY* root_key_ = nullptr;
    X509* root_cert_ = nullptr;
    Clock::time_point not_before_{};
    Clock::time_point not_after_{};
    bool generated_ = false;

    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<const LeafCertificate>> cache_;
    std::set<std::string> serials_;
};

} // namespace robin::ca
