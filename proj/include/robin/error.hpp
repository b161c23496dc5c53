#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace robin {

// Stable error codes. The numeric values are part of the C API (robin.h)
// and must not be reordered.
enum class ErrorCode : int {
    ok = 0,
    invalid_argument = 1,
    address_in_use = 2,
    ca_unavailable = 3,
    corrupt_ca_files = 4,
    directory_unwritable = 5,
    invalid_host_name = 6,
    malformed_request = 7,
    malformed_response = 8,
    timeout = 9,
    network_error = 10,
    upstream_tls_failure = 11,
    client_rejects_cert = 12,
    invalid_glob = 13,
    not_pending = 14,
    invalid_edited_message = 15,
    invalid_encoding = 16,
    bad_key_length = 17,
    authentication_failed = 18,
    wordlist_unreadable = 19,
    length_mismatch = 20,
    crib_too_long = 21,
    no_markers = 22,
    duplicate_marker_name = 23,
    unbalanced_braces = 24,
    source_length_mismatch = 25,
    duplicate_key = 26,
    malformed_entry = 27,
    missing_wiki_entry = 28,
    base_unreachable = 29,
    origin_not_allowed = 30,
    unknown_type = 31,
    schema_violation = 32,
    not_found = 33,
    io_error = 34,
    internal = 35,
};

std::string_view to_string(ErrorCode code) noexcept;
std::optional<ErrorCode> parse_error_code(std::string_view name) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace robin
