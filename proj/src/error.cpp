#include "robin/error.hpp"

namespace robin {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::ok: return "Ok";
    case ErrorCode::invalid_argument: return "InvalidArgument";
    case ErrorCode::address_in_use: return "AddressInUse";
    case ErrorCode::ca_unavailable: return "CaUnavailable";
    case ErrorCode::corrupt_ca_files: return "CorruptCaFiles";
    case ErrorCode::directory_unwritable: return "DirectoryUnwritable";
    case ErrorCode::invalid_host_name: return "InvalidHostName";
    case ErrorCode::malformed_request: return "MalformedRequest";
    case ErrorCode::malformed_response: return "MalformedResponse";
    case ErrorCode::timeout: return "Timeout";
    case ErrorCode::network_error: return "NetworkError";
    case ErrorCode::upstream_tls_failure: return "UpstreamTlsFailure";
    case ErrorCode::client_rejects_cert: return "ClientRejectsCert";
    case ErrorCode::invalid_glob: return "InvalidGlob";
    case ErrorCode::not_pending: return "NotPending";
    case ErrorCode::invalid_edited_message: return "InvalidEditedMessage";
    case ErrorCode::invalid_encoding: return "InvalidEncoding";
    case ErrorCode::bad_key_length: return "BadKeyLength";
    case ErrorCode::authentication_failed: return "AuthenticationFailed";
    case ErrorCode::wordlist_unreadable: return "WordlistUnreadable";
    case ErrorCode::length_mismatch: return "LengthMismatch";
    case ErrorCode::crib_too_long: return "CribTooLong";
    case ErrorCode::no_markers: return "NoMarkers";
    case ErrorCode::duplicate_marker_name: return "DuplicateMarkerName";
    case ErrorCode::unbalanced_braces: return "UnbalancedBraces";
    case ErrorCode::source_length_mismatch: return "SourceLengthMismatch";
    case ErrorCode::duplicate_key: return "DuplicateKey";
    case ErrorCode::malformed_entry: return "MalformedEntry";
    case ErrorCode::missing_wiki_entry: return "MissingWikiEntry";
    case ErrorCode::base_unreachable: return "BaseUnreachable";
    case ErrorCode::origin_not_allowed: return "OriginNotAllowed";
    case ErrorCode::unknown_type: return "UnknownType";
    case ErrorCode::schema_violation: return "SchemaViolation";
    case ErrorCode::not_found: return "NotFound";
    case ErrorCode::io_error: return "IoError";
    case ErrorCode::internal: return "Internal";
    }
    return "Unknown";
}

std::optional<ErrorCode> parse_error_code(std::string_view name) noexcept {
    for (int i = 0; i <= static_cast<int>(ErrorCode::internal); ++i)
        if (to_string(static_cast<ErrorCode>(i)) == name) return static_cast<ErrorCode>(i);
    return std::nullopt;
}

} // namespace robin
