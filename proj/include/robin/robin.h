/* C interface to the Robin core (librobin). All strings are UTF-8 and
 * NUL-terminated; JSON arguments use the shapes in docs/protocol.md.
 * Strings returned through char** are owned by the caller and released
 * with robin_free. */
#ifndef ROBIN_ROBIN_H
#define ROBIN_ROBIN_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define ROBIN_API __attribute__((visibility("default")))
#else
#define ROBIN_API
#endif

/* Status codes. The numeric values are stable. */
typedef enum robin_status {
    ROBIN_OK = 0,
    ROBIN_INVALID_ARGUMENT = 1,
    ROBIN_ADDRESS_IN_USE = 2,
    ROBIN_CA_UNAVAILABLE = 3,
    ROBIN_CORRUPT_CA_FILES = 4,
    ROBIN_DIRECTORY_UNWRITABLE = 5,
    ROBIN_INVALID_HOST_NAME = 6,
    ROBIN_MALFORMED_REQUEST = 7,
    ROBIN_MALFORMED_RESPONSE = 8,
    ROBIN_TIMEOUT = 9,
    ROBIN_NETWORK_ERROR = 10,
    ROBIN_UPSTREAM_TLS_FAILURE = 11,
    ROBIN_CLIENT_REJECTS_CERT = 12,
    ROBIN_INVALID_GLOB = 13,
    ROBIN_NOT_PENDING = 14,
    ROBIN_INVALID_EDITED_MESSAGE = 15,
    ROBIN_INVALID_ENCODING = 16,
    ROBIN_BAD_KEY_LENGTH = 17,
    ROBIN_AUTHENTICATION_FAILED = 18,
    ROBIN_WORDLIST_UNREADABLE = 19,
    ROBIN_LENGTH_MISMATCH = 20,
    ROBIN_CRIB_TOO_LONG = 21,
    ROBIN_NO_MARKERS = 22,
    ROBIN_DUPLICATE_MARKER_NAME = 23,
    ROBIN_UNBALANCED_BRACES = 24,
    ROBIN_SOURCE_LENGTH_MISMATCH = 25,
    ROBIN_DUPLICATE_KEY = 26,
    ROBIN_MALFORMED_ENTRY = 27,
    ROBIN_MISSING_WIKI_ENTRY = 28,
    ROBIN_BASE_UNREACHABLE = 29,
    ROBIN_ORIGIN_NOT_ALLOWED = 30,
    ROBIN_UNKNOWN_TYPE = 31,
    ROBIN_SCHEMA_VIOLATION = 32,
    ROBIN_NOT_FOUND = 33,
    ROBIN_IO_ERROR = 34,
    ROBIN_INTERNAL = 35
} robin_status;

typedef struct robin_service robin_service;
typedef struct robin_api robin_api;

ROBIN_API const char* robin_version(void);
/* Symbolic name of a status, e.g. "SchemaViolation". */
ROBIN_API const char* robin_status_name(robin_status status);
/* Message of the last failed call on this thread ("" when none). */
ROBIN_API const char* robin_last_error(void);
ROBIN_API void robin_free(char* s);

/* options_json (may be NULL):
 *   {"ca_dir", "allow_origins": [..], "session_out", "wiki_dir",
 *    "intercept_default", "pause_timeout_ms", "max_captured_body",
 *    "passive_on_traffic", "upstream_ca_file"} */
ROBIN_API robin_status robin_service_create(const char* options_json, robin_service** out);
/* Stops the proxy, releases paused exchanges, cancels jobs and frees. */
ROBIN_API void robin_service_destroy(robin_service* service);
ROBIN_API void robin_service_shutdown(robin_service* service);

/* Runs one command. On success *result_json holds the reply payload; on
 * failure it holds the error payload {code, message, ...}. */
ROBIN_API robin_status robin_call(robin_service* service, const char* type, const char* payload_json,
                                  char** result_json);
/* Full message in, full reply message out; never fails for a well-formed
 * pointer pair (errors become "error" replies). */
ROBIN_API robin_status robin_dispatch(robin_service* service, const char* message_json, char** reply_json);
/* coder.* and ping without a service. */
ROBIN_API robin_status robin_call_offline(const char* type, const char* payload_json, char** result_json);

/* config_json (may be NULL): {"listen": "127.0.0.1:8888",
 *   "upstream_connect_timeout", "upstream_response_timeout", "idle_timeout"
 *   (seconds), "upstream_ca_file"}. The bound address is written to *bound_out when non-NULL. */
ROBIN_API robin_status robin_proxy_start(robin_service* service, const char* config_json, char** bound_out);
ROBIN_API void robin_proxy_stop(robin_service* service);

/* options_json (may be NULL): {"listen": "127.0.0.1:8889", "expose": false,
 *   "token", "ui_dir"} */
ROBIN_API robin_status robin_api_start(robin_service* service, const char* options_json, robin_api** out);
/* Bound "host:port". Valid until robin_api_destroy. */
ROBIN_API const char* robin_api_address(const robin_api* api);
/* Bearer token, "" when the API is loopback-only. */
ROBIN_API const char* robin_api_token(const robin_api* api);
ROBIN_API void robin_api_destroy(robin_api* api);

/* Every published event as {"seq", "type", "payload"}. Callbacks run on the
 * publishing thread and must not call back into the service. */
typedef void (*robin_event_fn)(const char* event_json, void* user);
ROBIN_API robin_status robin_subscribe(robin_service* service, robin_event_fn fn, void* user, uint64_t* token);
ROBIN_API void robin_unsubscribe(robin_service* service, uint64_t token);

/* Summary {"id", "method", "host", "path", "status", "response_size",
 * "duration_ms", "state", ...} of every exchange reaching a terminal state. */
typedef void (*robin_exchange_fn)(const char* summary_json, void* user);
ROBIN_API robin_status robin_on_exchange_finished(robin_service* service, robin_exchange_fn fn, void* user);

#ifdef __cplusplus
}
#endif

#endif
