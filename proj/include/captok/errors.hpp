#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <variant>

namespace captok {

// One taxonomy across the whole stack so services can log and callers can
// branch on the same codes the wire protocols carry.
enum class Err {
    none = 0,
    // token parsing / verification
    malformed,
    signature_invalid,
    unknown_kid,
    issuer_mismatch,
    audience_mismatch,
    expired,
    not_yet_valid,
    version_unsupported,
    unsupported_algorithm,
    invalid_claims,
    missing_token,
    token_inactive,
    // paths and scopes
    relative_path,
    traversal_rejected,
    invalid_path,
    unknown_op,
    invalid_scope,
    // authorization
    escalation,
    forbidden,
    origin_mismatch,
    // issuer
    no_matching_rule,
    audience_not_permitted,
    authentication_failed,
    unknown_handle,
    revoked,
    refresh_expired,
    // token manager
    vault_locked,
    vault_corrupt,
    no_dominating_grant,
    phase_violation,
    issuer_unreachable,
    // plumbing
    not_found,
    already_exists,
    io_error,
    config_error,
    protocol_error,
};

inline const char *to_string(Err e) {
    switch (e) {
        case Err::none: return "none";
        case Err::malformed: return "malformed";
        case Err::signature_invalid: return "signature-invalid";
        case Err::unknown_kid: return "unknown-kid";
        case Err::issuer_mismatch: return "issuer-mismatch";
        case Err::audience_mismatch: return "audience-mismatch";
        case Err::expired: return "expired";
        case Err::not_yet_valid: return "not-yet-valid";
        case Err::version_unsupported: return "version-unsupported";
        case Err::unsupported_algorithm: return "unsupported-algorithm";
        case Err::invalid_claims: return "invalid-claims";
        case Err::missing_token: return "missing-token";
        case Err::token_inactive: return "token-inactive";
        case Err::relative_path: return "relative-path";
        case Err::traversal_rejected: return "traversal-rejected";
        case Err::invalid_path: return "invalid-path";
        case Err::unknown_op: return "unknown-op";
        case Err::invalid_scope: return "invalid-scope";
        case Err::escalation: return "escalation";
        case Err::forbidden: return "forbidden";
        case Err::origin_mismatch: return "origin-mismatch";
        case Err::no_matching_rule: return "no-matching-rule";
        case Err::audience_not_permitted: return "audience-not-permitted";
        case Err::authentication_failed: return "authentication-failed";
        case Err::unknown_handle: return "unknown-handle";
        case Err::revoked: return "revoked";
        case Err::refresh_expired: return "refresh-expired";
        case Err::vault_locked: return "vault-locked";
        case Err::vault_corrupt: return "vault-corrupt";
        case Err::no_dominating_grant: return "no-dominating-grant";
        case Err::phase_violation: return "phase-violation";
        case Err::issuer_unreachable: return "issuer-unreachable";
        case Err::not_found: return "not-found";
        case Err::already_exists: return "already-exists";
        case Err::io_error: return "io-error";
        case Err::config_error: return "config-error";
        case Err::protocol_error: return "protocol-error";
    }
    return "unknown";
}

inline Err err_from_string(std::string_view s) {
    for (int i = 0; i <= static_cast<int>(Err::protocol_error); ++i) {
        auto e = static_cast<Err>(i);
        if (s == to_string(e)) return e;
    }
    return Err::protocol_error;
}

struct Error {
    Err code = Err::none;
    std::string detail;

    std::string message() const {
        std::string m = to_string(code);
        if (!detail.empty()) {
            m += ": ";
            m += detail;
        }
        return m;
    }
};

// Minimal expected-style result; value or Error.
template <typename T>
class Result {
public:
    Result(T value) : m_state(std::move(value)) {}
    Result(Error err) : m_state(std::move(err)) {}
    Result(Err code, std::string detail = {}) : m_state(Error{code, std::move(detail)}) {}

    bool ok() const { return std::holds_alternative<T>(m_state); }
    explicit operator bool() const { return ok(); }

    T &value() & { return std::get<T>(m_state); }
    const T &value() const & { return std::get<T>(m_state); }
    T &&value() && { return std::get<T>(std::move(m_state)); }

    const Error &error() const { return std::get<Error>(m_state); }
    Err code() const { return ok() ? Err::none : error().code; }

private:
    std::variant<T, Error> m_state;
};

template <>
class Result<void> {
public:
    Result() = default;
    Result(Error err) : m_error(std::move(err)) {}
    Result(Err code, std::string detail = {}) : m_error(Error{code, std::move(detail)}) {}

    bool ok() const { return m_error.code == Err::none; }
    explicit operator bool() const { return ok(); }
    const Error &error() const { return m_error; }
    Err code() const { return m_error.code; }

private:
    Error m_error;
};

} // namespace captok
