#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "captok/authz.hpp"
#include "captok/base64url.hpp"
#include "captok/crypto.hpp"
#include "captok/errors.hpp"
#include "captok/keys.hpp"
#include "captok/scope.hpp"

namespace captok {

inline constexpr const char *kTokenVersion = "captok/1";
inline constexpr const char *kTokenType = "captok";
inline constexpr const char *kAnyAudience = "ANY";
inline constexpr std::int64_t kDefaultSkew = 60;

// The capability payload. `extra` holds claims this implementation does not
// know about; they round-trip untouched.
struct TokenClaims {
    std::string iss;
    std::string sub;
    std::string aud;
    std::int64_t exp = 0;
    std::int64_t nbf = 0;
    std::int64_t iat = 0;
    std::string jti;
    std::vector<Permission> scope;
    std::string ver = kTokenVersion;
    std::optional<std::string> origin;
    json extra = json::object();

    bool operator==(const TokenClaims &) const = default;

    std::string scope_string() const { return print_scope(scope); }

    Result<void> validate() const {
        if (iss.empty() || sub.empty() || aud.empty())
            return Error{Err::invalid_claims, "iss, sub and aud are required"};
        if (jti.empty()) return Error{Err::invalid_claims, "jti is required"};
        if (!(nbf <= iat && iat <= exp))
            return Error{Err::invalid_claims, "need nbf <= iat <= exp"};
        if (scope.empty())
            return Error{Err::invalid_claims, "access tokens need a non-empty scope"};
        for (const auto &[k, v] : extra.items()) {
            (void)v;
            for (const char *reg : {"iss", "sub", "aud", "exp", "nbf", "iat", "jti", "scope",
                                    "ver", "origin"}) {
                if (k == reg)
                    return Error{Err::invalid_claims, "extra claim shadows " + k};
            }
        }
        return {};
    }

    json to_json() const {
        json j = extra;
        j["iss"] = iss;
        j["sub"] = sub;
        j["aud"] = aud;
        j["exp"] = exp;
        j["nbf"] = nbf;
        j["iat"] = iat;
        j["jti"] = jti;
        j["scope"] = scope_string();
        j["ver"] = ver;
        if (origin) j["origin"] = *origin;
        return j;
    }

    static Result<TokenClaims> from_json(const json &j) {
        if (!j.is_object()) return Error{Err::malformed, "payload is not a JSON object"};
        TokenClaims c;
        c.extra = json::object();
        for (const auto &[k, v] : j.items()) {
            if (k == "iss" || k == "sub" || k == "aud" || k == "jti" || k == "ver") {
                if (!v.is_string()) return Error{Err::malformed, k + " must be a string"};
            } else if (k == "exp" || k == "nbf" || k == "iat") {
                if (!v.is_number_integer())
                    return Error{Err::malformed, k + " must be an integer"};
            }
            if (k == "iss") c.iss = v.get<std::string>();
            else if (k == "sub") c.sub = v.get<std::string>();
            else if (k == "aud") c.aud = v.get<std::string>();
            else if (k == "exp") c.exp = v.get<std::int64_t>();
            else if (k == "nbf") c.nbf = v.get<std::int64_t>();
            else if (k == "iat") c.iat = v.get<std::int64_t>();
            else if (k == "jti") c.jti = v.get<std::string>();
            else if (k == "ver") c.ver = v.get<std::string>();
            else if (k == "origin") {
                if (!v.is_string()) return Error{Err::malformed, "origin must be a string"};
                c.origin = v.get<std::string>();
            } else if (k == "scope") {
                if (!v.is_string()) return Error{Err::malformed, "scope must be a string"};
                auto perms = parse_scope(v.get<std::string>());
                if (!perms) return Error{Err::malformed, perms.error().message()};
                c.scope = std::move(perms).value();
            } else {
                c.extra[k] = v;
            }
        }
        return c;
    }
};

struct TokenHeader {
    std::string alg;
    std::string kid;
    std::string typ;
};

struct DecodedToken {
    TokenHeader header;
    TokenClaims claims;
    // Raw pieces kept so verification can cover the exact signed bytes.
    std::string signing_input;
    crypto::Bytes signature;
};

// Claims returned by verify_token; holders may authorize from these.
struct VerifiedClaims {
    TokenClaims claims;
    std::string kid;
};

inline Result<std::string> encode_token(const TokenClaims &claims, const SigningKey &key,
                                        const KeySet *issuer_keys = nullptr) {
    auto valid = claims.validate();
    if (!valid) return valid.error();
    if (issuer_keys && !issuer_keys->find(key.record.kid))
        return Error{Err::unknown_kid, key.record.kid};

    json header{{"alg", crypto::to_string(key.record.alg)},
                {"kid", key.record.kid},
                {"typ", kTokenType}};
    std::string signing_input = b64url::encode(header.dump()) + "." +
                                b64url::encode(claims.to_json().dump());
    auto sig = crypto::sign(key.record.alg, key.priv, signing_input);
    if (!sig) return sig.error();
    return signing_input + "." + b64url::encode(sig.value());
}

// Parsing without any trust judgment. Callers must never authorize from
// this output alone.
inline Result<DecodedToken> decode_unverified(std::string_view token) {
    auto dot1 = token.find('.');
    auto dot2 = dot1 == std::string_view::npos ? std::string_view::npos
                                               : token.find('.', dot1 + 1);
    if (dot1 == std::string_view::npos || dot2 == std::string_view::npos ||
        token.find('.', dot2 + 1) != std::string_view::npos)
        return Error{Err::malformed, "token must have exactly three segments"};

    auto header_raw = b64url::decode_string(token.substr(0, dot1));
    auto payload_raw = b64url::decode_string(token.substr(dot1 + 1, dot2 - dot1 - 1));
    auto sig_raw = b64url::decode(token.substr(dot2 + 1));
    if (!header_raw || !payload_raw || !sig_raw)
        return Error{Err::malformed, "bad base64url segment"};

    auto header_json = json::parse(*header_raw, nullptr, false);
    if (header_json.is_discarded() || !header_json.is_object())
        return Error{Err::malformed, "header is not JSON"};
    auto payload_json = json::parse(*payload_raw, nullptr, false);
    if (payload_json.is_discarded())
        return Error{Err::malformed, "payload is not JSON"};

    DecodedToken out;
    out.header.alg = header_json.value("alg", "");
    out.header.kid = header_json.value("kid", "");
    out.header.typ = header_json.value("typ", "");
    auto claims = TokenClaims::from_json(payload_json);
    if (!claims) return claims.error();
    out.claims = std::move(claims).value();
    out.signing_input = std::string(token.substr(0, dot2));
    out.signature = std::move(*sig_raw);
    return out;
}

struct VerifyOptions {
    std::string expected_iss;
    // Empty means "do not check the audience" (introspection use only).
    std::string expected_aud;
    std::int64_t skew = kDefaultSkew;
    // Whether a token addressed to the ANY wildcard satisfies the check.
    bool allow_any_audience = true;
};

// Offline verification: signature under the published key set, then issuer,
// audience, validity window and format version. No issuer round trip.
inline Result<VerifiedClaims> verify_token(std::string_view token, const KeySet &keys,
                                           const VerifyOptions &opts, std::int64_t now) {
    auto decoded = decode_unverified(token);
    if (!decoded) return decoded.error();
    const auto &d = decoded.value();

    auto alg = crypto::alg_from_string(d.header.alg);
    if (!alg) return Error{Err::malformed, "header alg: " + alg.error().message()};
    const KeyRecord *rec = keys.find(d.header.kid);
    if (!rec) return Error{Err::unknown_kid, d.header.kid};
    if (rec->alg != alg.value())
        return Error{Err::signature_invalid, "alg does not match key"};
    if (!crypto::verify(rec->alg, rec->key, d.signing_input, d.signature))
        return Error{Err::signature_invalid, "signature check failed"};

    const TokenClaims &c = d.claims;
    if (c.ver != kTokenVersion)
        return Error{Err::version_unsupported, c.ver};
    if (!opts.expected_iss.empty() && c.iss != opts.expected_iss)
        return Error{Err::issuer_mismatch, c.iss};
    if (!opts.expected_aud.empty()) {
        bool aud_ok = c.aud == opts.expected_aud ||
                      (opts.allow_any_audience && c.aud == kAnyAudience);
        if (!aud_ok) return Error{Err::audience_mismatch, c.aud};
    }
    if (now + opts.skew < c.nbf) return Error{Err::not_yet_valid, ""};
    if (now >= c.exp + opts.skew) return Error{Err::expired, ""};
    return VerifiedClaims{c, d.header.kid};
}

inline Result<VerifiedClaims> verify_token(std::string_view token, const KeySet &keys,
                                           std::string_view expected_iss,
                                           std::string_view expected_aud, std::int64_t now,
                                           std::int64_t skew = kDefaultSkew) {
    VerifyOptions opts;
    opts.expected_iss = std::string(expected_iss);
    opts.expected_aud = std::string(expected_aud);
    opts.skew = skew;
    return verify_token(token, keys, opts, now);
}

inline Acl acl_from_token(const VerifiedClaims &verified, std::string_view mount_prefix) {
    return acl_from_scopes(verified.claims.scope, mount_prefix);
}

} // namespace captok
