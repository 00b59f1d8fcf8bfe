#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "captok/clock.hpp"
#include "captok/errors.hpp"
#include "captok/keys.hpp"
#include "captok/policy.hpp"
#include "captok/refresh_store.hpp"
#include "captok/rng.hpp"
#include "captok/token.hpp"

namespace captok {

struct IssuerConfig {
    std::string issuer_url = "https://issuer.local";
    std::string alg = "ES256";
    std::int64_t default_access_lifetime = 600;      // seconds
    std::int64_t default_refresh_lifetime = 2592000; // 30 days
    std::int64_t key_overlap_window = 86400;         // old keys stay served this long
    std::size_t handle_bytes = 32;
    std::size_t jti_bytes = 16;
};

struct GrantResult {
    std::string refresh_token;
    std::string scope;
    std::int64_t expires_in = 0;
};

struct MintResult {
    std::string access_token;
    std::string token_type = "bearer";
    std::string scope;
    std::int64_t expires_in = 0;
};

// The token server: authenticates users against the directory, evaluates
// policy, tracks refresh grants and signs short-lived access tokens.
class Issuer {
public:
    Issuer(IssuerConfig config, Policy policy, UserDirectory users,
           std::shared_ptr<RefreshStore> store, ClockPtr clock, RngPtr rng)
        : m_config(std::move(config)),
          m_policy(std::move(policy)),
          m_users(std::move(users)),
          m_store(std::move(store)),
          m_clock(std::move(clock)),
          m_rng(std::move(rng)) {
        auto key = generate_signing_key(m_config.alg);
        if (!key) throw std::runtime_error("issuer key generation: " + key.error().message());
        m_keys.push_back(KeyEpoch{std::move(key).value(), m_clock->now(), -1});
    }

    const IssuerConfig &config() const { return m_config; }

    // --- password grant -------------------------------------------------

    Result<GrantResult> grant_refresh(std::string_view username, std::string_view secret,
                                      std::string_view requested_scope,
                                      std::string_view audience) {
        auto groups = m_users.authenticate(username, secret);
        if (!groups) return groups.error();
        auto requested = parse_scope(requested_scope);
        if (!requested) return requested.error();
        auto decision = m_policy.evaluate(username, groups.value(), requested.value(), audience);
        if (!decision) return decision.error();

        std::int64_t now = m_clock->now();
        RefreshRecord rec;
        rec.handle = m_rng->token(m_config.handle_bytes);
        rec.sub = std::string(username);
        rec.groups = groups.value();
        rec.scopes = decision.value().granted;
        rec.audiences = {std::string(audience)};
        rec.issued_at = now;
        rec.max_access_lifetime = decision.value().max_access_lifetime;
        std::int64_t refresh_life =
            std::min(decision.value().max_refresh_lifetime, m_config.default_refresh_lifetime);
        rec.expires_at = now + refresh_life;
        auto stored = m_store->put(rec);
        if (!stored) return stored.error();
        return GrantResult{rec.handle, print_scope(rec.scopes), refresh_life};
    }

    // --- refresh grant ----------------------------------------------------

    Result<MintResult> mint_access(std::string_view handle,
                                   std::optional<std::string> requested_scope = std::nullopt,
                                   std::optional<std::string> audience = std::nullopt,
                                   std::optional<std::string> origin = std::nullopt) {
        auto rec = m_store->get(std::string(handle));
        if (!rec) return Error{Err::unknown_handle, ""};
        if (rec->revoked) return Error{Err::revoked, ""};
        std::int64_t now = m_clock->now();
        if (now >= rec->expires_at) return Error{Err::refresh_expired, ""};

        std::vector<Permission> requested;
        if (requested_scope) {
            auto parsed = parse_scope(*requested_scope);
            if (!parsed) return parsed.error();
            requested = std::move(parsed).value();
        }
        auto scopes = attenuate(rec->scopes, requested);
        if (!scopes) return scopes.error();

        std::string aud;
        if (audience && !audience->empty()) {
            if (std::find(rec->audiences.begin(), rec->audiences.end(), *audience) ==
                rec->audiences.end())
                return Error{Err::audience_not_permitted, *audience};
            aud = *audience;
        } else if (rec->audiences.size() == 1) {
            aud = rec->audiences.front();
        } else {
            return Error{Err::audience_not_permitted, "audience required for this grant"};
        }

        TokenClaims claims;
        claims.iss = m_config.issuer_url;
        claims.sub = rec->sub;
        claims.aud = aud;
        claims.iat = now;
        claims.nbf = now;
        std::int64_t lifetime =
            std::min(rec->max_access_lifetime, m_config.default_access_lifetime);
        claims.exp = now + lifetime;
        claims.jti = m_rng->token(m_config.jti_bytes);
        claims.scope = std::move(scopes).value();
        if (origin && !origin->empty()) claims.origin = *origin;

        std::lock_guard lock(m_key_mutex);
        const SigningKey &current = current_key_locked();
        auto served = served_keys_locked(now);
        auto token = encode_token(claims, current, &served);
        if (!token) return token.error();
        return MintResult{std::move(token).value(), "bearer", print_scope(claims.scope),
                          lifetime};
    }

    // --- introspection (RFC 7662 shape) -----------------------------------

    // Never errors for bad tokens: {active:false} is the failure mode.
    json introspect(std::string_view token) {
        VerifyOptions opts;
        opts.expected_iss = m_config.issuer_url;
        opts.expected_aud.clear(); // issuer is not the audience
        opts.skew = 0;
        auto v = verify_token(token, served_keys(), opts, m_clock->now());
        if (!v) return json{{"active", false}};
        const TokenClaims &c = v.value().claims;
        return json{{"active", true}, {"sub", c.sub},           {"scope", c.scope_string()},
                    {"exp", c.exp},   {"aud", c.aud},           {"iss", c.iss},
                    {"iat", c.iat},   {"token_type", "bearer"}, {"jti", c.jti}};
    }

    // --- revocation --------------------------------------------------------

    // Idempotent; unknown handles are acknowledged silently.
    void revoke(std::string_view handle) { m_store->mark_revoked(std::string(handle)); }

    // --- key management -----------------------------------------------------

    std::string rotate_keys() {
        std::lock_guard lock(m_key_mutex);
        std::int64_t now = m_clock->now();
        for (auto &epoch : m_keys) {
            if (epoch.retired_at < 0) epoch.retired_at = now;
        }
        auto key = generate_signing_key(m_config.alg);
        if (!key) throw std::runtime_error("key rotation: " + key.error().message());
        std::string kid = key.value().record.kid;
        m_keys.push_back(KeyEpoch{std::move(key).value(), now, -1});
        return kid;
    }

    KeySet served_keys() const {
        std::lock_guard lock(m_key_mutex);
        return served_keys_locked(m_clock->now());
    }

    std::string jwks_json() const { return served_keys().to_json().dump(); }

    std::string current_kid() const {
        std::lock_guard lock(m_key_mutex);
        return current_key_locked().record.kid;
    }

    json discovery() const {
        return json{{"issuer", m_config.issuer_url},
                    {"jwks_uri", m_config.issuer_url + "/jwks"},
                    {"token_endpoint", m_config.issuer_url + "/token"},
                    {"introspection_endpoint", m_config.issuer_url + "/introspect"}};
    }

    const Policy &policy() const { return m_policy; }
    RefreshStore &store() { return *m_store; }

private:
    struct KeyEpoch {
        SigningKey key;
        std::int64_t created_at;
        std::int64_t retired_at; // -1 while current
    };

    const SigningKey &current_key_locked() const {
        for (const auto &epoch : m_keys) {
            if (epoch.retired_at < 0) return epoch.key;
        }
        throw std::logic_error("no current signing key");
    }

    KeySet served_keys_locked(std::int64_t now) const {
        KeySet set;
        for (const auto &epoch : m_keys) {
            if (epoch.retired_at < 0 || now < epoch.retired_at + m_config.key_overlap_window)
                set.add(epoch.key.record);
        }
        return set;
    }

    IssuerConfig m_config;
    Policy m_policy;
    UserDirectory m_users;
    std::shared_ptr<RefreshStore> m_store;
    ClockPtr m_clock;
    RngPtr m_rng;
    mutable std::mutex m_key_mutex;
    std::vector<KeyEpoch> m_keys;
};

} // namespace captok
