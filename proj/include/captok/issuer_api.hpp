#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include "captok/errors.hpp"
#include "captok/issuer.hpp"

namespace captok {

// Client-side view of the token server, shared by the in-process and HTTP
// transports so harness assertions hold for both.
class IssuerApi {
public:
    virtual ~IssuerApi() = default;

    virtual Result<GrantResult> password_grant(const std::string &username,
                                               const std::string &password,
                                               const std::string &scope,
                                               const std::string &audience) = 0;

    virtual Result<MintResult> refresh_grant(const std::string &refresh_token,
                                             const std::optional<std::string> &scope,
                                             const std::optional<std::string> &audience,
                                             const std::optional<std::string> &origin) = 0;

    virtual Result<json> introspect(const std::string &token) = 0;

    virtual Result<void> revoke(const std::string &token) = 0;

    virtual Result<std::string> jwks() = 0;

    virtual Result<json> discovery() = 0;
};

class InProcessIssuer final : public IssuerApi {
public:
    explicit InProcessIssuer(Issuer &issuer) : m_issuer(issuer) {}

    Result<GrantResult> password_grant(const std::string &username, const std::string &password,
                                       const std::string &scope,
                                       const std::string &audience) override {
        return m_issuer.grant_refresh(username, password, scope, audience);
    }

    Result<MintResult> refresh_grant(const std::string &refresh_token,
                                     const std::optional<std::string> &scope,
                                     const std::optional<std::string> &audience,
                                     const std::optional<std::string> &origin) override {
        return m_issuer.mint_access(refresh_token, scope, audience, origin);
    }

    Result<json> introspect(const std::string &token) override {
        return m_issuer.introspect(token);
    }

    Result<void> revoke(const std::string &token) override {
        m_issuer.revoke(token);
        return {};
    }

    Result<std::string> jwks() override { return m_issuer.jwks_json(); }

    Result<json> discovery() override { return m_issuer.discovery(); }

private:
    Issuer &m_issuer;
};

// Counts calls per endpoint; the decentralized-validation checks hang off
// these counters.
class CountingIssuerApi final : public IssuerApi {
public:
    explicit CountingIssuerApi(IssuerApi &inner) : m_inner(inner) {}

    Result<GrantResult> password_grant(const std::string &u, const std::string &p,
                                       const std::string &s, const std::string &a) override {
        ++m_password_grants;
        return m_inner.password_grant(u, p, s, a);
    }

    Result<MintResult> refresh_grant(const std::string &h, const std::optional<std::string> &s,
                                     const std::optional<std::string> &a,
                                     const std::optional<std::string> &o) override {
        ++m_refresh_grants;
        return m_inner.refresh_grant(h, s, a, o);
    }

    Result<json> introspect(const std::string &t) override {
        ++m_introspections;
        return m_inner.introspect(t);
    }

    Result<void> revoke(const std::string &t) override {
        ++m_revocations;
        return m_inner.revoke(t);
    }

    Result<std::string> jwks() override {
        ++m_key_fetches;
        return m_inner.jwks();
    }

    Result<json> discovery() override {
        ++m_key_fetches;
        return m_inner.discovery();
    }

    std::int64_t password_grants() const { return m_password_grants; }
    std::int64_t refresh_grants() const { return m_refresh_grants; }
    std::int64_t introspections() const { return m_introspections; }
    std::int64_t key_fetches() const { return m_key_fetches; }
    std::int64_t total() const {
        return m_password_grants + m_refresh_grants + m_introspections + m_revocations +
               m_key_fetches;
    }

private:
    IssuerApi &m_inner;
    std::atomic<std::int64_t> m_password_grants{0};
    std::atomic<std::int64_t> m_refresh_grants{0};
    std::atomic<std::int64_t> m_introspections{0};
    std::atomic<std::int64_t> m_revocations{0};
    std::atomic<std::int64_t> m_key_fetches{0};
};

// Fails every call while the clock sits inside an outage window; used by
// the harness fault plans and the hold/retry tests.
class OutageIssuerApi final : public IssuerApi {
public:
    OutageIssuerApi(IssuerApi &inner, ClockPtr clock) : m_inner(inner), m_clock(std::move(clock)) {}

    void add_outage(std::int64_t from, std::int64_t until) {
        m_windows.push_back({from, until});
    }

    bool down() const {
        std::int64_t now = m_clock->now();
        for (const auto &w : m_windows) {
            if (now >= w.first && now < w.second) return true;
        }
        return false;
    }

    Result<GrantResult> password_grant(const std::string &u, const std::string &p,
                                       const std::string &s, const std::string &a) override {
        if (down()) return unreachable();
        return m_inner.password_grant(u, p, s, a);
    }

    Result<MintResult> refresh_grant(const std::string &h, const std::optional<std::string> &s,
                                     const std::optional<std::string> &a,
                                     const std::optional<std::string> &o) override {
        if (down()) return unreachable();
        return m_inner.refresh_grant(h, s, a, o);
    }

    Result<json> introspect(const std::string &t) override {
        if (down()) return unreachable();
        return m_inner.introspect(t);
    }

    Result<void> revoke(const std::string &t) override {
        if (down()) return Error{Err::issuer_unreachable, "injected outage"};
        return m_inner.revoke(t);
    }

    Result<std::string> jwks() override {
        if (down()) return unreachable();
        return m_inner.jwks();
    }

    Result<json> discovery() override {
        if (down()) return unreachable();
        return m_inner.discovery();
    }

private:
    Error unreachable() const { return Error{Err::issuer_unreachable, "injected outage"}; }

    IssuerApi &m_inner;
    ClockPtr m_clock;
    std::vector<std::pair<std::int64_t, std::int64_t>> m_windows;
};

} // namespace captok
