#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "captok/authz.hpp"
#include "captok/clock.hpp"
#include "captok/errors.hpp"
#include "captok/issuer_api.hpp"
#include "captok/keys.hpp"
#include "captok/token.hpp"

namespace captok {

struct GatewayConfig {
    std::string listen = "127.0.0.1:0";
    std::string docroot;
    std::string issuer_url;
    std::string audience;
    std::int64_t key_refetch_interval = 3600;
    bool strict_audience = true;
    bool enforce_origin = false;
    std::string mount_prefix = "/";
    bool use_introspection = false;
    // Availability bias by default: a stale key cache is served with a
    // logged warning. Fail-closed flips that to refusing requests.
    bool fail_closed = false;
    std::int64_t skew = kDefaultSkew;
    std::string audit_log_path;
    std::string key_cache_path;
};

// One line per request, JSON-lines on disk. The raw token is kept so the
// decision can be replayed offline.
struct AuditRecord {
    std::int64_t ts = 0;
    std::string jti;
    std::string sub;
    std::string op;
    std::string path;
    std::string decision; // "allow" | "deny"
    std::string error_code;
    int status = 0;
    std::string token;
    std::string client_id;

    json to_json() const {
        return json{{"ts", ts},       {"jti", jti},
                    {"sub", sub},     {"op", op},
                    {"path", path},   {"decision", decision},
                    {"error", error_code}, {"status", status},
                    {"token", token}, {"client_id", client_id}};
    }

    static AuditRecord from_json(const json &j) {
        AuditRecord r;
        r.ts = j.value("ts", std::int64_t{0});
        r.jti = j.value("jti", "");
        r.sub = j.value("sub", "");
        r.op = j.value("op", "");
        r.path = j.value("path", "");
        r.decision = j.value("decision", "");
        r.error_code = j.value("error", "");
        r.status = j.value("status", 0);
        r.token = j.value("token", "");
        r.client_id = j.value("client_id", "");
        return r;
    }
};

class AuditLog {
public:
    explicit AuditLog(std::string path = {}) : m_path(std::move(path)) {}

    void append(const AuditRecord &rec) {
        std::lock_guard lock(m_mutex);
        m_records.push_back(rec);
        if (!m_path.empty()) {
            std::ofstream out(m_path, std::ios::app);
            out << rec.to_json().dump() << "\n";
        }
    }

    std::vector<AuditRecord> records() const {
        std::lock_guard lock(m_mutex);
        return m_records;
    }

    std::size_t size() const {
        std::lock_guard lock(m_mutex);
        return m_records.size();
    }

    static Result<std::vector<AuditRecord>> load(const std::string &path) {
        std::ifstream in(path);
        if (!in) return Error{Err::io_error, "cannot read " + path};
        std::vector<AuditRecord> records;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto j = json::parse(line, nullptr, false);
            if (j.is_discarded()) return Error{Err::malformed, "bad audit line"};
            records.push_back(AuditRecord::from_json(j));
        }
        return records;
    }

private:
    std::string m_path;
    mutable std::mutex m_mutex;
    std::vector<AuditRecord> m_records;
};

// Issuer public keys, cached in memory and on disk. Request handling only
// ever touches the snapshot; refetches happen through tick(), never on the
// request path.
class KeyCache {
public:
    KeyCache(IssuerApi &issuer, ClockPtr clock, std::string disk_path,
             std::int64_t refetch_interval)
        : m_issuer(issuer),
          m_clock(std::move(clock)),
          m_disk_path(std::move(disk_path)),
          m_interval(refetch_interval) {}

    // Initial fetch; falls back to the disk cache when the issuer is down.
    Result<void> start() {
        if (try_fetch().ok()) return {};
        if (!m_disk_path.empty()) {
            std::ifstream in(m_disk_path);
            if (in) {
                auto j = json::parse(in, nullptr, false);
                if (!j.is_discarded() && j.contains("keys_document")) {
                    auto set = KeySet::from_json(j["keys_document"]);
                    if (set.ok()) {
                        std::lock_guard lock(m_mutex);
                        m_snapshot = std::make_shared<KeySet>(std::move(set).value());
                        m_fetched_at = j.value("fetched_at", std::int64_t{0});
                        return {};
                    }
                }
            }
        }
        return Error{Err::issuer_unreachable, "no key cache and issuer fetch failed"};
    }

    std::shared_ptr<const KeySet> snapshot() const {
        std::lock_guard lock(m_mutex);
        return m_snapshot;
    }

    bool stale() const {
        std::lock_guard lock(m_mutex);
        return m_clock->now() - m_fetched_at >= m_interval;
    }

    // Background refresh driver; returns true when a refetch was attempted.
    bool tick() {
        if (!stale()) return false;
        auto fetched = try_fetch();
        if (!fetched) {
            ++m_stale_served;
            return true;
        }
        return true;
    }

    std::int64_t fetch_count() const { return m_fetch_count; }
    std::int64_t stale_serves() const { return m_stale_served; }

private:
    Result<void> try_fetch() {
        auto jwks = m_issuer.jwks();
        ++m_fetch_count;
        if (!jwks) return jwks.error();
        auto set = KeySet::parse(jwks.value());
        if (!set) return set.error();
        std::int64_t now = m_clock->now();
        {
            std::lock_guard lock(m_mutex);
            m_snapshot = std::make_shared<KeySet>(std::move(set).value());
            m_fetched_at = now;
        }
        if (!m_disk_path.empty()) {
            std::ofstream out(m_disk_path, std::ios::trunc);
            if (out) {
                out << json{{"fetched_at", now},
                            {"keys_document", json::parse(jwks.value())}}
                           .dump();
            }
        }
        return {};
    }

    IssuerApi &m_issuer;
    ClockPtr m_clock;
    std::string m_disk_path;
    std::int64_t m_interval;
    mutable std::mutex m_mutex;
    std::shared_ptr<const KeySet> m_snapshot;
    std::int64_t m_fetched_at = 0;
    std::atomic<std::int64_t> m_fetch_count{0};
    std::atomic<std::int64_t> m_stale_served{0};
};

struct GatewayResponse {
    int status = 0;
    std::string body;
    std::string content_type = "application/octet-stream";
    std::string error_code;
};

inline GatewayResponse gateway_error(int status, const Error &err) {
    GatewayResponse res;
    res.status = status;
    res.error_code = to_string(err.code);
    res.body = json{{"error", to_string(err.code)}, {"detail", err.detail}}.dump();
    res.content_type = "application/json";
    return res;
}

// The data server: bearer-authenticated reads and writes over a directory
// tree, validated offline against the cached issuer keys.
class GatewayCore {
public:
    static Result<std::unique_ptr<GatewayCore>> create(GatewayConfig config, IssuerApi &issuer,
                                                       ClockPtr clock) {
        namespace fs = std::filesystem;
        if (config.docroot.empty() || !fs::is_directory(config.docroot))
            return Error{Err::config_error, "document root must be an existing directory"};
        if (config.strict_audience && config.audience.empty())
            return Error{Err::config_error, "audience required in strict mode"};
        if (!is_canonical_path(config.mount_prefix))
            return Error{Err::config_error, "mount prefix must be canonical"};
        auto gw = std::unique_ptr<GatewayCore>(
            new GatewayCore(std::move(config), issuer, std::move(clock)));
        auto started = gw->m_keys.start();
        if (!started) return started.error();
        return gw;
    }

    const GatewayConfig &config() const { return m_config; }
    AuditLog &audit() { return m_audit; }
    KeyCache &keys() { return m_keys; }

    std::int64_t issuer_calls() const { return m_keys.fetch_count() + m_introspect_calls; }

    GatewayResponse handle(const std::string &method, const std::string &raw_path,
                           const std::optional<std::string> &bearer,
                           const std::string &client_id = {}, const std::string &body = {}) {
        std::int64_t now = m_clock->now();
        AuditRecord rec;
        rec.ts = now;
        rec.client_id = client_id;
        rec.token = bearer.value_or("");

        Op op{};
        if (method == "GET") {
            op = Op::read;
        } else if (method == "PUT") {
            op = Op::write;
        } else {
            rec.op = method;
            return finish(rec, gateway_error(405, {Err::protocol_error, "method not supported"}));
        }
        rec.op = to_string(op);

        auto path = normalize_path(raw_path);
        if (!path) {
            rec.path = raw_path;
            return finish(rec, gateway_error(400, path.error()));
        }
        rec.path = path.value();

        if (!bearer || bearer->empty())
            return finish(rec, gateway_error(401, {Err::missing_token, "bearer token required"}));

        if (m_config.fail_closed && m_keys.stale())
            return finish(rec, gateway_error(
                                   503, {Err::issuer_unreachable, "key cache stale, fail-closed"}));

        Result<VerifiedClaims> verified = m_config.use_introspection
                                              ? verify_by_introspection(*bearer)
                                              : verify_offline(*bearer, now);
        if (!verified) {
            int status = verified.code() == Err::issuer_unreachable ? 503 : 401;
            return finish(rec, gateway_error(status, verified.error()));
        }
        const TokenClaims &claims = verified.value().claims;
        rec.jti = claims.jti;
        rec.sub = claims.sub;

        if (m_config.enforce_origin && claims.origin && *claims.origin != client_id)
            return finish(rec, gateway_error(403, {Err::origin_mismatch,
                                                   "token bound to " + *claims.origin}));

        Acl acl = acl_from_scopes(claims.scope, m_config.mount_prefix);
        if (!permits(acl, op, path.value()))
            return finish(rec, gateway_error(403, {Err::forbidden, rec.op + " " + rec.path}));

        return finish(rec, op == Op::read ? do_read(path.value())
                                          : do_write(path.value(), body));
    }

private:
    GatewayCore(GatewayConfig config, IssuerApi &issuer, ClockPtr clock)
        : m_config(std::move(config)),
          m_issuer(issuer),
          m_clock(std::move(clock)),
          m_audit(m_config.audit_log_path),
          m_keys(issuer, m_clock, m_config.key_cache_path, m_config.key_refetch_interval) {}

    Result<VerifiedClaims> verify_offline(const std::string &token, std::int64_t now) {
        auto keys = m_keys.snapshot();
        if (!keys) return Error{Err::issuer_unreachable, "no key set available"};
        VerifyOptions opts;
        opts.expected_iss = m_config.issuer_url;
        opts.expected_aud = m_config.audience;
        opts.allow_any_audience = !m_config.strict_audience;
        opts.skew = m_config.skew;
        return verify_token(token, *keys, opts, now);
    }

    // Centralized alternative: one issuer round trip per request.
    Result<VerifiedClaims> verify_by_introspection(const std::string &token) {
        ++m_introspect_calls;
        auto report = m_issuer.introspect(token);
        if (!report) return Error{Err::issuer_unreachable, report.error().message()};
        if (!report.value().value("active", false))
            return Error{Err::token_inactive, "issuer reports inactive"};
        auto decoded = decode_unverified(token);
        if (!decoded) return decoded.error();
        const TokenClaims &c = decoded.value().claims;
        bool aud_ok = c.aud == m_config.audience ||
                      (!m_config.strict_audience && c.aud == kAnyAudience);
        if (!aud_ok) return Error{Err::audience_mismatch, c.aud};
        return VerifiedClaims{c, decoded.value().header.kid};
    }

    GatewayResponse do_read(const std::string &path) {
        namespace fs = std::filesystem;
        fs::path full = fs::path(m_config.docroot) / path.substr(1);
        std::error_code ec;
        if (!fs::is_regular_file(full, ec))
            return gateway_error(404, {Err::not_found, path});
        std::ifstream in(full, std::ios::binary);
        if (!in) return gateway_error(404, {Err::not_found, path});
        GatewayResponse res;
        res.status = 200;
        res.body.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return res;
    }

    GatewayResponse do_write(const std::string &path, const std::string &body) {
        namespace fs = std::filesystem;
        fs::path full = fs::path(m_config.docroot) / path.substr(1);
        std::error_code ec;
        bool existed = fs::exists(full, ec);
        fs::create_directories(full.parent_path(), ec);
        std::ofstream out(full, std::ios::binary | std::ios::trunc);
        if (!out) return gateway_error(500, {Err::io_error, path});
        out.write(body.data(), static_cast<std::streamsize>(body.size()));
        GatewayResponse res;
        res.status = existed ? 204 : 201;
        res.content_type = "application/json";
        res.body = "{}";
        return res;
    }

    GatewayResponse finish(AuditRecord &rec, GatewayResponse res) {
        rec.status = res.status;
        rec.error_code = res.error_code;
        rec.decision = res.status < 400 || res.status == 404 ? "allow" : "deny";
        m_audit.append(rec);
        return res;
    }

    GatewayConfig m_config;
    IssuerApi &m_issuer;
    ClockPtr m_clock;
    AuditLog m_audit;
    KeyCache m_keys;
    std::atomic<std::int64_t> m_introspect_calls{0};
};

// Re-runs every logged decision offline against the key set the gateway
// served with; returns the number of mismatches. 503 records are skipped:
// an availability refusal carries no authorization verdict.
inline int replay_audit(const std::vector<AuditRecord> &records, const KeySet &keys,
                        const GatewayConfig &config) {
    int mismatches = 0;
    for (const auto &rec : records) {
        if (rec.status == 503) continue;
        bool allow = false;
        do {
            if (rec.token.empty()) break;
            auto path = normalize_path(rec.path);
            if (!path) break;
            auto op = op_from_string(rec.op);
            if (!op) break;
            VerifyOptions opts;
            opts.expected_iss = config.issuer_url;
            opts.expected_aud = config.audience;
            opts.allow_any_audience = !config.strict_audience;
            // introspection answers with zero skew; mirror it on replay
            opts.skew = config.use_introspection ? 0 : config.skew;
            auto verified = verify_token(rec.token, keys, opts, rec.ts);
            if (!verified) break;
            if (config.enforce_origin && verified.value().claims.origin &&
                *verified.value().claims.origin != rec.client_id)
                break;
            Acl acl = acl_from_scopes(verified.value().claims.scope, config.mount_prefix);
            allow = permits(acl, op.value(), path.value());
        } while (false);
        if ((rec.decision == "allow") != allow) ++mismatches;
    }
    return mismatches;
}

} // namespace captok
