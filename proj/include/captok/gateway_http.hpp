#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <httplib.h>

#include "captok/gateway.hpp"

namespace captok {

// Client-side view of a data gateway; in-process and HTTP transports share
// it so the harness can swap them without changing any assertion.
class GatewayApi {
public:
    virtual ~GatewayApi() = default;
    virtual GatewayResponse get(const std::string &path, const std::optional<std::string> &bearer,
                                const std::string &client_id = {}) = 0;
    virtual GatewayResponse put(const std::string &path, const std::string &body,
                                const std::optional<std::string> &bearer,
                                const std::string &client_id = {}) = 0;
};

class InProcessGateway final : public GatewayApi {
public:
    explicit InProcessGateway(GatewayCore &core) : m_core(core) {}

    GatewayResponse get(const std::string &path, const std::optional<std::string> &bearer,
                        const std::string &client_id = {}) override {
        return m_core.handle("GET", path, bearer, client_id);
    }

    GatewayResponse put(const std::string &path, const std::string &body,
                        const std::optional<std::string> &bearer,
                        const std::string &client_id = {}) override {
        return m_core.handle("PUT", path, bearer, client_id, body);
    }

private:
    GatewayCore &m_core;
};

inline std::optional<std::string> bearer_from_header(const httplib::Request &req) {
    if (!req.has_header("Authorization")) return std::nullopt;
    std::string header = req.get_header_value("Authorization");
    const std::string prefix = "Bearer ";
    if (header.rfind(prefix, 0) != 0) return std::optional<std::string>{""};
    return header.substr(prefix.size());
}

// The transport-level client identifier used for origin enforcement is a
// header the harness controls; real network binding is out of scope.
inline constexpr const char *kClientIdHeader = "X-Client-Id";

inline void mount_gateway_routes(httplib::Server &server, GatewayCore &core) {
    auto to_http = [](const GatewayResponse &out, httplib::Response &res) {
        res.status = out.status;
        res.set_content(out.body, out.content_type);
        if (!out.error_code.empty()) res.set_header("X-Error-Code", out.error_code);
    };
    server.Get(".*", [&core, to_http](const httplib::Request &req, httplib::Response &res) {
        to_http(core.handle("GET", req.path, bearer_from_header(req),
                            req.get_header_value(kClientIdHeader)),
                res);
    });
    server.Put(".*", [&core, to_http](const httplib::Request &req, httplib::Response &res) {
        to_http(core.handle("PUT", req.path, bearer_from_header(req),
                            req.get_header_value(kClientIdHeader), req.body),
                res);
    });
}

class GatewayHttpServer {
public:
    explicit GatewayHttpServer(GatewayCore &core) { mount_gateway_routes(m_server, core); }

    ~GatewayHttpServer() { stop(); }

    int start(const std::string &host = "127.0.0.1", int port = 0) {
        if (port == 0) {
            m_port = m_server.bind_to_any_port(host);
        } else {
            if (!m_server.bind_to_port(host, port)) return -1;
            m_port = port;
        }
        m_thread = std::thread([this] { m_server.listen_after_bind(); });
        m_server.wait_until_ready();
        return m_port;
    }

    void stop() {
        if (m_thread.joinable()) {
            m_server.stop();
            m_thread.join();
        }
    }

    int port() const { return m_port; }

private:
    httplib::Server m_server;
    std::thread m_thread;
    int m_port = -1;
};

class HttpGatewayClient final : public GatewayApi {
public:
    explicit HttpGatewayClient(std::string base_url) : m_base(std::move(base_url)) {}

    GatewayResponse get(const std::string &path, const std::optional<std::string> &bearer,
                        const std::string &client_id = {}) override {
        httplib::Client cli(m_base);
        auto res = cli.Get(path, headers(bearer, client_id));
        return convert(res);
    }

    GatewayResponse put(const std::string &path, const std::string &body,
                        const std::optional<std::string> &bearer,
                        const std::string &client_id = {}) override {
        httplib::Client cli(m_base);
        auto res = cli.Put(path, headers(bearer, client_id), body, "application/octet-stream");
        return convert(res);
    }

private:
    static httplib::Headers headers(const std::optional<std::string> &bearer,
                                    const std::string &client_id) {
        httplib::Headers h;
        if (bearer) h.emplace("Authorization", "Bearer " + *bearer);
        if (!client_id.empty()) h.emplace(kClientIdHeader, client_id);
        return h;
    }

    static GatewayResponse convert(const httplib::Result &res) {
        GatewayResponse out;
        if (!res) {
            out.status = 503;
            out.error_code = to_string(Err::issuer_unreachable);
            out.body = "{\"error\":\"gateway-unreachable\"}";
            return out;
        }
        out.status = res->status;
        out.body = res->body;
        if (res->has_header("X-Error-Code")) out.error_code = res->get_header_value("X-Error-Code");
        return out;
    }

    std::string m_base;
};

// Execute-side read cache: bytes fetched through the gateway are kept
// locally, but every hit re-verifies the token before the cache serves it.
// A denied or expired token never reads the cache.
class LocalCacheReader {
public:
    LocalCacheReader(KeySet keys, std::string issuer_url, std::string audience,
                     std::string mount_prefix = "/", std::int64_t skew = kDefaultSkew,
                     bool strict_audience = true)
        : m_keys(std::move(keys)),
          m_issuer_url(std::move(issuer_url)),
          m_audience(std::move(audience)),
          m_mount(std::move(mount_prefix)),
          m_skew(skew),
          m_strict(strict_audience) {}

    Result<std::string> read(GatewayApi &gateway, const std::string &token,
                             const std::string &raw_path, std::int64_t now,
                             const std::string &client_id = {}) {
        auto path = normalize_path(raw_path);
        if (!path) return path.error();

        auto authorized = authorize(token, path.value(), now);
        if (!authorized) return authorized.error();

        {
            std::lock_guard lock(m_mutex);
            auto hit = m_cache.find(path.value());
            if (hit != m_cache.end()) {
                ++m_cache_hits;
                return hit->second;
            }
        }
        auto res = gateway.get(path.value(), token, client_id);
        ++m_gateway_calls;
        if (res.status != 200)
            return Error{err_from_string(res.error_code.empty() ? "not-found" : res.error_code),
                         "gateway status " + std::to_string(res.status)};
        std::lock_guard lock(m_mutex);
        m_cache[path.value()] = res.body;
        return res.body;
    }

    bool cached(const std::string &path) const {
        std::lock_guard lock(m_mutex);
        return m_cache.count(path) > 0;
    }

    std::int64_t gateway_calls() const { return m_gateway_calls; }
    std::int64_t cache_hits() const { return m_cache_hits; }

private:
    Result<void> authorize(const std::string &token, const std::string &path,
                           std::int64_t now) const {
        VerifyOptions opts;
        opts.expected_iss = m_issuer_url;
        opts.expected_aud = m_audience;
        opts.allow_any_audience = !m_strict;
        opts.skew = m_skew;
        auto verified = verify_token(token, m_keys, opts, now);
        if (!verified) return verified.error();
        Acl acl = acl_from_scopes(verified.value().claims.scope, m_mount);
        if (!permits(acl, Op::read, path))
            return Error{Err::forbidden, "read " + path};
        return {};
    }

    KeySet m_keys;
    std::string m_issuer_url;
    std::string m_audience;
    std::string m_mount;
    std::int64_t m_skew;
    bool m_strict;
    mutable std::mutex m_mutex;
    std::map<std::string, std::string> m_cache;
    std::atomic<std::int64_t> m_gateway_calls{0};
    std::atomic<std::int64_t> m_cache_hits{0};
};

} // namespace captok
