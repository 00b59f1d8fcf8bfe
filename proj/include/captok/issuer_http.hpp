#pragma once

#include <memory>
#include <optional>
#include <string>
#include <thread>

#include <httplib.h>

#include "captok/errors.hpp"
#include "captok/issuer.hpp"
#include "captok/issuer_api.hpp"

namespace captok {

inline int http_status_for(Err code) {
    switch (code) {
        case Err::authentication_failed:
        case Err::unknown_handle:
        case Err::revoked:
        case Err::refresh_expired:
            return 401;
        case Err::no_matching_rule:
        case Err::audience_not_permitted:
        case Err::escalation:
            return 403;
        case Err::issuer_unreachable:
            return 503;
        case Err::io_error:
            return 500;
        default:
            return 400;
    }
}

inline std::string error_body(const Error &err) {
    return json{{"error", to_string(err.code)}, {"detail", err.detail}}.dump();
}

// Wires the OAuth-shaped endpoints onto an httplib server.
inline void mount_issuer_routes(httplib::Server &server, Issuer &issuer) {
    server.Get("/.well-known/captok-configuration",
               [&issuer](const httplib::Request &, httplib::Response &res) {
                   res.set_content(issuer.discovery().dump(), "application/json");
               });

    server.Get("/jwks", [&issuer](const httplib::Request &, httplib::Response &res) {
        res.set_content(issuer.jwks_json(), "application/json");
    });

    server.Post("/token", [&issuer](const httplib::Request &req, httplib::Response &res) {
        auto grant_type = req.get_param_value("grant_type");
        if (grant_type == "password") {
            auto out = issuer.grant_refresh(req.get_param_value("username"),
                                            req.get_param_value("password"),
                                            req.get_param_value("scope"),
                                            req.get_param_value("audience"));
            if (!out) {
                res.status = http_status_for(out.code());
                res.set_content(error_body(out.error()), "application/json");
                return;
            }
            res.set_content(json{{"refresh_token", out.value().refresh_token},
                                 {"scope", out.value().scope},
                                 {"expires_in", out.value().expires_in}}
                                .dump(),
                            "application/json");
        } else if (grant_type == "refresh_token") {
            auto opt = [&req](const char *name) -> std::optional<std::string> {
                if (!req.has_param(name)) return std::nullopt;
                return req.get_param_value(name);
            };
            auto out = issuer.mint_access(req.get_param_value("refresh_token"), opt("scope"),
                                          opt("audience"), opt("origin"));
            if (!out) {
                res.status = http_status_for(out.code());
                res.set_content(error_body(out.error()), "application/json");
                return;
            }
            res.set_content(json{{"access_token", out.value().access_token},
                                 {"token_type", out.value().token_type},
                                 {"expires_in", out.value().expires_in},
                                 {"scope", out.value().scope}}
                                .dump(),
                            "application/json");
        } else {
            res.status = 400;
            res.set_content(error_body({Err::protocol_error, "unsupported grant_type"}),
                            "application/json");
        }
    });

    server.Post("/introspect", [&issuer](const httplib::Request &req, httplib::Response &res) {
        if (!req.has_param("token")) {
            res.status = 400;
            res.set_content(error_body({Err::protocol_error, "missing token field"}),
                            "application/json");
            return;
        }
        res.set_content(issuer.introspect(req.get_param_value("token")).dump(),
                        "application/json");
    });

    server.Post("/revoke", [&issuer](const httplib::Request &req, httplib::Response &res) {
        if (!req.has_param("token")) {
            res.status = 400;
            res.set_content(error_body({Err::protocol_error, "missing token field"}),
                            "application/json");
            return;
        }
        issuer.revoke(req.get_param_value("token"));
        res.set_content("{}", "application/json");
    });
}

// Owns a server thread for tests and the serve-issuer subcommand.
class IssuerHttpServer {
public:
    explicit IssuerHttpServer(Issuer &issuer) { mount_issuer_routes(m_server, issuer); }

    ~IssuerHttpServer() { stop(); }

    // Binds immediately; port 0 picks a free one. Returns the bound port.
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

// HTTP transport of IssuerApi.
class HttpIssuerClient final : public IssuerApi {
public:
    explicit HttpIssuerClient(std::string base_url) : m_base(std::move(base_url)) {}

    Result<GrantResult> password_grant(const std::string &username, const std::string &password,
                                       const std::string &scope,
                                       const std::string &audience) override {
        httplib::Params params{{"grant_type", "password"},
                               {"username", username},
                               {"password", password},
                               {"scope", scope},
                               {"audience", audience}};
        auto body = post_form("/token", params);
        if (!body) return body.error();
        auto j = json::parse(body.value(), nullptr, false);
        if (j.is_discarded()) return Error{Err::protocol_error, "bad JSON from issuer"};
        return GrantResult{j.value("refresh_token", ""), j.value("scope", ""),
                           j.value("expires_in", std::int64_t{0})};
    }

    Result<MintResult> refresh_grant(const std::string &refresh_token,
                                     const std::optional<std::string> &scope,
                                     const std::optional<std::string> &audience,
                                     const std::optional<std::string> &origin) override {
        httplib::Params params{{"grant_type", "refresh_token"},
                               {"refresh_token", refresh_token}};
        if (scope) params.emplace("scope", *scope);
        if (audience) params.emplace("audience", *audience);
        if (origin) params.emplace("origin", *origin);
        auto body = post_form("/token", params);
        if (!body) return body.error();
        auto j = json::parse(body.value(), nullptr, false);
        if (j.is_discarded()) return Error{Err::protocol_error, "bad JSON from issuer"};
        MintResult out;
        out.access_token = j.value("access_token", "");
        out.token_type = j.value("token_type", "");
        out.expires_in = j.value("expires_in", std::int64_t{0});
        out.scope = j.value("scope", "");
        return out;
    }

    Result<json> introspect(const std::string &token) override {
        auto body = post_form("/introspect", {{"token", token}});
        if (!body) return body.error();
        auto j = json::parse(body.value(), nullptr, false);
        if (j.is_discarded()) return Error{Err::protocol_error, "bad JSON from issuer"};
        return j;
    }

    Result<void> revoke(const std::string &token) override {
        auto body = post_form("/revoke", {{"token", token}});
        if (!body) return body.error();
        return {};
    }

    Result<std::string> jwks() override {
        httplib::Client cli(m_base);
        auto res = cli.Get("/jwks");
        if (!res) return Error{Err::issuer_unreachable, httplib::to_string(res.error())};
        if (res->status != 200) return parse_error(res->status, res->body);
        return res->body;
    }

    Result<json> discovery() override {
        httplib::Client cli(m_base);
        auto res = cli.Get("/.well-known/captok-configuration");
        if (!res) return Error{Err::issuer_unreachable, httplib::to_string(res.error())};
        if (res->status != 200) return parse_error(res->status, res->body);
        auto j = json::parse(res->body, nullptr, false);
        if (j.is_discarded()) return Error{Err::protocol_error, "bad JSON from issuer"};
        return j;
    }

private:
    Result<std::string> post_form(const std::string &path, const httplib::Params &params) {
        httplib::Client cli(m_base);
        auto res = cli.Post(path, params);
        if (!res) return Error{Err::issuer_unreachable, httplib::to_string(res.error())};
        if (res->status != 200) return parse_error(res->status, res->body);
        return res->body;
    }

    Error parse_error(int status, const std::string &body) {
        auto j = json::parse(body, nullptr, false);
        if (!j.is_discarded() && j.contains("error"))
            return Error{err_from_string(j["error"].get<std::string>()),
                         j.value("detail", "")};
        return Error{Err::protocol_error, "HTTP " + std::to_string(status)};
    }

    std::string m_base;
};

} // namespace captok
