#pragma once

#include <string>
#include <thread>

#include <httplib.h>

#include "captok/issuer_http.hpp"
#include "captok/token_manager.hpp"

namespace captok {

// Local request API for CLI use. Binds to loopback only: the whole point of
// the manager is that refresh handles stay inside the submit domain.
inline void mount_manager_routes(httplib::Server &server, TokenManager &manager) {
    server.Post("/store_refresh", [&manager](const httplib::Request &req,
                                             httplib::Response &res) {
        auto out = manager.store_refresh(
            req.get_param_value("user"), req.get_param_value("issuer"),
            req.get_param_value("handle"), req.get_param_value("scopes"),
            req.has_param("expires_at") ? std::stoll(req.get_param_value("expires_at")) : 0,
            req.get_param_value("audience"));
        if (!out) {
            res.status = http_status_for(out.code());
            res.set_content(error_body(out.error()), "application/json");
            return;
        }
        res.set_content("{}", "application/json");
    });

    server.Post("/get_access", [&manager](const httplib::Request &req, httplib::Response &res) {
        TokenRequest treq;
        treq.job_id = req.get_param_value("job_id");
        std::string phase = req.get_param_value("phase");
        if (phase == "execute") treq.phase = JobPhase::execute;
        else if (phase == "stage_out") treq.phase = JobPhase::stage_out;
        else treq.phase = JobPhase::stage_in;
        auto scopes = parse_scope(req.get_param_value("scope"));
        if (!scopes) {
            res.status = 400;
            res.set_content(error_body(scopes.error()), "application/json");
            return;
        }
        treq.scopes = std::move(scopes).value();
        treq.audience = req.get_param_value("audience");
        if (req.has_param("origin")) treq.origin = req.get_param_value("origin");
        treq.fresh = req.get_param_value("fresh") == "true";

        auto out = manager.get_access(treq);
        if (!out) {
            res.status = http_status_for(out.code());
            res.set_content(error_body(out.error()), "application/json");
            return;
        }
        res.set_content(json{{"access_token", out.value().token},
                             {"scope", out.value().scope},
                             {"expires_at", out.value().expires_at}}
                            .dump(),
                        "application/json");
    });

    server.Get("/vault", [&manager](const httplib::Request &, httplib::Response &res) {
        res.set_content(manager.vault_listing().dump(2), "application/json");
    });
}

class ManagerHttpServer {
public:
    explicit ManagerHttpServer(TokenManager &manager) { mount_manager_routes(m_server, manager); }

    ~ManagerHttpServer() { stop(); }

    int start(int port = 0) {
        if (port == 0) {
            m_port = m_server.bind_to_any_port("127.0.0.1");
        } else {
            if (!m_server.bind_to_port("127.0.0.1", port)) return -1;
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

private:
    httplib::Server m_server;
    std::thread m_thread;
    int m_port = -1;
};

} // namespace captok
