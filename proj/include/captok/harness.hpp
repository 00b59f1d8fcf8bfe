#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "captok/gateway.hpp"
#include "captok/gateway_http.hpp"
#include "captok/issuer.hpp"
#include "captok/issuer_api.hpp"
#include "captok/issuer_http.hpp"
#include "captok/token_manager.hpp"
#include "captok/vault.hpp"

namespace captok {

// ---------------------------------------------------------------------------
// Workflow description
// ---------------------------------------------------------------------------

enum class FaultType {
    none,
    expire_token,
    tamper_token,
    wrong_audience,
    out_of_scope_path,
    issuer_outage_window,
};

inline const char *to_string(FaultType f) {
    switch (f) {
        case FaultType::none: return "none";
        case FaultType::expire_token: return "expire-token";
        case FaultType::tamper_token: return "tamper-token";
        case FaultType::wrong_audience: return "wrong-audience";
        case FaultType::out_of_scope_path: return "out-of-scope-path";
        case FaultType::issuer_outage_window: return "issuer-outage-window";
    }
    return "?";
}

inline Result<FaultType> fault_from_string(std::string_view s) {
    for (FaultType f : {FaultType::none, FaultType::expire_token, FaultType::tamper_token,
                        FaultType::wrong_audience, FaultType::out_of_scope_path,
                        FaultType::issuer_outage_window}) {
        if (s == to_string(f)) return f;
    }
    return Error{Err::config_error, "unknown fault type " + std::string(s)};
}

struct JobSpec {
    std::string id;
    std::vector<Permission> input_scopes;
    std::vector<Permission> output_scopes;
    std::vector<Permission> execute_scopes; // optional
    std::int64_t duration = 60;
    std::string execute_node;

    json to_json() const {
        return json{{"id", id},
                    {"inputs", print_scope(input_scopes)},
                    {"outputs", print_scope(output_scopes)},
                    {"execute", print_scope(execute_scopes)},
                    {"duration", duration},
                    {"execute_node", execute_node}};
    }

    static Result<JobSpec> from_json(const json &j) {
        JobSpec spec;
        spec.id = j.value("id", "");
        if (spec.id.empty()) return Error{Err::config_error, "job without id"};
        auto inputs = parse_scope(j.value("inputs", ""));
        if (!inputs) return inputs.error();
        spec.input_scopes = std::move(inputs).value();
        auto outputs = parse_scope(j.value("outputs", ""));
        if (!outputs) return outputs.error();
        spec.output_scopes = std::move(outputs).value();
        auto execute = parse_scope(j.value("execute", ""));
        if (!execute) return execute.error();
        spec.execute_scopes = std::move(execute).value();
        spec.duration = j.value("duration", std::int64_t{60});
        if (spec.duration <= 0) return Error{Err::config_error, "duration must be positive"};
        spec.execute_node = j.value("execute_node", "node-" + spec.id);
        return spec;
    }
};

struct FaultEntry {
    std::string job_id;
    FaultType type = FaultType::none;
    // issuer-outage-window bounds, relative to run start
    std::int64_t from = 0;
    std::int64_t until = 0;
};

struct WorkflowSettings {
    bool simulated_clock = true;
    std::uint64_t seed = 1;
    int parallelism = 0; // 0 = unbounded
    std::string transport = "inproc"; // or "http"
    std::string user = "alice";
    std::string password = "alice-secret";
    std::string audience = "data-gw";
    std::int64_t access_lifetime = 600;
    std::int64_t refresh_margin = 60;
    bool bind_origin = false;
    bool fresh_tokens = false;
};

struct WorkflowRun {
    WorkflowSettings settings;
    std::vector<JobSpec> jobs;
    std::vector<FaultEntry> faults;

    static Result<WorkflowRun> from_json(const json &j) {
        WorkflowRun run;
        if (j.contains("settings")) {
            const json &s = j["settings"];
            run.settings.simulated_clock = s.value("clock", "simulated") != "real";
            run.settings.seed = s.value("seed", std::uint64_t{1});
            run.settings.parallelism = s.value("parallelism", 0);
            run.settings.transport = s.value("transport", "inproc");
            run.settings.user = s.value("user", "alice");
            run.settings.password = s.value("password", "alice-secret");
            run.settings.audience = s.value("audience", "data-gw");
            run.settings.access_lifetime = s.value("access_lifetime", std::int64_t{600});
            run.settings.refresh_margin = s.value("refresh_margin", std::int64_t{60});
            run.settings.bind_origin = s.value("bind_origin", false);
            run.settings.fresh_tokens = s.value("fresh_tokens", false);
        }
        if (!j.contains("jobs") || !j["jobs"].is_array() || j["jobs"].empty())
            return Error{Err::config_error, "workflow needs a non-empty jobs array"};
        for (const auto &jj : j["jobs"]) {
            auto spec = JobSpec::from_json(jj);
            if (!spec) return spec.error();
            run.jobs.push_back(std::move(spec).value());
        }
        if (j.contains("faults")) {
            for (const auto &fj : j["faults"]) {
                FaultEntry f;
                f.job_id = fj.value("job", "");
                auto type = fault_from_string(fj.value("type", "none"));
                if (!type) return type.error();
                f.type = type.value();
                f.from = fj.value("from", std::int64_t{0});
                f.until = fj.value("until", std::int64_t{0});
                run.faults.push_back(f);
            }
        }
        return run;
    }

    static Result<WorkflowRun> parse(std::string_view text) {
        auto j = json::parse(text, nullptr, false);
        if (j.is_discarded()) return Error{Err::config_error, "workflow file is not JSON"};
        return from_json(j);
    }

    json to_json() const {
        json jobs_j = json::array();
        for (const auto &job : jobs) jobs_j.push_back(job.to_json());
        json faults_j = json::array();
        for (const auto &f : faults) {
            faults_j.push_back(json{{"job", f.job_id},
                                    {"type", to_string(f.type)},
                                    {"from", f.from},
                                    {"until", f.until}});
        }
        return json{{"settings",
                     {{"clock", settings.simulated_clock ? "simulated" : "real"},
                      {"seed", settings.seed},
                      {"parallelism", settings.parallelism},
                      {"transport", settings.transport},
                      {"user", settings.user},
                      {"password", settings.password},
                      {"audience", settings.audience},
                      {"access_lifetime", settings.access_lifetime},
                      {"refresh_margin", settings.refresh_margin},
                      {"bind_origin", settings.bind_origin},
                      {"fresh_tokens", settings.fresh_tokens}}},
                    {"jobs", jobs_j},
                    {"faults", faults_j}};
    }
};

// ---------------------------------------------------------------------------
// Transcript of every cross-domain message
// ---------------------------------------------------------------------------

struct TranscriptMessage {
    std::int64_t ts = 0;
    std::string from;
    std::string to;
    std::string kind;
    json fields;
};

class Transcript {
public:
    void append(TranscriptMessage msg) {
        std::lock_guard lock(m_mutex);
        m_messages.push_back(std::move(msg));
    }

    std::vector<TranscriptMessage> messages() const {
        std::lock_guard lock(m_mutex);
        return m_messages;
    }

    std::size_t size() const {
        std::lock_guard lock(m_mutex);
        return m_messages.size();
    }

    // Returns the number of messages outside submit<->issuer exchanges that
    // contain `secret` anywhere in their payload.
    int leaks_of(const std::string &secret) const {
        std::lock_guard lock(m_mutex);
        int leaks = 0;
        for (const auto &m : m_messages) {
            bool issuer_edge = (m.from == "submit" && m.to == "issuer");
            if (issuer_edge) continue;
            if (m.fields.dump().find(secret) != std::string::npos) ++leaks;
        }
        return leaks;
    }

    void write_jsonl(const std::string &path) const {
        std::lock_guard lock(m_mutex);
        std::ofstream out(path, std::ios::trunc);
        for (const auto &m : m_messages) {
            out << json{{"ts", m.ts},
                        {"from", m.from},
                        {"to", m.to},
                        {"kind", m.kind},
                        {"fields", m.fields}}
                       .dump()
                << "\n";
        }
    }

private:
    mutable std::mutex m_mutex;
    std::vector<TranscriptMessage> m_messages;
};

// Records every submit->issuer exchange, including the handles the issuer
// returns; the containment scan whitelists exactly this edge.
class TranscriptIssuerApi final : public IssuerApi {
public:
    TranscriptIssuerApi(IssuerApi &inner, Transcript &transcript, ClockPtr clock)
        : m_inner(inner), m_transcript(transcript), m_clock(std::move(clock)) {}

    Result<GrantResult> password_grant(const std::string &u, const std::string &p,
                                       const std::string &s, const std::string &a) override {
        auto out = m_inner.password_grant(u, p, s, a);
        json fields{{"grant_type", "password"}, {"username", u}, {"scope", s}, {"audience", a}};
        if (out.ok()) {
            fields["refresh_token"] = out.value().refresh_token;
            fields["granted_scope"] = out.value().scope;
        } else {
            fields["error"] = to_string(out.code());
        }
        record("token-request", std::move(fields));
        return out;
    }

    Result<MintResult> refresh_grant(const std::string &h, const std::optional<std::string> &s,
                                     const std::optional<std::string> &a,
                                     const std::optional<std::string> &o) override {
        auto out = m_inner.refresh_grant(h, s, a, o);
        json fields{{"grant_type", "refresh_token"}, {"refresh_token", h}};
        if (s) fields["scope"] = *s;
        if (a) fields["audience"] = *a;
        if (o) fields["origin"] = *o;
        if (out.ok()) {
            fields["access_token"] = out.value().access_token;
        } else {
            fields["error"] = to_string(out.code());
        }
        record("token-request", std::move(fields));
        return out;
    }

    Result<json> introspect(const std::string &t) override { return m_inner.introspect(t); }
    Result<void> revoke(const std::string &t) override {
        record("revoke", json{{"token", t}});
        return m_inner.revoke(t);
    }
    Result<std::string> jwks() override { return m_inner.jwks(); }
    Result<json> discovery() override { return m_inner.discovery(); }

private:
    void record(std::string kind, json fields) {
        m_transcript.append(
            {m_clock->now(), "submit", "issuer", std::move(kind), std::move(fields)});
    }

    IssuerApi &m_inner;
    Transcript &m_transcript;
    ClockPtr m_clock;
};

// Records execute->data traffic.
class TranscriptGatewayApi final : public GatewayApi {
public:
    TranscriptGatewayApi(GatewayApi &inner, Transcript &transcript, ClockPtr clock)
        : m_inner(inner), m_transcript(transcript), m_clock(std::move(clock)) {}

    GatewayResponse get(const std::string &path, const std::optional<std::string> &bearer,
                        const std::string &client_id = {}) override {
        auto res = m_inner.get(path, bearer, client_id);
        record("GET", path, bearer, client_id, res);
        return res;
    }

    GatewayResponse put(const std::string &path, const std::string &body,
                        const std::optional<std::string> &bearer,
                        const std::string &client_id = {}) override {
        auto res = m_inner.put(path, body, bearer, client_id);
        record("PUT", path, bearer, client_id, res);
        return res;
    }

private:
    void record(const char *kind, const std::string &path,
                const std::optional<std::string> &bearer, const std::string &client_id,
                const GatewayResponse &res) {
        m_transcript.append({m_clock->now(), "execute", "data", kind,
                             json{{"path", path},
                                  {"bearer", bearer.value_or("")},
                                  {"client_id", client_id},
                                  {"status", res.status},
                                  {"error", res.error_code}}});
    }

    GatewayApi &m_inner;
    Transcript &m_transcript;
    ClockPtr m_clock;
};

// ---------------------------------------------------------------------------
// Run report
// ---------------------------------------------------------------------------

struct JobError {
    std::string phase;
    std::string code;
};

struct JobReport {
    std::string id;
    std::string outcome = "pending"; // completed | failed
    std::string fault = "none";
    // tokens of the running job's refresh stream (initial + replacements)
    std::int64_t running_deliveries = 0;
    // every token handed to the job across all phases
    std::int64_t tokens = 0;
    int held_retries = 0;
    std::vector<JobError> errors;

    json to_json() const {
        json errs = json::array();
        for (const auto &e : errors) errs.push_back({{"phase", e.phase}, {"code", e.code}});
        return json{{"id", id},
                    {"outcome", outcome},
                    {"fault", fault},
                    {"running_deliveries", running_deliveries},
                    {"tokens", tokens},
                    {"held_retries", held_retries},
                    {"errors", errs}};
    }
};

struct RunReport {
    std::vector<JobReport> jobs;
    std::int64_t completed = 0;
    std::int64_t failed = 0;
    std::int64_t issuer_password_grants = 0;
    std::int64_t issuer_mints = 0;
    std::int64_t manager_cache_hits = 0;
    std::int64_t gateway_requests = 0;
    std::int64_t gateway_issuer_calls_total = 0;
    std::int64_t gateway_issuer_calls_steady = 0;
    std::int64_t transcript_messages = 0;
    std::int64_t sim_duration = 0;
    bool containment_ok = false;
    bool attenuation_ok = false;
    bool decentralized_ok = false;
    bool audit_replay_ok = false;

    bool invariants_ok() const {
        return containment_ok && attenuation_ok && decentralized_ok && audit_replay_ok;
    }

    json to_json() const {
        json jobs_j = json::array();
        for (const auto &j : jobs) jobs_j.push_back(j.to_json());
        return json{{"jobs", jobs_j},
                    {"counters",
                     {{"completed", completed},
                      {"failed", failed},
                      {"issuer_password_grants", issuer_password_grants},
                      {"issuer_mints", issuer_mints},
                      {"manager_cache_hits", manager_cache_hits},
                      {"gateway_requests", gateway_requests},
                      {"gateway_issuer_calls_total", gateway_issuer_calls_total},
                      {"gateway_issuer_calls_steady", gateway_issuer_calls_steady},
                      {"transcript_messages", transcript_messages},
                      {"sim_duration", sim_duration}}},
                    {"invariants",
                     {{"containment", containment_ok},
                      {"attenuation", attenuation_ok},
                      {"decentralized_validation", decentralized_ok},
                      {"audit_replay", audit_replay_ok}}}};
    }

    std::string summary() const {
        std::string s;
        s += "jobs: " + std::to_string(jobs.size()) + " completed: " +
             std::to_string(completed) + " failed: " + std::to_string(failed) + "\n";
        s += "issuer mints: " + std::to_string(issuer_mints) +
             " cache hits: " + std::to_string(manager_cache_hits) + "\n";
        s += "gateway requests: " + std::to_string(gateway_requests) +
             " steady-state issuer calls: " + std::to_string(gateway_issuer_calls_steady) + "\n";
        s += std::string("invariants: containment=") + (containment_ok ? "ok" : "FAIL") +
             " attenuation=" + (attenuation_ok ? "ok" : "FAIL") +
             " decentralized=" + (decentralized_ok ? "ok" : "FAIL") +
             " audit_replay=" + (audit_replay_ok ? "ok" : "FAIL") + "\n";
        return s;
    }
};

// ---------------------------------------------------------------------------
// The runner: submit/execute domain emulation around issuer and gateway
// ---------------------------------------------------------------------------

class WorkflowRunner {
public:
    WorkflowRunner(WorkflowRun run, std::string workspace)
        : m_run(std::move(run)), m_workspace(std::move(workspace)) {}

    // Wires every component, then drives the job state machine through a
    // deterministic event loop.
    Result<RunReport> execute() {
        namespace fs = std::filesystem;
        const WorkflowSettings &s = m_run.settings;

        if (s.simulated_clock) {
            m_sim_clock = std::make_shared<SimClock>();
            m_clock = m_sim_clock;
        } else {
            m_clock = system_clock();
        }
        m_rng = std::make_shared<SeededRng>(s.seed);
        m_start = m_clock->now();

        fs::create_directories(fs::path(m_workspace) / "docroot");
        auto seeded = seed_input_files();
        if (!seeded) return seeded.error();

        // issuer with a policy synthesized from the workflow's scope universe
        IssuerConfig issuer_config;
        issuer_config.issuer_url = "https://issuer.workflow";
        issuer_config.default_access_lifetime = s.access_lifetime;
        auto policy = synthesize_policy();
        if (!policy) return policy.error();
        UserDirectory users;
        auto added = users.add_user(s.user, s.password, {"WorkflowUsers"}, *m_rng, 64);
        if (!added) return added.error();
        m_issuer = std::make_unique<Issuer>(issuer_config, std::move(policy).value(),
                                            std::move(users),
                                            std::make_shared<MemoryRefreshStore>(), m_clock,
                                            m_rng);

        // gateway with its own issuer channel (counted separately)
        m_gw_inproc_api = std::make_unique<InProcessIssuer>(*m_issuer);
        GatewayConfig gw_config;
        gw_config.docroot = (fs::path(m_workspace) / "docroot").string();
        gw_config.issuer_url = issuer_config.issuer_url;
        gw_config.audience = s.audience;
        gw_config.enforce_origin = s.bind_origin;
        gw_config.key_refetch_interval = 1 << 30; // no refetch mid-run
        gw_config.audit_log_path = (fs::path(m_workspace) / "audit.jsonl").string();

        std::unique_ptr<IssuerApi> manager_transport;
        std::unique_ptr<GatewayApi> gateway_transport;
        if (s.transport == "http") {
            m_issuer_server = std::make_unique<IssuerHttpServer>(*m_issuer);
            int issuer_port = m_issuer_server->start();
            if (issuer_port <= 0) return Error{Err::io_error, "issuer server failed to bind"};
            m_gw_http_api = std::make_unique<HttpIssuerClient>(
                "http://127.0.0.1:" + std::to_string(issuer_port));
            m_gw_counting = std::make_unique<CountingIssuerApi>(*m_gw_http_api);
            auto gw = GatewayCore::create(gw_config, *m_gw_counting, m_clock);
            if (!gw) return gw.error();
            m_gateway = std::move(gw).value();
            m_gateway_server = std::make_unique<GatewayHttpServer>(*m_gateway);
            int gw_port = m_gateway_server->start();
            if (gw_port <= 0) return Error{Err::io_error, "gateway server failed to bind"};
            manager_transport = std::make_unique<HttpIssuerClient>(
                "http://127.0.0.1:" + std::to_string(issuer_port));
            gateway_transport = std::make_unique<HttpGatewayClient>(
                "http://127.0.0.1:" + std::to_string(gw_port));
        } else {
            m_gw_counting = std::make_unique<CountingIssuerApi>(*m_gw_inproc_api);
            auto gw = GatewayCore::create(gw_config, *m_gw_counting, m_clock);
            if (!gw) return gw.error();
            m_gateway = std::move(gw).value();
            manager_transport = std::make_unique<InProcessIssuer>(*m_issuer);
            gateway_transport = std::make_unique<InProcessGateway>(*m_gateway);
        }
        m_manager_transport = std::move(manager_transport);
        m_gateway_transport = std::move(gateway_transport);
        m_warmup_gateway_calls = m_gw_counting->total();

        // submit-domain chain: counting -> outage faults -> transcript
        m_mgr_counting = std::make_unique<CountingIssuerApi>(*m_manager_transport);
        m_outage = std::make_unique<OutageIssuerApi>(*m_mgr_counting, m_clock);
        for (const auto &f : m_run.faults) {
            if (f.type == FaultType::issuer_outage_window)
                m_outage->add_outage(m_start + f.from, m_start + f.until);
        }
        m_mgr_api = std::make_unique<TranscriptIssuerApi>(*m_outage, m_transcript, m_clock);

        auto key_path = (fs::path(m_workspace) / "vault.key").string();
        auto wrote = write_vault_key(key_path, *m_rng);
        if (!wrote) return wrote.error();
        auto vault = Vault::open((fs::path(m_workspace) / "vault.bin").string(), key_path,
                                 m_rng);
        if (!vault) return vault.error();
        m_vault = std::move(vault).value();

        ManagerConfig mgr_config;
        mgr_config.user = s.user;
        mgr_config.issuer_url = issuer_config.issuer_url;
        mgr_config.refresh_margin = s.refresh_margin;
        mgr_config.default_access_lifetime = s.access_lifetime;
        m_manager = std::make_unique<TokenManager>(mgr_config, *m_vault, *m_mgr_api, m_clock);

        auto granted = acquire_refresh_grants();
        if (!granted) return granted.error();

        run_event_loop();
        return assemble_report();
    }

    const Transcript &transcript() const { return m_transcript; }
    const TokenManager &manager() const { return *m_manager; }
    GatewayCore &gateway() { return *m_gateway; }
    Issuer &issuer() { return *m_issuer; }
    const std::vector<std::string> &issued_handles() const { return m_handles; }

private:
    struct JobRuntime {
        JobSpec spec;
        FaultType fault = FaultType::none;
        JobReport report;
        std::string stage_in_token;
        std::int64_t started_at = 0;
        bool tracked = false;
    };

    struct Event {
        std::int64_t at;
        std::int64_t seq;
        enum Kind { job_start, job_finish, manager_tick } kind;
        std::size_t job_index;

        bool operator>(const Event &other) const {
            return std::tie(at, seq) > std::tie(other.at, other.seq);
        }
    };

    // every distinct scope atom named by the workflow becomes grantable
    Result<Policy> synthesize_policy() {
        std::set<std::string> atoms;
        for (const auto &job : m_run.jobs) {
            for (const auto *scopes :
                 {&job.input_scopes, &job.output_scopes, &job.execute_scopes}) {
                for (const auto &p : *scopes) atoms.insert(p.str());
            }
        }
        if (atoms.empty()) return Error{Err::config_error, "workflow grants no scopes"};
        json grantable = json::array();
        for (const auto &a : atoms) grantable.push_back(a);
        json rules = json::array();
        rules.push_back(json{{"match", "user:" + m_run.settings.user},
                             {"grantable", grantable},
                             {"max_access_lifetime", m_run.settings.access_lifetime},
                             {"max_refresh_lifetime", 30 * 86400},
                             {"audiences",
                              {m_run.settings.audience, "other-service", kAnyAudience}}});
        return Policy::from_json(rules);
    }

    // one file per distinct read scope so stage-in has bytes to fetch
    Result<void> seed_input_files() {
        namespace fs = std::filesystem;
        for (const auto &job : m_run.jobs) {
            for (const auto &p : job.input_scopes) {
                if (p.op != Op::read) continue;
                fs::path file = fs::path(m_workspace) / "docroot" / p.path.substr(1) /
                                "input.dat";
                std::error_code ec;
                fs::create_directories(file.parent_path(), ec);
                if (!fs::exists(file)) {
                    std::ofstream out(file);
                    if (!out) return Error{Err::io_error, "cannot seed " + file.string()};
                    out << "input for " << p.path;
                }
            }
        }
        return {};
    }

    // the union grant the researcher obtains at submit time, plus a second
    // wrong-audience grant when the fault plan needs one
    Result<void> acquire_refresh_grants() {
        std::set<std::string> atoms;
        for (const auto &job : m_run.jobs) {
            for (const auto *scopes :
                 {&job.input_scopes, &job.output_scopes, &job.execute_scopes}) {
                for (const auto &p : *scopes) atoms.insert(p.str());
            }
        }
        std::string scope;
        for (const auto &a : atoms) {
            if (!scope.empty()) scope += ' ';
            scope += a;
        }
        auto grant = m_mgr_api->password_grant(m_run.settings.user, m_run.settings.password,
                                               scope, m_run.settings.audience);
        if (!grant) return grant.error();
        m_handles.push_back(grant.value().refresh_token);
        auto stored = m_manager->store_refresh(
            m_run.settings.user, m_issuer->config().issuer_url, grant.value().refresh_token,
            grant.value().scope, m_clock->now() + grant.value().expires_in,
            m_run.settings.audience);
        if (!stored) return stored.error();

        bool needs_wrong_audience = std::any_of(
            m_run.faults.begin(), m_run.faults.end(),
            [](const FaultEntry &f) { return f.type == FaultType::wrong_audience; });
        if (needs_wrong_audience) {
            auto other = m_mgr_api->password_grant(m_run.settings.user,
                                                   m_run.settings.password, scope,
                                                   "other-service");
            if (!other) return other.error();
            m_handles.push_back(other.value().refresh_token);
            auto stored_other = m_manager->store_refresh(
                m_run.settings.user, m_issuer->config().issuer_url,
                other.value().refresh_token, other.value().scope,
                m_clock->now() + other.value().expires_in, "other-service");
            if (!stored_other) return stored_other.error();
        }
        return {};
    }

    FaultType fault_for(const std::string &job_id) const {
        for (const auto &f : m_run.faults) {
            if (f.job_id == job_id) return f.type;
        }
        return FaultType::none;
    }

    void push_event(std::int64_t at, Event::Kind kind, std::size_t job_index = 0) {
        m_events.push(Event{at, m_event_seq++, kind, job_index});
    }

    void run_event_loop() {
        m_jobs.clear();
        m_jobs.reserve(m_run.jobs.size());
        for (const auto &spec : m_run.jobs) {
            JobRuntime rt;
            rt.spec = spec;
            rt.fault = fault_for(spec.id);
            rt.report.id = spec.id;
            rt.report.fault = to_string(rt.fault);
            // an expire-token fault needs the job to outlive its token
            if (rt.fault == FaultType::expire_token) {
                rt.spec.duration = std::max(
                    rt.spec.duration,
                    m_run.settings.access_lifetime + kDefaultSkew + 1);
            }
            m_job_index[rt.spec.id] = m_jobs.size();
            m_jobs.push_back(std::move(rt));
        }

        int bound = m_run.settings.parallelism;
        std::size_t admitted = 0;
        std::size_t cap = bound > 0 ? static_cast<std::size_t>(bound) : m_jobs.size();
        for (; admitted < m_jobs.size() && admitted < cap; ++admitted) {
            push_event(m_start, Event::job_start, admitted);
        }

        while (!m_events.empty()) {
            Event ev = m_events.top();
            m_events.pop();
            m_clock->wait_until(ev.at);
            std::int64_t now = m_clock->now();

            switch (ev.kind) {
                case Event::job_start:
                    start_job(m_jobs[ev.job_index], now);
                    break;
                case Event::job_finish:
                    finish_job(m_jobs[ev.job_index], now);
                    if (admitted < m_jobs.size()) {
                        push_event(now, Event::job_start, admitted++);
                    }
                    break;
                case Event::manager_tick: {
                    auto deliveries = m_manager->refresh_running(now);
                    for (const auto &d : deliveries) deliver(d);
                    break;
                }
            }
            schedule_manager_tick();
        }
    }

    void schedule_manager_tick() {
        auto next = m_manager->next_event();
        if (!next) return;
        std::int64_t at = std::max(*next, m_clock->now());
        if (m_scheduled_ticks.insert(at).second) push_event(at, Event::manager_tick);
    }

    void deliver(const Delivery &d) {
        m_transcript.append({m_clock->now(), "submit", "execute", "token-delivery",
                             json{{"job", d.job_id},
                                  {"token", d.token},
                                  {"scope", d.scope},
                                  {"expires_at", d.expires_at}}});
        auto it = m_job_index.find(d.job_id);
        if (it == m_job_index.end()) return;
        JobRuntime &job = m_jobs[it->second];
        ++job.report.tokens;
        // refreshes re-request the tracked scopes; attenuation must hold here too
        const auto &scopes = job.spec.execute_scopes.empty() ? job.spec.input_scopes
                                                             : job.spec.execute_scopes;
        if (d.scope != print_scope(scopes)) ++m_attenuation_violations;
    }

    void fail_job(JobRuntime &job, const std::string &phase, const std::string &code) {
        job.report.errors.push_back({phase, code});
        job.report.outcome = "failed";
        if (job.tracked) m_manager->job_finished(job.spec.id);
    }

    Result<Delivery> request_token(JobRuntime &job, JobPhase phase,
                                   const std::vector<Permission> &scopes,
                                   const std::string &audience) {
        TokenRequest req;
        req.job_id = job.spec.id;
        req.phase = phase;
        req.scopes = scopes;
        req.audience = audience;
        if (m_run.settings.bind_origin) req.origin = job.spec.execute_node;
        req.fresh = m_run.settings.fresh_tokens;
        auto out = m_manager->get_access(req);
        if (out.ok()) {
            ++job.report.tokens;
            m_transcript.append({m_clock->now(), "submit", "execute", "token-delivery",
                                 json{{"job", job.spec.id},
                                      {"token", out.value().token},
                                      {"scope", out.value().scope},
                                      {"expires_at", out.value().expires_at}}});
            // attenuation at the edge: delivered scope must equal the request
            if (out.value().scope != print_scope(scopes)) m_attenuation_violations++;
        }
        return out;
    }

    void start_job(JobRuntime &job, std::int64_t now) {
        job.started_at = now;
        job.report.outcome = "running";

        std::string audience = m_run.settings.audience;
        if (job.fault == FaultType::wrong_audience) audience = "other-service";

        auto delivery = request_token(job, JobPhase::stage_in, job.spec.input_scopes, audience);
        if (!delivery) {
            fail_job(job, "stage_in", to_string(delivery.code()));
            return;
        }
        std::string token = delivery.value().token;
        job.stage_in_token = token;

        if (job.fault == FaultType::tamper_token) {
            auto sig_start = token.rfind('.') + 1;
            auto mid = sig_start + (token.size() - sig_start) / 2;
            token[mid] = token[mid] == 'A' ? 'B' : 'A';
        }

        // stage-in: fetch every input
        for (const auto &p : job.spec.input_scopes) {
            if (p.op != Op::read) continue;
            std::string path = p.path == "/" ? "/input.dat" : p.path + "/input.dat";
            if (job.fault == FaultType::out_of_scope_path) path = "/outside/secret.dat";
            auto res = m_gateway_transport->get(path, token, job.spec.execute_node);
            ++m_gateway_requests;
            if (res.status != 200) {
                fail_job(job, "stage_in", res.error_code.empty()
                                              ? std::to_string(res.status)
                                              : res.error_code);
                return;
            }
        }

        // execute phase: track the job so refresh_running keeps it fed
        const auto &exec_scopes = job.spec.execute_scopes.empty() ? job.spec.input_scopes
                                                                  : job.spec.execute_scopes;
        if (job.fault != FaultType::expire_token) {
            TokenRequest req;
            req.job_id = job.spec.id;
            req.phase = JobPhase::execute;
            req.scopes = exec_scopes;
            req.audience = audience;
            if (m_run.settings.bind_origin) req.origin = job.spec.execute_node;
            req.fresh = m_run.settings.fresh_tokens;
            if (job.spec.execute_scopes.empty()) {
                // reuse the stage-in token; still tracked for refresh
                m_manager->track_job(req, delivery.value().expires_at);
            } else {
                auto exec_delivery = request_token(job, JobPhase::execute, exec_scopes,
                                                   audience);
                if (!exec_delivery) {
                    fail_job(job, "execute", to_string(exec_delivery.code()));
                    return;
                }
                m_manager->track_job(req, exec_delivery.value().expires_at);
            }
            job.tracked = true;
        }

        push_event(now + job.spec.duration, Event::job_finish, index_of(job));
    }

    void finish_job(JobRuntime &job, std::int64_t now) {
        if (job.report.outcome == "failed") return;

        if (job.fault == FaultType::expire_token) {
            // the job kept its stage-in token past expiry and tries to use it
            const auto &p = job.spec.input_scopes.front();
            std::string path = p.path == "/" ? "/input.dat" : p.path + "/input.dat";
            auto res = m_gateway_transport->get(path, job.stage_in_token,
                                                job.spec.execute_node);
            ++m_gateway_requests;
            fail_job(job, "execute",
                     res.error_code.empty() ? std::to_string(res.status) : res.error_code);
            return;
        }

        if (job.tracked) {
            // a held job at finish time waits for recovery before stage-out
            if (m_manager->job_state(job.spec.id) == JobState::hold) {
                auto next = m_manager->next_event();
                push_event(next ? std::max(*next, now + 1) : now + 1, Event::job_finish,
                           index_of(job));
                return;
            }
            if (m_manager->job_state(job.spec.id) == JobState::terminal_hold) {
                fail_job(job, "execute", to_string(m_manager->job_hold_cause(job.spec.id).code));
                return;
            }
            auto retries = m_manager->retry_times(job.spec.id);
            if (!retries.empty()) {
                job.report.held_retries = static_cast<int>(retries.size());
                job.report.errors.push_back({"execute", to_string(Err::issuer_unreachable)});
            }
            m_manager->job_finished(job.spec.id);
        }
        m_manager->mark_execution_complete(job.spec.id);

        std::string audience = m_run.settings.audience;
        auto delivery =
            request_token(job, JobPhase::stage_out, job.spec.output_scopes, audience);
        if (!delivery) {
            fail_job(job, "stage_out", to_string(delivery.code()));
            return;
        }
        for (const auto &p : job.spec.output_scopes) {
            if (p.op != Op::write) continue;
            std::string path = (p.path == "/" ? "" : p.path) + "/" + job.spec.id + ".out";
            auto res = m_gateway_transport->put(path, "output of " + job.spec.id,
                                                delivery.value().token, job.spec.execute_node);
            ++m_gateway_requests;
            if (res.status != 201 && res.status != 204) {
                fail_job(job, "stage_out", res.error_code.empty()
                                               ? std::to_string(res.status)
                                               : res.error_code);
                return;
            }
        }
        job.report.outcome = "completed";
    }

    std::size_t index_of(const JobRuntime &job) const {
        return static_cast<std::size_t>(&job - m_jobs.data());
    }

    RunReport assemble_report() {
        RunReport report;
        report.sim_duration = m_clock->now() - m_start;
        for (auto &job : m_jobs) {
            if (job.report.outcome == "running") job.report.outcome = "completed";
            job.report.running_deliveries = m_manager->deliveries(job.spec.id);
            report.jobs.push_back(job.report);
        }
        std::sort(report.jobs.begin(), report.jobs.end(),
                  [](const JobReport &a, const JobReport &b) { return a.id < b.id; });
        for (const auto &j : report.jobs) {
            if (j.outcome == "completed") ++report.completed;
            else ++report.failed;
        }
        report.issuer_password_grants = m_mgr_counting->password_grants();
        report.issuer_mints = m_manager->mints();
        report.manager_cache_hits = m_manager->cache_hits();
        report.gateway_requests = m_gateway_requests;
        report.gateway_issuer_calls_total = m_gw_counting->total();
        report.gateway_issuer_calls_steady = m_gw_counting->total() - m_warmup_gateway_calls;
        report.transcript_messages = static_cast<std::int64_t>(m_transcript.size());

        // invariants
        report.containment_ok = true;
        for (const auto &h : m_handles) {
            if (m_transcript.leaks_of(h) != 0) report.containment_ok = false;
        }
        report.attenuation_ok = m_attenuation_violations == 0;
        report.decentralized_ok = report.gateway_issuer_calls_steady == 0;
        report.audit_replay_ok =
            replay_audit(m_gateway->audit().records(), m_issuer->served_keys(),
                         m_gateway->config()) == 0;
        return report;
    }

    WorkflowRun m_run;
    std::string m_workspace;

    std::shared_ptr<SimClock> m_sim_clock;
    ClockPtr m_clock;
    RngPtr m_rng;
    std::int64_t m_start = 0;

    // declaration order doubles as the reverse destruction order: HTTP
    // servers go down before the cores they serve, the manager before the
    // vault and issuer chain it references
    std::unique_ptr<Issuer> m_issuer;
    std::unique_ptr<InProcessIssuer> m_gw_inproc_api;
    std::unique_ptr<HttpIssuerClient> m_gw_http_api;
    std::unique_ptr<CountingIssuerApi> m_gw_counting;
    std::unique_ptr<GatewayCore> m_gateway;
    std::unique_ptr<IssuerHttpServer> m_issuer_server;
    std::unique_ptr<GatewayHttpServer> m_gateway_server;
    std::unique_ptr<IssuerApi> m_manager_transport;
    std::unique_ptr<GatewayApi> m_gateway_transport;
    std::unique_ptr<CountingIssuerApi> m_mgr_counting;
    std::unique_ptr<OutageIssuerApi> m_outage;
    std::unique_ptr<TranscriptIssuerApi> m_mgr_api;
    std::unique_ptr<Vault> m_vault;
    std::unique_ptr<TokenManager> m_manager;

    Transcript m_transcript;
    std::vector<std::string> m_handles;
    std::vector<JobRuntime> m_jobs;
    std::map<std::string, std::size_t> m_job_index;
    std::priority_queue<Event, std::vector<Event>, std::greater<>> m_events;
    std::int64_t m_event_seq = 0;
    std::set<std::int64_t> m_scheduled_ticks;
    std::int64_t m_gateway_requests = 0;
    std::int64_t m_warmup_gateway_calls = 0;
    int m_attenuation_violations = 0;
};

inline Result<RunReport> run_workflow(WorkflowRun run, const std::string &workspace) {
    WorkflowRunner runner(std::move(run), workspace);
    return runner.execute();
}

} // namespace captok
