#pragma once

#include <algorithm>
#include <cstdint>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "captok/authz.hpp"
#include "captok/clock.hpp"
#include "captok/errors.hpp"
#include "captok/issuer_api.hpp"
#include "captok/scope.hpp"
#include "captok/vault.hpp"

namespace captok {

enum class JobPhase { stage_in, execute, stage_out };

inline const char *to_string(JobPhase p) {
    switch (p) {
        case JobPhase::stage_in: return "stage_in";
        case JobPhase::execute: return "execute";
        case JobPhase::stage_out: return "stage_out";
    }
    return "?";
}

enum class JobState { pending, running, hold, terminal_hold, finished };

inline const char *to_string(JobState s) {
    switch (s) {
        case JobState::pending: return "pending";
        case JobState::running: return "running";
        case JobState::hold: return "hold";
        case JobState::terminal_hold: return "terminal_hold";
        case JobState::finished: return "finished";
    }
    return "?";
}

struct TokenRequest {
    std::string job_id;
    JobPhase phase = JobPhase::stage_in;
    std::vector<Permission> scopes;
    std::string audience;
    std::optional<std::string> origin;
    // Per-instance token: skip the shared cache even when it could serve.
    bool fresh = false;
};

struct Delivery {
    std::string job_id;
    std::string token;
    std::string scope;
    std::int64_t expires_at = 0;
};

struct ManagerConfig {
    std::string user;
    std::string issuer_url;
    std::int64_t refresh_margin = 60;
    std::int64_t backoff_base = 1;
    std::int64_t backoff_factor = 2;
    std::int64_t backoff_cap = 60;
    std::int64_t default_access_lifetime = 600; // only a hint for cache maths
};

// The submit-domain credential manager: holds refresh handles in the
// encrypted vault, mints and caches access tokens per (scope, audience,
// origin), refreshes running jobs before expiry and never lets a refresh
// handle leave the submit domain.
class TokenManager {
public:
    TokenManager(ManagerConfig config, Vault &vault, IssuerApi &issuer, ClockPtr clock)
        : m_config(std::move(config)),
          m_vault(vault),
          m_issuer(issuer),
          m_clock(std::move(clock)) {}

    const ManagerConfig &config() const { return m_config; }

    // --- vault facade -----------------------------------------------------

    Result<void> store_refresh(const std::string &user, const std::string &issuer,
                               const std::string &handle, const std::string &scopes,
                               std::int64_t expires_at, const std::string &audience = {}) {
        auto parsed = parse_scope(scopes);
        if (!parsed) return parsed.error();
        return m_vault.store(VaultEntry{user, issuer, handle, scopes, audience, expires_at});
    }

    json vault_listing() const { return m_vault.listing(); }

    // --- access tokens ------------------------------------------------------

    Result<Delivery> get_access(const TokenRequest &req) {
        std::int64_t now = m_clock->now();
        if (req.phase == JobPhase::stage_out) {
            std::lock_guard lock(m_job_mutex);
            if (!m_completed.count(req.job_id))
                return Error{Err::phase_violation,
                             "stage_out before job " + req.job_id + " reported completion"};
        }
        if (req.scopes.empty())
            return Error{Err::invalid_scope, "request needs at least one scope"};

        auto grant = find_dominating_grant(req.scopes, req.audience, now);
        if (!grant) return grant.error();

        const std::string key = cache_key(req);
        if (!req.fresh) {
            std::unique_lock lock(m_cache_mutex);
            auto hit = m_cache.find(key);
            if (hit != m_cache.end() && hit->second.expires_at - now > m_config.refresh_margin) {
                ++m_cache_hits;
                return Delivery{req.job_id, hit->second.token, hit->second.scope,
                                hit->second.expires_at};
            }
            // single in-flight mint per key: followers wait for the leader
            auto flight = m_inflight.find(key);
            if (flight != m_inflight.end()) {
                auto future = flight->second;
                lock.unlock();
                future.wait();
                lock.lock();
                auto again = m_cache.find(key);
                if (again != m_cache.end() &&
                    again->second.expires_at - now > m_config.refresh_margin) {
                    ++m_cache_hits;
                    return Delivery{req.job_id, again->second.token, again->second.scope,
                                    again->second.expires_at};
                }
                lock.unlock();
                return mint(req, grant.value(), now, key);
            }
            std::promise<void> done;
            m_inflight.emplace(key, done.get_future().share());
            lock.unlock();
            auto out = mint(req, grant.value(), now, key);
            lock.lock();
            m_inflight.erase(key);
            lock.unlock();
            done.set_value();
            return out;
        }
        return mint(req, grant.value(), now, key);
    }

    // --- running-job refresh -------------------------------------------------

    void track_job(const TokenRequest &req, std::int64_t token_expires_at) {
        std::lock_guard lock(m_job_mutex);
        auto &job = m_jobs[req.job_id];
        job.request = req;
        job.state = JobState::running;
        job.token_expires_at = token_expires_at;
        job.deliveries = 1;
    }

    void mark_execution_complete(const std::string &job_id) {
        std::lock_guard lock(m_job_mutex);
        m_completed.insert(job_id);
    }

    void job_finished(const std::string &job_id) {
        std::lock_guard lock(m_job_mutex);
        auto it = m_jobs.find(job_id);
        if (it != m_jobs.end()) it->second.state = JobState::finished;
    }

    // Delivers replacements to every running job whose token is inside the
    // refresh margin and pumps held jobs through their retry schedule.
    std::vector<Delivery> refresh_running(std::int64_t now) {
        std::vector<std::string> due_refresh;
        std::vector<std::string> due_retry;
        {
            std::lock_guard lock(m_job_mutex);
            for (auto &[id, job] : m_jobs) {
                if (job.state == JobState::running &&
                    job.token_expires_at - now <= m_config.refresh_margin) {
                    due_refresh.push_back(id);
                } else if (job.state == JobState::hold && now >= job.next_retry_at) {
                    due_retry.push_back(id);
                }
            }
        }
        std::vector<Delivery> deliveries;
        for (const auto &id : due_refresh) attempt(id, now, deliveries, /*is_retry=*/false);
        for (const auto &id : due_retry) attempt(id, now, deliveries, /*is_retry=*/true);
        return deliveries;
    }

    // Moves a job into hold with its cause; retries are driven by
    // refresh_running as the clock passes the backoff schedule.
    void hold_and_retry(const std::string &job_id, const Error &cause) {
        std::lock_guard lock(m_job_mutex);
        auto it = m_jobs.find(job_id);
        if (it == m_jobs.end()) return;
        auto &job = it->second;
        if (terminal_cause(cause.code)) {
            job.state = JobState::terminal_hold;
            job.hold_cause = cause;
            return;
        }
        job.state = JobState::hold;
        job.hold_cause = cause;
        job.backoff = m_config.backoff_base;
        job.next_retry_at = m_clock->now() + job.backoff;
    }

    // Earliest instant at which refresh_running has work to do.
    std::optional<std::int64_t> next_event() const {
        std::lock_guard lock(m_job_mutex);
        std::optional<std::int64_t> next;
        for (const auto &[id, job] : m_jobs) {
            (void)id;
            std::optional<std::int64_t> t;
            if (job.state == JobState::running)
                t = job.token_expires_at - m_config.refresh_margin;
            else if (job.state == JobState::hold)
                t = job.next_retry_at;
            if (t && (!next || *t < *next)) next = t;
        }
        return next;
    }

    JobState job_state(const std::string &job_id) const {
        std::lock_guard lock(m_job_mutex);
        auto it = m_jobs.find(job_id);
        return it == m_jobs.end() ? JobState::pending : it->second.state;
    }

    Error job_hold_cause(const std::string &job_id) const {
        std::lock_guard lock(m_job_mutex);
        auto it = m_jobs.find(job_id);
        return it == m_jobs.end() ? Error{} : it->second.hold_cause;
    }

    std::vector<std::int64_t> retry_times(const std::string &job_id) const {
        std::lock_guard lock(m_job_mutex);
        auto it = m_jobs.find(job_id);
        return it == m_jobs.end() ? std::vector<std::int64_t>{} : it->second.retry_times;
    }

    std::int64_t deliveries(const std::string &job_id) const {
        std::lock_guard lock(m_job_mutex);
        auto it = m_jobs.find(job_id);
        return it == m_jobs.end() ? 0 : it->second.deliveries;
    }

    std::int64_t mints() const { return m_mints; }
    std::int64_t cache_hits() const { return m_cache_hits; }

    std::int64_t mints_for(const std::vector<Permission> &scopes, const std::string &audience,
                           const std::string &origin = {}) const {
        std::lock_guard lock(m_cache_mutex);
        auto it = m_mints_by_key.find(print_scope(scopes) + "\n" + audience + "\n" + origin);
        return it == m_mints_by_key.end() ? 0 : it->second;
    }

private:
    struct JobEntry {
        TokenRequest request;
        JobState state = JobState::pending;
        std::int64_t token_expires_at = 0;
        std::int64_t deliveries = 0;
        Error hold_cause;
        std::int64_t backoff = 0;
        std::int64_t next_retry_at = 0;
        std::vector<std::int64_t> retry_times;
    };

    struct CacheEntry {
        std::string token;
        std::string scope;
        std::int64_t expires_at = 0;
    };

    static bool terminal_cause(Err code) {
        return code == Err::refresh_expired || code == Err::revoked ||
               code == Err::unknown_handle;
    }

    std::string cache_key(const TokenRequest &req) const {
        return print_scope(req.scopes) + "\n" + req.audience + "\n" + req.origin.value_or("");
    }

    Result<VaultEntry> find_dominating_grant(const std::vector<Permission> &scopes,
                                             const std::string &audience,
                                             std::int64_t now) const {
        bool expired_match = false;
        std::optional<VaultEntry> fallback;
        for (const auto &entry : m_vault.entries()) {
            if (entry.user != m_config.user || entry.issuer != m_config.issuer_url) continue;
            auto parsed = parse_scope(entry.scopes);
            if (!parsed) continue;
            if (!attenuate(parsed.value(), scopes).ok()) continue;
            if (entry.expires_at <= now) {
                expired_match = true;
                continue;
            }
            if (audience.empty() || entry.audience == audience) return entry;
            // grants stored without audience metadata might still serve
            if (entry.audience.empty() && !fallback) fallback = entry;
        }
        if (fallback) return *fallback;
        if (expired_match)
            return Error{Err::refresh_expired, "stored grant has expired"};
        return Error{Err::no_dominating_grant, print_scope(scopes)};
    }

    Result<Delivery> mint(const TokenRequest &req, const VaultEntry &grant, std::int64_t now,
                          const std::string &key) {
        auto out = m_issuer.refresh_grant(grant.handle, print_scope(req.scopes), req.audience,
                                          req.origin);
        if (!out) return out.error();
        ++m_mints;
        CacheEntry entry{out.value().access_token, out.value().scope,
                         now + out.value().expires_in};
        {
            std::lock_guard lock(m_cache_mutex);
            ++m_mints_by_key[key];
            if (!req.fresh) m_cache[key] = entry;
        }
        return Delivery{req.job_id, entry.token, entry.scope, entry.expires_at};
    }

    void attempt(const std::string &id, std::int64_t now, std::vector<Delivery> &deliveries,
                 bool is_retry) {
        TokenRequest req;
        {
            std::lock_guard lock(m_job_mutex);
            auto it = m_jobs.find(id);
            if (it == m_jobs.end()) return;
            req = it->second.request;
            if (is_retry) it->second.retry_times.push_back(now);
        }
        auto delivery = get_access(req);
        std::lock_guard lock(m_job_mutex);
        auto it = m_jobs.find(id);
        if (it == m_jobs.end()) return;
        auto &job = it->second;
        if (delivery.ok()) {
            job.state = JobState::running;
            job.hold_cause = {};
            job.backoff = 0;
            job.token_expires_at = delivery.value().expires_at;
            ++job.deliveries;
            deliveries.push_back(delivery.value());
            return;
        }
        const Error &err = delivery.error();
        if (terminal_cause(err.code)) {
            job.state = JobState::terminal_hold;
            job.hold_cause = err;
            return;
        }
        job.hold_cause = err;
        if (job.state == JobState::hold) {
            job.backoff = std::min(job.backoff * m_config.backoff_factor, m_config.backoff_cap);
        } else {
            job.state = JobState::hold;
            job.backoff = m_config.backoff_base;
        }
        job.next_retry_at = now + job.backoff;
    }

    ManagerConfig m_config;
    Vault &m_vault;
    IssuerApi &m_issuer;
    ClockPtr m_clock;

    mutable std::mutex m_cache_mutex;
    std::map<std::string, CacheEntry> m_cache;
    std::map<std::string, std::int64_t> m_mints_by_key;
    std::map<std::string, std::shared_future<void>> m_inflight;

    mutable std::mutex m_job_mutex;
    std::map<std::string, JobEntry> m_jobs;
    std::set<std::string> m_completed;

    std::atomic<std::int64_t> m_mints{0};
    std::atomic<std::int64_t> m_cache_hits{0};
};

} // namespace captok
