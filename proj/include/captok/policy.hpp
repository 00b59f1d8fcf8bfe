#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "captok/authz.hpp"
#include "captok/crypto.hpp"
#include "captok/errors.hpp"
#include "captok/rng.hpp"
#include "captok/scope.hpp"

namespace captok {

// Usernames may appear inside scope template paths, so they must be safe as
// a single path segment.
inline bool is_legal_username(std::string_view name) {
    if (name.empty() || name.size() > 64) return false;
    for (char c : name) {
        bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                  c == '_' || c == '-';
        if (!ok) return false;
    }
    return true;
}

// Grantable scope atom with an optional "{username}" placeholder.
struct ScopeTemplate {
    Op op = Op::read;
    std::string path_template = "/";

    Result<Permission> expand(std::string_view username) const {
        std::string path = path_template;
        const std::string placeholder = "{username}";
        std::size_t pos;
        while ((pos = path.find(placeholder)) != std::string::npos) {
            path.replace(pos, placeholder.size(), username);
        }
        auto normalized = normalize_path(path);
        if (!normalized) return normalized.error();
        return Permission{op, std::move(normalized).value()};
    }

    std::string str() const { return std::string(to_string(op)) + ":" + path_template; }

    static Result<ScopeTemplate> parse(std::string_view s) {
        auto colon = s.find(':');
        if (colon == std::string_view::npos)
            return Error{Err::invalid_scope, "missing ':' in template"};
        auto op = op_from_string(s.substr(0, colon));
        if (!op) return op.error();
        ScopeTemplate t;
        t.op = op.value();
        t.path_template = std::string(s.substr(colon + 1));
        // must expand to a canonical path for every legal username
        auto probe = t.expand("probe-user");
        if (!probe) return probe.error();
        return t;
    }
};

enum class MatchKind { user, group };

struct PolicyRule {
    MatchKind kind = MatchKind::user;
    std::string name;
    std::vector<ScopeTemplate> grantable;
    std::int64_t max_access_lifetime = 600;
    std::int64_t max_refresh_lifetime = 30 * 86400;
    std::vector<std::string> audiences;

    bool matches(std::string_view sub, const std::vector<std::string> &groups) const {
        if (kind == MatchKind::user) return name == sub;
        return std::find(groups.begin(), groups.end(), name) != groups.end();
    }

    json to_json() const {
        json g = json::array();
        for (const auto &t : grantable) g.push_back(t.str());
        return json{{"match", (kind == MatchKind::user ? "user:" : "group:") + name},
                    {"grantable", g},
                    {"max_access_lifetime", max_access_lifetime},
                    {"max_refresh_lifetime", max_refresh_lifetime},
                    {"audiences", audiences}};
    }

    static Result<PolicyRule> from_json(const json &j) {
        if (!j.is_object() || !j.contains("match") || !j.contains("grantable"))
            return Error{Err::config_error, "rule needs match and grantable"};
        PolicyRule rule;
        std::string match = j["match"].get<std::string>();
        if (match.starts_with("user:")) {
            rule.kind = MatchKind::user;
            rule.name = match.substr(5);
        } else if (match.starts_with("group:")) {
            rule.kind = MatchKind::group;
            rule.name = match.substr(6);
        } else {
            return Error{Err::config_error, "match must be user:<name> or group:<name>"};
        }
        for (const auto &g : j["grantable"]) {
            auto t = ScopeTemplate::parse(g.get<std::string>());
            if (!t) return Error{Err::config_error, "bad template: " + t.error().message()};
            rule.grantable.push_back(std::move(t).value());
        }
        rule.max_access_lifetime = j.value("max_access_lifetime", std::int64_t{600});
        rule.max_refresh_lifetime = j.value("max_refresh_lifetime", std::int64_t{30 * 86400});
        if (rule.max_access_lifetime <= 0 || rule.max_refresh_lifetime <= 0 ||
            rule.max_access_lifetime > rule.max_refresh_lifetime)
            return Error{Err::config_error,
                         "need 0 < max_access_lifetime <= max_refresh_lifetime"};
        if (j.contains("audiences")) {
            for (const auto &a : j["audiences"]) rule.audiences.push_back(a.get<std::string>());
        }
        return rule;
    }
};

struct PolicyDecision {
    std::vector<Permission> granted;
    std::int64_t max_access_lifetime = 0;
    std::int64_t max_refresh_lifetime = 0;
};

class Policy {
public:
    Policy() = default;
    explicit Policy(std::vector<PolicyRule> rules) : m_rules(std::move(rules)) {}

    const std::vector<PolicyRule> &rules() const { return m_rules; }

    // Union of every rule matching the user or one of their groups;
    // requested scopes must sit inside the expanded grantable set and the
    // audience must be named by a matching rule.
    Result<PolicyDecision> evaluate(std::string_view sub, const std::vector<std::string> &groups,
                                    const std::vector<Permission> &requested,
                                    std::string_view audience) const {
        std::vector<const PolicyRule *> matching;
        for (const auto &r : m_rules) {
            if (r.matches(sub, groups)) matching.push_back(&r);
        }
        if (matching.empty())
            return Error{Err::no_matching_rule, std::string(sub)};

        bool audience_ok = false;
        PolicyDecision decision;
        std::vector<Permission> grantable;
        for (const auto *r : matching) {
            for (const auto &t : r->grantable) {
                auto p = t.expand(sub);
                if (!p) return p.error();
                grantable.push_back(std::move(p).value());
            }
            if (std::find(r->audiences.begin(), r->audiences.end(), audience) !=
                r->audiences.end())
                audience_ok = true;
            decision.max_access_lifetime =
                std::max(decision.max_access_lifetime, r->max_access_lifetime);
            decision.max_refresh_lifetime =
                std::max(decision.max_refresh_lifetime, r->max_refresh_lifetime);
        }
        if (!audience_ok)
            return Error{Err::audience_not_permitted, std::string(audience)};

        auto granted = attenuate(grantable, requested);
        if (!granted) return granted.error();
        decision.granted = std::move(granted).value();
        return decision;
    }

    json to_json() const {
        json j = json::array();
        for (const auto &r : m_rules) j.push_back(r.to_json());
        return j;
    }

    static Result<Policy> from_json(const json &j) {
        if (!j.is_array()) return Error{Err::config_error, "policy file must be a JSON list"};
        std::vector<PolicyRule> rules;
        for (const auto &rj : j) {
            auto r = PolicyRule::from_json(rj);
            if (!r) return r.error();
            rules.push_back(std::move(r).value());
        }
        return Policy(std::move(rules));
    }

    static Result<Policy> parse(std::string_view text) {
        auto j = json::parse(text, nullptr, false);
        if (j.is_discarded()) return Error{Err::config_error, "policy file is not JSON"};
        return from_json(j);
    }

private:
    std::vector<PolicyRule> m_rules;
};

// Desk-scale login: usernames with salted PBKDF2 digests and group lists.
class UserDirectory {
public:
    struct UserRecord {
        std::string username;
        crypto::Bytes salt;
        crypto::Bytes digest;
        int iterations = 10000;
        std::vector<std::string> groups;
    };

    Result<void> add_user(std::string_view username, std::string_view secret,
                          std::vector<std::string> groups, Rng &rng, int iterations = 10000) {
        if (!is_legal_username(username))
            return Error{Err::config_error, "illegal username"};
        if (find(username)) return Error{Err::already_exists, std::string(username)};
        UserRecord rec;
        rec.username = std::string(username);
        rec.salt = rng.bytes(16);
        rec.iterations = iterations;
        rec.digest = crypto::pbkdf2_sha256(secret, rec.salt, iterations);
        rec.groups = std::move(groups);
        m_users.push_back(std::move(rec));
        return {};
    }

    // Returns the user's groups on success.
    Result<std::vector<std::string>> authenticate(std::string_view username,
                                                  std::string_view secret) const {
        const UserRecord *rec = find(username);
        if (!rec) return Error{Err::authentication_failed, "unknown user or bad secret"};
        auto digest = crypto::pbkdf2_sha256(secret, rec->salt, rec->iterations);
        if (!crypto::constant_time_equal(digest, rec->digest))
            return Error{Err::authentication_failed, "unknown user or bad secret"};
        return rec->groups;
    }

    const UserRecord *find(std::string_view username) const {
        for (const auto &u : m_users) {
            if (u.username == username) return &u;
        }
        return nullptr;
    }

    std::size_t size() const { return m_users.size(); }

    json to_json() const {
        json users = json::array();
        for (const auto &u : m_users) {
            users.push_back({{"username", u.username},
                             {"salt", b64url::encode(u.salt)},
                             {"digest", b64url::encode(u.digest)},
                             {"iterations", u.iterations},
                             {"groups", u.groups}});
        }
        return json{{"users", users}};
    }

    static Result<UserDirectory> from_json(const json &j) {
        if (!j.is_object() || !j.contains("users"))
            return Error{Err::config_error, "user file needs a \"users\" array"};
        UserDirectory dir;
        for (const auto &uj : j["users"]) {
            UserRecord rec;
            rec.username = uj.value("username", "");
            if (!is_legal_username(rec.username))
                return Error{Err::config_error, "illegal username in user file"};
            auto salt = b64url::decode(uj.value("salt", ""));
            auto digest = b64url::decode(uj.value("digest", ""));
            if (!salt || !digest) return Error{Err::config_error, "bad salt or digest"};
            rec.salt = std::move(*salt);
            rec.digest = std::move(*digest);
            rec.iterations = uj.value("iterations", 10000);
            if (uj.contains("groups")) {
                for (const auto &g : uj["groups"]) rec.groups.push_back(g.get<std::string>());
            }
            dir.m_users.push_back(std::move(rec));
        }
        return dir;
    }

    static Result<UserDirectory> parse(std::string_view text) {
        auto j = json::parse(text, nullptr, false);
        if (j.is_discarded()) return Error{Err::config_error, "user file is not JSON"};
        return from_json(j);
    }

private:
    std::vector<UserRecord> m_users;
};

} // namespace captok
