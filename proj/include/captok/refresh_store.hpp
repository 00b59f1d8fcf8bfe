#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "captok/errors.hpp"
#include "captok/scope.hpp"

namespace captok {

// Server-side long-lived grant. The handle is the refresh token value the
// client holds; it never appears inside any minted access token.
struct RefreshRecord {
    std::string handle;
    std::string sub;
    std::vector<std::string> groups;
    std::vector<Permission> scopes;
    std::vector<std::string> audiences;
    std::int64_t issued_at = 0;
    std::int64_t expires_at = 0;
    std::int64_t max_access_lifetime = 600;
    bool revoked = false;

    json to_json() const {
        return json{{"handle", handle},
                    {"sub", sub},
                    {"groups", groups},
                    {"scope", print_scope(scopes)},
                    {"audiences", audiences},
                    {"issued_at", issued_at},
                    {"expires_at", expires_at},
                    {"max_access_lifetime", max_access_lifetime},
                    {"revoked", revoked}};
    }

    static Result<RefreshRecord> from_json(const json &j) {
        RefreshRecord r;
        r.handle = j.value("handle", "");
        r.sub = j.value("sub", "");
        if (j.contains("groups")) {
            for (const auto &g : j["groups"]) r.groups.push_back(g.get<std::string>());
        }
        auto scopes = parse_scope(j.value("scope", ""));
        if (!scopes) return scopes.error();
        r.scopes = std::move(scopes).value();
        if (j.contains("audiences")) {
            for (const auto &a : j["audiences"]) r.audiences.push_back(a.get<std::string>());
        }
        r.issued_at = j.value("issued_at", std::int64_t{0});
        r.expires_at = j.value("expires_at", std::int64_t{0});
        r.max_access_lifetime = j.value("max_access_lifetime", std::int64_t{600});
        r.revoked = j.value("revoked", false);
        if (r.handle.empty()) return Error{Err::malformed, "record without handle"};
        return r;
    }
};

class RefreshStore {
public:
    virtual ~RefreshStore() = default;
    virtual Result<void> put(const RefreshRecord &rec) = 0;
    virtual std::optional<RefreshRecord> get(const std::string &handle) const = 0;
    virtual Result<void> mark_revoked(const std::string &handle) = 0;
    virtual std::size_t size() const = 0;
};

class MemoryRefreshStore final : public RefreshStore {
public:
    Result<void> put(const RefreshRecord &rec) override {
        std::lock_guard lock(m_mutex);
        m_records[rec.handle] = rec;
        return {};
    }

    std::optional<RefreshRecord> get(const std::string &handle) const override {
        std::lock_guard lock(m_mutex);
        auto it = m_records.find(handle);
        if (it == m_records.end()) return std::nullopt;
        return it->second;
    }

    Result<void> mark_revoked(const std::string &handle) override {
        std::lock_guard lock(m_mutex);
        auto it = m_records.find(handle);
        if (it != m_records.end()) it->second.revoked = true;
        return {};
    }

    std::size_t size() const override {
        std::lock_guard lock(m_mutex);
        return m_records.size();
    }

private:
    mutable std::mutex m_mutex;
    std::map<std::string, RefreshRecord> m_records;
};

// Single-file JSON store. Writers hold an exclusive flock while the whole
// document is rewritten; readers work from the in-memory map.
class FileRefreshStore final : public RefreshStore {
public:
    static Result<std::unique_ptr<FileRefreshStore>> open(const std::string &path) {
        auto store = std::unique_ptr<FileRefreshStore>(new FileRefreshStore(path));
        std::ifstream in(path);
        if (in) {
            std::string text((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
            if (!text.empty()) {
                auto j = json::parse(text, nullptr, false);
                if (j.is_discarded() || !j.is_array())
                    return Error{Err::io_error, "refresh store is not a JSON list: " + path};
                for (const auto &rj : j) {
                    auto rec = RefreshRecord::from_json(rj);
                    if (!rec) return rec.error();
                    store->m_records[rec.value().handle] = std::move(rec).value();
                }
            }
        }
        return store;
    }

    Result<void> put(const RefreshRecord &rec) override {
        std::lock_guard lock(m_mutex);
        m_records[rec.handle] = rec;
        return flush();
    }

    std::optional<RefreshRecord> get(const std::string &handle) const override {
        std::lock_guard lock(m_mutex);
        auto it = m_records.find(handle);
        if (it == m_records.end()) return std::nullopt;
        return it->second;
    }

    Result<void> mark_revoked(const std::string &handle) override {
        std::lock_guard lock(m_mutex);
        auto it = m_records.find(handle);
        if (it == m_records.end()) return {};
        it->second.revoked = true;
        return flush();
    }

    std::size_t size() const override {
        std::lock_guard lock(m_mutex);
        return m_records.size();
    }

private:
    explicit FileRefreshStore(std::string path) : m_path(std::move(path)) {}

    Result<void> flush() {
        json j = json::array();
        for (const auto &[handle, rec] : m_records) {
            (void)handle;
            j.push_back(rec.to_json());
        }
        std::string text = j.dump(2);

        int fd = ::open(m_path.c_str(), O_WRONLY | O_CREAT, 0600);
        if (fd < 0) return Error{Err::io_error, "cannot open " + m_path};
        if (::flock(fd, LOCK_EX) != 0) {
            ::close(fd);
            return Error{Err::io_error, "cannot lock " + m_path};
        }
        bool ok = ::ftruncate(fd, 0) == 0 &&
                  ::write(fd, text.data(), text.size()) == static_cast<ssize_t>(text.size());
        ::flock(fd, LOCK_UN);
        ::close(fd);
        if (!ok) return Error{Err::io_error, "short write to " + m_path};
        return {};
    }

    std::string m_path;
    mutable std::mutex m_mutex;
    std::map<std::string, RefreshRecord> m_records;
};

} // namespace captok
