#pragma once

#include <cstdint>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "captok/base64url.hpp"
#include "captok/crypto.hpp"
#include "captok/errors.hpp"
#include "captok/rng.hpp"

namespace captok {

// One stored refresh grant. Plaintext handles exist only in memory; at rest
// the whole entry list is sealed with AES-256-GCM.
struct VaultEntry {
    std::string user;
    std::string issuer;
    std::string handle;
    std::string scopes;
    // Audience the grant was issued for; empty means unrestricted metadata.
    std::string audience;
    std::int64_t expires_at = 0;

    json to_json(bool redact_handle = false) const {
        return json{{"user", user},
                    {"issuer", issuer},
                    {"handle", redact_handle ? "[redacted]" : handle},
                    {"scopes", scopes},
                    {"audience", audience},
                    {"expires_at", expires_at}};
    }
};

inline constexpr std::uint8_t kVaultFormatVersion = 1;

inline Result<void> write_vault_key(const std::string &key_path, Rng &rng) {
    auto key = rng.bytes(crypto::kAeadKeyLen);
    std::ofstream out(key_path, std::ios::trunc);
    if (!out) return Error{Err::io_error, "cannot write " + key_path};
    out << b64url::encode(key) << "\n";
    return {};
}

class Vault {
public:
    // The vault is locked until a valid key file is provided. A missing
    // vault file is an empty vault; a missing key file is an error.
    static Result<std::unique_ptr<Vault>> open(const std::string &vault_path,
                                               const std::string &key_path, RngPtr rng) {
        std::ifstream key_in(key_path);
        if (!key_in)
            return Error{Err::vault_locked, "no vault key at " + key_path};
        std::string key_text;
        std::getline(key_in, key_text);
        auto key = b64url::decode(key_text);
        if (!key || key->size() != crypto::kAeadKeyLen)
            return Error{Err::vault_locked, "vault key is not 32 bytes"};

        auto vault = std::unique_ptr<Vault>(new Vault);
        vault->m_path = vault_path;
        vault->m_key = std::move(*key);
        vault->m_rng = std::move(rng);

        std::ifstream in(vault_path, std::ios::binary);
        if (in) {
            std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(in)),
                                          std::istreambuf_iterator<char>());
            if (!raw.empty()) {
                if (raw[0] != kVaultFormatVersion)
                    return Error{Err::vault_corrupt, "unknown vault format version"};
                crypto::Bytes sealed(raw.begin() + 1, raw.end());
                char aad[1] = {static_cast<char>(kVaultFormatVersion)};
                auto plain = crypto::aead_open(vault->m_key, sealed, std::string_view(aad, 1));
                if (!plain) return Error{Err::vault_corrupt, plain.error().message()};
                auto j = json::parse(plain.value(), nullptr, false);
                if (j.is_discarded() || !j.is_array())
                    return Error{Err::vault_corrupt, "vault payload is not a JSON list"};
                for (const auto &ej : j) {
                    VaultEntry e;
                    e.user = ej.value("user", "");
                    e.issuer = ej.value("issuer", "");
                    e.handle = ej.value("handle", "");
                    e.scopes = ej.value("scopes", "");
                    e.audience = ej.value("audience", "");
                    e.expires_at = ej.value("expires_at", std::int64_t{0});
                    vault->m_entries.push_back(std::move(e));
                }
            }
        }
        return vault;
    }

    // Duplicate (user, issuer, scopes) replaces the prior entry.
    Result<void> store(const VaultEntry &entry) {
        std::lock_guard lock(m_mutex);
        for (auto &e : m_entries) {
            if (e.user == entry.user && e.issuer == entry.issuer && e.scopes == entry.scopes &&
                e.audience == entry.audience) {
                e = entry;
                return persist();
            }
        }
        m_entries.push_back(entry);
        return persist();
    }

    std::vector<VaultEntry> entries() const {
        std::lock_guard lock(m_mutex);
        return m_entries;
    }

    // Metadata only; handles never appear in listings.
    json listing() const {
        std::lock_guard lock(m_mutex);
        json out = json::array();
        for (const auto &e : m_entries) out.push_back(e.to_json(/*redact_handle=*/true));
        return out;
    }

    const std::string &path() const { return m_path; }

private:
    Vault() = default;

    Result<void> persist() {
        json j = json::array();
        for (const auto &e : m_entries) j.push_back(e.to_json());
        std::string plain = j.dump();
        auto iv = m_rng->bytes(crypto::kGcmIvLen);
        char aad[1] = {static_cast<char>(kVaultFormatVersion)};
        auto sealed = crypto::aead_seal(m_key, iv, plain, std::string_view(aad, 1));
        if (!sealed) return sealed.error();
        std::ofstream out(m_path, std::ios::binary | std::ios::trunc);
        if (!out) return Error{Err::io_error, "cannot write " + m_path};
        out.put(static_cast<char>(kVaultFormatVersion));
        out.write(reinterpret_cast<const char *>(sealed.value().data()),
                  static_cast<std::streamsize>(sealed.value().size()));
        return {};
    }

    std::string m_path;
    crypto::Bytes m_key;
    RngPtr m_rng;
    mutable std::mutex m_mutex;
    std::vector<VaultEntry> m_entries;
};

} // namespace captok
