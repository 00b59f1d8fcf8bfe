#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "captok/base64url.hpp"
#include "captok/crypto.hpp"
#include "captok/errors.hpp"

namespace captok {

using json = nlohmann::json;

// Public half of one signing key. Verification never needs private material.
struct KeyRecord {
    std::string kid;
    crypto::Alg alg = crypto::Alg::es256;
    crypto::PkeyPtr key;
    crypto::PublicParams params;

    json to_jwk() const {
        json j;
        j["kid"] = kid;
        j["alg"] = crypto::to_string(alg);
        j["use"] = "sig";
        if (alg == crypto::Alg::es256) {
            j["kty"] = "EC";
            j["crv"] = "P-256";
            j["x"] = b64url::encode(params.x);
            j["y"] = b64url::encode(params.y);
        } else {
            j["kty"] = "OKP";
            j["crv"] = "Ed25519";
            j["x"] = b64url::encode(params.x);
        }
        return j;
    }

    static Result<KeyRecord> from_jwk(const json &j) {
        if (!j.is_object() || !j.contains("kid") || !j.contains("alg"))
            return Error{Err::malformed, "JWK missing kid or alg"};
        auto alg = crypto::alg_from_string(j["alg"].get<std::string>());
        if (!alg) return alg.error();
        KeyRecord rec;
        rec.kid = j["kid"].get<std::string>();
        rec.alg = alg.value();
        if (!j.contains("x")) return Error{Err::malformed, "JWK missing x"};
        auto x = b64url::decode(j["x"].get<std::string>());
        if (!x) return Error{Err::malformed, "bad JWK x"};
        rec.params.x = std::move(*x);
        if (rec.alg == crypto::Alg::es256) {
            if (!j.contains("y")) return Error{Err::malformed, "JWK missing y"};
            auto y = b64url::decode(j["y"].get<std::string>());
            if (!y) return Error{Err::malformed, "bad JWK y"};
            rec.params.y = std::move(*y);
        }
        auto key = crypto::public_key_from_params(rec.alg, rec.params);
        if (!key) return key.error();
        rec.key = std::move(key).value();
        return rec;
    }
};

// kid is a digest of the public parameters, so identical keys always get the
// same identifier and fresh keys get fresh ones.
inline std::string derive_kid(crypto::Alg alg, const crypto::PublicParams &params) {
    std::string material = crypto::to_string(alg);
    material.append(params.x.begin(), params.x.end());
    material.append(params.y.begin(), params.y.end());
    auto digest = crypto::sha256(material);
    return b64url::encode(digest).substr(0, 16);
}

// Key plus private half, as held by an issuer or written by keygen.
struct SigningKey {
    KeyRecord record;
    crypto::PkeyPtr priv;
};

inline Result<SigningKey> generate_signing_key(crypto::Alg alg) {
    auto key = crypto::generate_key(alg);
    if (!key) return key.error();
    auto params = crypto::public_params(alg, key.value());
    if (!params) return params.error();
    SigningKey sk;
    sk.record.alg = alg;
    sk.record.params = params.value();
    sk.record.kid = derive_kid(alg, params.value());
    sk.record.key = key.value();
    sk.priv = key.value();
    return sk;
}

inline Result<SigningKey> generate_signing_key(std::string_view alg_name) {
    auto alg = crypto::alg_from_string(alg_name);
    if (!alg) return alg.error();
    return generate_signing_key(alg.value());
}

class KeySet {
public:
    KeySet() = default;

    void add(KeyRecord rec) { m_keys.push_back(std::move(rec)); }

    const KeyRecord *find(std::string_view kid) const {
        for (const auto &k : m_keys) {
            if (k.kid == kid) return &k;
        }
        return nullptr;
    }

    bool remove(std::string_view kid) {
        for (auto it = m_keys.begin(); it != m_keys.end(); ++it) {
            if (it->kid == kid) {
                m_keys.erase(it);
                return true;
            }
        }
        return false;
    }

    std::size_t size() const { return m_keys.size(); }
    bool empty() const { return m_keys.empty(); }
    const std::vector<KeyRecord> &records() const { return m_keys; }

    json to_json() const {
        json keys = json::array();
        for (const auto &k : m_keys) keys.push_back(k.to_jwk());
        return json{{"keys", keys}};
    }

    static Result<KeySet> from_json(const json &j) {
        if (!j.is_object() || !j.contains("keys") || !j["keys"].is_array())
            return Error{Err::malformed, "key set needs a \"keys\" array"};
        KeySet set;
        for (const auto &jwk : j["keys"]) {
            auto rec = KeyRecord::from_jwk(jwk);
            if (!rec) return rec.error();
            if (set.find(rec.value().kid))
                return Error{Err::malformed, "duplicate kid " + rec.value().kid};
            set.add(std::move(rec).value());
        }
        return set;
    }

    static Result<KeySet> parse(std::string_view text) {
        auto j = json::parse(text, nullptr, false);
        if (j.is_discarded()) return Error{Err::malformed, "key set is not JSON"};
        return from_json(j);
    }

private:
    std::vector<KeyRecord> m_keys;
};

} // namespace captok
