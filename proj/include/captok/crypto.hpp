#pragma once

#include <cstdint>
#include <cstring>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/bn.h>
#include <openssl/core_names.h>
#include <openssl/ec.h>
#include <openssl/ecdsa.h>
#include <openssl/evp.h>
#include <openssl/param_build.h>
#include <openssl/pem.h>
#include <openssl/sha.h>

#include "captok/errors.hpp"

namespace captok::crypto {

using Bytes = std::vector<std::uint8_t>;

// Asymmetric only. "none" and HMAC-family identifiers are rejected at the
// call sites that map names to algorithms.
enum class Alg { es256, eddsa };

inline const char *to_string(Alg a) { return a == Alg::es256 ? "ES256" : "EdDSA"; }

inline Result<Alg> alg_from_string(std::string_view s) {
    if (s == "ES256") return Alg::es256;
    if (s == "EdDSA") return Alg::eddsa;
    if (s == "none" || s == "NONE")
        return Error{Err::unsupported_algorithm, "unsigned tokens are not accepted"};
    if (s.starts_with("HS"))
        return Error{Err::unsupported_algorithm,
                     "symmetric algorithms defeat decentralized validation"};
    return Error{Err::unsupported_algorithm, std::string(s)};
}

using PkeyPtr = std::shared_ptr<EVP_PKEY>;

inline PkeyPtr wrap_pkey(EVP_PKEY *p) { return PkeyPtr(p, EVP_PKEY_free); }

inline Bytes sha256(const void *data, std::size_t len) {
    Bytes out(SHA256_DIGEST_LENGTH);
    SHA256(static_cast<const unsigned char *>(data), len, out.data());
    return out;
}

inline Bytes sha256(std::string_view s) { return sha256(s.data(), s.size()); }

inline Result<PkeyPtr> generate_key(Alg alg) {
    EVP_PKEY *pkey = nullptr;
    if (alg == Alg::es256) {
        pkey = EVP_PKEY_Q_keygen(nullptr, nullptr, "EC", "P-256");
    } else {
        pkey = EVP_PKEY_Q_keygen(nullptr, nullptr, "ED25519");
    }
    if (!pkey) return Error{Err::io_error, "key generation failed"};
    return wrap_pkey(pkey);
}

namespace detail {

// JWS ES256 signatures are raw r||s (64 bytes); OpenSSL works in DER.
inline Result<Bytes> ecdsa_der_to_raw(const Bytes &der) {
    const unsigned char *p = der.data();
    ECDSA_SIG *sig = d2i_ECDSA_SIG(nullptr, &p, static_cast<long>(der.size()));
    if (!sig) return Error{Err::io_error, "bad DER signature"};
    Bytes raw(64);
    const BIGNUM *r = ECDSA_SIG_get0_r(sig);
    const BIGNUM *s = ECDSA_SIG_get0_s(sig);
    int ok = BN_bn2binpad(r, raw.data(), 32) == 32 && BN_bn2binpad(s, raw.data() + 32, 32) == 32;
    ECDSA_SIG_free(sig);
    if (!ok) return Error{Err::io_error, "signature component too large"};
    return raw;
}

inline Result<Bytes> ecdsa_raw_to_der(const std::uint8_t *raw, std::size_t len) {
    if (len != 64) return Error{Err::signature_invalid, "bad signature length"};
    ECDSA_SIG *sig = ECDSA_SIG_new();
    BIGNUM *r = BN_bin2bn(raw, 32, nullptr);
    BIGNUM *s = BN_bin2bn(raw + 32, 32, nullptr);
    if (!sig || !r || !s || ECDSA_SIG_set0(sig, r, s) != 1) {
        BN_free(r);
        BN_free(s);
        ECDSA_SIG_free(sig);
        return Error{Err::io_error, "signature assembly failed"};
    }
    int der_len = i2d_ECDSA_SIG(sig, nullptr);
    Bytes der(static_cast<std::size_t>(der_len));
    unsigned char *out = der.data();
    i2d_ECDSA_SIG(sig, &out);
    ECDSA_SIG_free(sig);
    return der;
}

} // namespace detail

inline Result<Bytes> sign(Alg alg, const PkeyPtr &key, std::string_view data) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    const EVP_MD *md = alg == Alg::es256 ? EVP_sha256() : nullptr;
    if (EVP_DigestSignInit(ctx.get(), nullptr, md, nullptr, key.get()) != 1)
        return Error{Err::io_error, "sign init failed"};
    std::size_t len = 0;
    const auto *p = reinterpret_cast<const unsigned char *>(data.data());
    if (EVP_DigestSign(ctx.get(), nullptr, &len, p, data.size()) != 1)
        return Error{Err::io_error, "sign sizing failed"};
    Bytes sig(len);
    if (EVP_DigestSign(ctx.get(), sig.data(), &len, p, data.size()) != 1)
        return Error{Err::io_error, "sign failed"};
    sig.resize(len);
    if (alg == Alg::es256) return detail::ecdsa_der_to_raw(sig);
    return sig;
}

inline bool verify(Alg alg, const PkeyPtr &key, std::string_view data, const Bytes &sig) {
    Bytes der;
    const Bytes *wire = &sig;
    if (alg == Alg::es256) {
        auto converted = detail::ecdsa_raw_to_der(sig.data(), sig.size());
        if (!converted) return false;
        der = std::move(converted).value();
        wire = &der;
    } else if (sig.size() != 64) {
        return false;
    }
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    const EVP_MD *md = alg == Alg::es256 ? EVP_sha256() : nullptr;
    if (EVP_DigestVerifyInit(ctx.get(), nullptr, md, nullptr, key.get()) != 1) return false;
    const auto *p = reinterpret_cast<const unsigned char *>(data.data());
    return EVP_DigestVerify(ctx.get(), wire->data(), wire->size(), p, data.size()) == 1;
}

// Public parameters in JWK layout: ES256 carries x and y, Ed25519 just x.
struct PublicParams {
    Bytes x;
    Bytes y;
};

inline Result<PublicParams> public_params(Alg alg, const PkeyPtr &key) {
    PublicParams out;
    if (alg == Alg::es256) {
        BIGNUM *x = nullptr, *y = nullptr;
        if (EVP_PKEY_get_bn_param(key.get(), OSSL_PKEY_PARAM_EC_PUB_X, &x) != 1 ||
            EVP_PKEY_get_bn_param(key.get(), OSSL_PKEY_PARAM_EC_PUB_Y, &y) != 1) {
            BN_free(x);
            return Error{Err::io_error, "cannot extract EC point"};
        }
        out.x.resize(32);
        out.y.resize(32);
        int ok = BN_bn2binpad(x, out.x.data(), 32) == 32 && BN_bn2binpad(y, out.y.data(), 32) == 32;
        BN_free(x);
        BN_free(y);
        if (!ok) return Error{Err::io_error, "bad EC point size"};
    } else {
        std::size_t len = 0;
        EVP_PKEY_get_raw_public_key(key.get(), nullptr, &len);
        out.x.resize(len);
        if (EVP_PKEY_get_raw_public_key(key.get(), out.x.data(), &len) != 1)
            return Error{Err::io_error, "cannot extract raw public key"};
    }
    return out;
}

inline Result<PkeyPtr> public_key_from_params(Alg alg, const PublicParams &params) {
    if (alg == Alg::eddsa) {
        EVP_PKEY *pkey = EVP_PKEY_new_raw_public_key(EVP_PKEY_ED25519, nullptr, params.x.data(),
                                                     params.x.size());
        if (!pkey) return Error{Err::malformed, "bad Ed25519 public key"};
        return wrap_pkey(pkey);
    }
    if (params.x.size() != 32 || params.y.size() != 32)
        return Error{Err::malformed, "bad EC coordinate size"};
    Bytes point(65);
    point[0] = 0x04;
    std::memcpy(point.data() + 1, params.x.data(), 32);
    std::memcpy(point.data() + 33, params.y.data(), 32);

    OSSL_PARAM_BLD *bld = OSSL_PARAM_BLD_new();
    OSSL_PARAM_BLD_push_utf8_string(bld, OSSL_PKEY_PARAM_GROUP_NAME, "P-256", 0);
    OSSL_PARAM_BLD_push_octet_string(bld, OSSL_PKEY_PARAM_PUB_KEY, point.data(), point.size());
    OSSL_PARAM *ossl_params = OSSL_PARAM_BLD_to_param(bld);
    OSSL_PARAM_BLD_free(bld);

    EVP_PKEY_CTX *pctx = EVP_PKEY_CTX_new_from_name(nullptr, "EC", nullptr);
    EVP_PKEY *pkey = nullptr;
    int rc = EVP_PKEY_fromdata_init(pctx) == 1 &&
             EVP_PKEY_fromdata(pctx, &pkey, EVP_PKEY_PUBLIC_KEY, ossl_params) == 1;
    EVP_PKEY_CTX_free(pctx);
    OSSL_PARAM_free(ossl_params);
    if (!rc || !pkey) return Error{Err::malformed, "bad EC public key"};
    return wrap_pkey(pkey);
}

inline Result<std::string> private_key_to_pem(const PkeyPtr &key) {
    std::unique_ptr<BIO, decltype(&BIO_free)> bio(BIO_new(BIO_s_mem()), BIO_free);
    if (PEM_write_bio_PKCS8PrivateKey(bio.get(), key.get(), nullptr, nullptr, 0, nullptr,
                                      nullptr) != 1)
        return Error{Err::io_error, "PEM write failed"};
    char *data = nullptr;
    long len = BIO_get_mem_data(bio.get(), &data);
    return std::string(data, static_cast<std::size_t>(len));
}

inline Result<PkeyPtr> private_key_from_pem(std::string_view pem) {
    std::unique_ptr<BIO, decltype(&BIO_free)> bio(
        BIO_new_mem_buf(pem.data(), static_cast<int>(pem.size())), BIO_free);
    EVP_PKEY *pkey = PEM_read_bio_PrivateKey(bio.get(), nullptr, nullptr, nullptr);
    if (!pkey) return Error{Err::malformed, "bad PEM private key"};
    return wrap_pkey(pkey);
}

// AES-256-GCM; output is iv || ciphertext || tag.
inline constexpr std::size_t kGcmIvLen = 12;
inline constexpr std::size_t kGcmTagLen = 16;
inline constexpr std::size_t kAeadKeyLen = 32;

inline Result<Bytes> aead_seal(const Bytes &key, const Bytes &iv, std::string_view plaintext,
                               std::string_view aad) {
    if (key.size() != kAeadKeyLen || iv.size() != kGcmIvLen)
        return Error{Err::config_error, "bad AEAD key or IV size"};
    std::unique_ptr<EVP_CIPHER_CTX, decltype(&EVP_CIPHER_CTX_free)> ctx(EVP_CIPHER_CTX_new(),
                                                                        EVP_CIPHER_CTX_free);
    if (EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.data(), iv.data()) != 1)
        return Error{Err::io_error, "encrypt init failed"};
    int outl = 0;
    if (!aad.empty() &&
        EVP_EncryptUpdate(ctx.get(), nullptr, &outl,
                          reinterpret_cast<const unsigned char *>(aad.data()),
                          static_cast<int>(aad.size())) != 1)
        return Error{Err::io_error, "aad failed"};
    Bytes out(kGcmIvLen + plaintext.size() + kGcmTagLen);
    std::memcpy(out.data(), iv.data(), kGcmIvLen);
    if (EVP_EncryptUpdate(ctx.get(), out.data() + kGcmIvLen, &outl,
                          reinterpret_cast<const unsigned char *>(plaintext.data()),
                          static_cast<int>(plaintext.size())) != 1)
        return Error{Err::io_error, "encrypt failed"};
    int tmp = 0;
    if (EVP_EncryptFinal_ex(ctx.get(), out.data() + kGcmIvLen + outl, &tmp) != 1)
        return Error{Err::io_error, "encrypt final failed"};
    if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, kGcmTagLen,
                            out.data() + kGcmIvLen + plaintext.size()) != 1)
        return Error{Err::io_error, "tag failed"};
    return out;
}

inline Result<std::string> aead_open(const Bytes &key, const Bytes &sealed, std::string_view aad) {
    if (key.size() != kAeadKeyLen) return Error{Err::config_error, "bad AEAD key size"};
    if (sealed.size() < kGcmIvLen + kGcmTagLen) return Error{Err::vault_corrupt, "truncated"};
    const std::uint8_t *iv = sealed.data();
    const std::uint8_t *ct = sealed.data() + kGcmIvLen;
    std::size_t ct_len = sealed.size() - kGcmIvLen - kGcmTagLen;
    const std::uint8_t *tag = sealed.data() + kGcmIvLen + ct_len;

    std::unique_ptr<EVP_CIPHER_CTX, decltype(&EVP_CIPHER_CTX_free)> ctx(EVP_CIPHER_CTX_new(),
                                                                        EVP_CIPHER_CTX_free);
    if (EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.data(), iv) != 1)
        return Error{Err::io_error, "decrypt init failed"};
    int outl = 0;
    if (!aad.empty() &&
        EVP_DecryptUpdate(ctx.get(), nullptr, &outl,
                          reinterpret_cast<const unsigned char *>(aad.data()),
                          static_cast<int>(aad.size())) != 1)
        return Error{Err::io_error, "aad failed"};
    std::string plain(ct_len, '\0');
    if (ct_len > 0 &&
        EVP_DecryptUpdate(ctx.get(), reinterpret_cast<unsigned char *>(plain.data()), &outl, ct,
                          static_cast<int>(ct_len)) != 1)
        return Error{Err::vault_corrupt, "decrypt failed"};
    if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, kGcmTagLen,
                            const_cast<std::uint8_t *>(tag)) != 1)
        return Error{Err::io_error, "set tag failed"};
    int tmp = 0;
    if (EVP_DecryptFinal_ex(ctx.get(), nullptr, &tmp) != 1)
        return Error{Err::vault_corrupt, "authentication failed"};
    return plain;
}

inline Bytes pbkdf2_sha256(std::string_view secret, const Bytes &salt, int iters,
                           std::size_t out_len = 32) {
    Bytes out(out_len);
    PKCS5_PBKDF2_HMAC(secret.data(), static_cast<int>(secret.size()), salt.data(),
                      static_cast<int>(salt.size()), iters, EVP_sha256(),
                      static_cast<int>(out_len), out.data());
    return out;
}

inline bool constant_time_equal(const Bytes &a, const Bytes &b) {
    if (a.size() != b.size()) return false;
    return CRYPTO_memcmp(a.data(), b.data(), a.size()) == 0;
}

} // namespace captok::crypto
