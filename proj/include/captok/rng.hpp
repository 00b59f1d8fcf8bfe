#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <openssl/rand.h>

#include "captok/base64url.hpp"

namespace captok {

class Rng {
public:
    virtual ~Rng() = default;
    virtual void fill(std::uint8_t *buf, std::size_t len) = 0;

    std::vector<std::uint8_t> bytes(std::size_t len) {
        std::vector<std::uint8_t> v(len);
        fill(v.data(), v.size());
        return v;
    }

    // Unpadded base64url of `len` random bytes; used for jti and handles.
    std::string token(std::size_t len) {
        auto v = bytes(len);
        return b64url::encode(v);
    }
};

class SystemRng final : public Rng {
public:
    void fill(std::uint8_t *buf, std::size_t len) override {
        if (RAND_bytes(buf, static_cast<int>(len)) != 1) {
            throw std::runtime_error("RAND_bytes failed");
        }
    }
};

// Deterministic stream for reproducible simulated runs.
class SeededRng final : public Rng {
public:
    explicit SeededRng(std::uint64_t seed) : m_engine(seed) {}

    void fill(std::uint8_t *buf, std::size_t len) override {
        std::lock_guard<std::mutex> lock(m_mutex);
        std::size_t i = 0;
        while (i < len) {
            std::uint64_t w = m_engine();
            for (int b = 0; b < 8 && i < len; ++b, ++i) {
                buf[i] = static_cast<std::uint8_t>(w >> (8 * b));
            }
        }
    }

private:
    std::mutex m_mutex;
    std::mt19937_64 m_engine;
};

using RngPtr = std::shared_ptr<Rng>;

inline RngPtr system_rng() { return std::make_shared<SystemRng>(); }

} // namespace captok
