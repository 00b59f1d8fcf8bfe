#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <thread>

namespace captok {

// All times in the system are integer seconds since the Unix epoch.
class Clock {
public:
    virtual ~Clock() = default;
    virtual std::int64_t now() const = 0;
    // Blocks until `t` in real mode; simulated clocks jump instead.
    virtual void wait_until(std::int64_t t) = 0;
};

class SystemClock final : public Clock {
public:
    std::int64_t now() const override {
        return std::chrono::duration_cast<std::chrono::seconds>(
                   std::chrono::system_clock::now().time_since_epoch())
            .count();
    }

    void wait_until(std::int64_t t) override {
        while (now() < t) {
            std::this_thread::sleep_for(std::chrono::milliseconds(50));
        }
    }
};

// Deterministic clock for tests and simulated workflow runs.
class SimClock final : public Clock {
public:
    explicit SimClock(std::int64_t start = 1700000000) : m_now(start) {}

    std::int64_t now() const override { return m_now.load(); }

    void wait_until(std::int64_t t) override { advance_to(t); }

    void advance_to(std::int64_t t) {
        std::int64_t cur = m_now.load();
        while (cur < t && !m_now.compare_exchange_weak(cur, t)) {
        }
    }

    void advance_by(std::int64_t dt) { m_now.fetch_add(dt); }

private:
    std::atomic<std::int64_t> m_now;
};

using ClockPtr = std::shared_ptr<Clock>;

inline ClockPtr system_clock() { return std::make_shared<SystemClock>(); }

} // namespace captok
