#pragma once

// Shared test rig: a small LIGO-flavoured policy with one user directory,
// mirroring the kind of deployment the services are meant to run.

#include <memory>

#include "captok/clock.hpp"
#include "captok/issuer.hpp"
#include "captok/policy.hpp"
#include "captok/refresh_store.hpp"
#include "captok/rng.hpp"

namespace fixtures {

inline constexpr const char *kIssuerUrl = "https://issuer.test";
inline constexpr const char *kAudience = "data-gw";

// Low PBKDF2 iteration count keeps the randomized issuance suites fast.
inline constexpr int kTestIters = 64;

inline captok::Policy ligo_policy() {
    auto policy = captok::Policy::parse(R"([
      {
        "match": "group:LDGUsers",
        "grantable": ["read:/data/ligo/frames", "write:/store/user/{username}"],
        "max_access_lifetime": 600,
        "max_refresh_lifetime": 2592000,
        "audiences": ["data-gw", "other-service", "ANY"]
      },
      {
        "match": "user:carol",
        "grantable": ["read:/data/public"],
        "max_access_lifetime": 300,
        "max_refresh_lifetime": 86400,
        "audiences": ["data-gw"]
      },
      {
        "match": "group:Operators",
        "grantable": ["read:/", "write:/"],
        "max_access_lifetime": 600,
        "max_refresh_lifetime": 2592000,
        "audiences": ["data-gw", "ANY"]
      }
    ])");
    if (!policy.ok()) throw std::runtime_error(policy.error().message());
    return std::move(policy).value();
}

inline captok::UserDirectory test_users(captok::Rng &rng) {
    captok::UserDirectory dir;
    auto check = [](captok::Result<void> r) {
        if (!r.ok()) throw std::runtime_error(r.error().message());
    };
    check(dir.add_user("alice", "alice-secret", {"LDGUsers"}, rng, kTestIters));
    check(dir.add_user("bob", "bob-secret", {}, rng, kTestIters));
    check(dir.add_user("carol", "carol-secret", {"Astro"}, rng, kTestIters));
    check(dir.add_user("root-op", "root-secret", {"Operators"}, rng, kTestIters));
    return dir;
}

struct IssuerRig {
    std::shared_ptr<captok::SimClock> clock;
    std::shared_ptr<captok::Rng> rng;
    std::unique_ptr<captok::Issuer> issuer;
};

inline IssuerRig make_issuer(captok::IssuerConfig config = {}) {
    IssuerRig rig;
    rig.clock = std::make_shared<captok::SimClock>();
    rig.rng = std::make_shared<captok::SeededRng>(0xC0FFEE);
    config.issuer_url = kIssuerUrl;
    rig.issuer = std::make_unique<captok::Issuer>(
        std::move(config), ligo_policy(), test_users(*rig.rng),
        std::make_shared<captok::MemoryRefreshStore>(), rig.clock, rig.rng);
    return rig;
}

} // namespace fixtures
