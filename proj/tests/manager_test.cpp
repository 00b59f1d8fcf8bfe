#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "captok/manager_http.hpp"
#include "captok/token_manager.hpp"
#include "captok/vault.hpp"
#include "support/fixtures.hpp"

using namespace captok;
namespace fs = std::filesystem;

namespace {

std::atomic<int> g_mgr_counter{0};

struct ManagerRig {
    fixtures::IssuerRig issuer;
    fs::path dir;
    std::unique_ptr<Vault> vault;
    std::unique_ptr<InProcessIssuer> api;
    std::unique_ptr<CountingIssuerApi> counting;
    std::unique_ptr<OutageIssuerApi> outage;
    std::unique_ptr<TokenManager> manager;
    std::string handle;

    ManagerRig() = default;
    ManagerRig(ManagerRig &&) = default;
    ManagerRig &operator=(ManagerRig &&) = default;

    ~ManagerRig() {
        std::error_code ec;
        if (!dir.empty()) fs::remove_all(dir, ec);
    }
};

ManagerRig make_manager(ManagerConfig config = {}) {
    ManagerRig rig;
    rig.issuer = fixtures::make_issuer();
    rig.dir = fs::temp_directory_path() /
              ("captok-mgr-" + std::to_string(::getpid()) + "-" +
               std::to_string(g_mgr_counter.fetch_add(1)));
    fs::create_directories(rig.dir);

    auto key_path = (rig.dir / "vault.key").string();
    REQUIRE(write_vault_key(key_path, *rig.issuer.rng).ok());
    auto vault = Vault::open((rig.dir / "vault.bin").string(), key_path, rig.issuer.rng);
    REQUIRE(vault.ok());
    rig.vault = std::move(vault).value();

    rig.api = std::make_unique<InProcessIssuer>(*rig.issuer.issuer);
    rig.counting = std::make_unique<CountingIssuerApi>(*rig.api);
    rig.outage = std::make_unique<OutageIssuerApi>(*rig.counting, rig.issuer.clock);

    config.user = "alice";
    config.issuer_url = fixtures::kIssuerUrl;
    rig.manager =
        std::make_unique<TokenManager>(config, *rig.vault, *rig.outage, rig.issuer.clock);

    auto grant = rig.issuer.issuer->grant_refresh(
        "alice", "alice-secret", "read:/data/ligo/frames write:/store/user/alice", "data-gw");
    REQUIRE(grant.ok());
    rig.handle = grant.value().refresh_token;
    REQUIRE(rig.manager
                ->store_refresh("alice", fixtures::kIssuerUrl, rig.handle,
                                grant.value().scope,
                                rig.issuer.clock->now() + grant.value().expires_in)
                .ok());
    return rig;
}

TokenRequest stage_in_request(const std::string &job = "job-1",
                              const std::string &scope = "read:/data/ligo/frames") {
    TokenRequest req;
    req.job_id = job;
    req.phase = JobPhase::stage_in;
    req.scopes = parse_scope(scope).value();
    req.audience = "data-gw";
    return req;
}

} // namespace

TEST_CASE("vault requires a provisioned key") {
    auto rng = std::make_shared<SeededRng>(1);
    auto dir = fs::temp_directory_path() / "captok-vault-locked";
    fs::create_directories(dir);
    auto missing = Vault::open((dir / "v.bin").string(), (dir / "no-key").string(), rng);
    CHECK(missing.code() == Err::vault_locked);
    fs::remove_all(dir);
}

TEST_CASE("vault hides handles at rest and in listings") {
    auto rig = make_manager();

    // listings redact the handle but keep the metadata
    auto listing = rig.manager->vault_listing();
    REQUIRE(listing.size() == 1);
    CHECK(listing[0]["user"] == "alice");
    CHECK(listing[0]["handle"] == "[redacted]");
    CHECK(listing[0]["scopes"] == "read:/data/ligo/frames write:/store/user/alice");

    // the ciphertext never contains the handle nor any long substring of it
    std::ifstream in(rig.dir / "vault.bin", std::ios::binary);
    std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    REQUIRE(raw.size() > 16);
    CHECK(raw[0] == 1); // format version byte
    CHECK(raw.find(rig.handle) == std::string::npos);
    for (std::size_t i = 0; i + 8 <= rig.handle.size(); i += 4) {
        CHECK(raw.find(rig.handle.substr(i, 8)) == std::string::npos);
    }

    // round trip through a reopen, then tamper detection
    auto reopened = Vault::open((rig.dir / "vault.bin").string(),
                                (rig.dir / "vault.key").string(), rig.issuer.rng);
    REQUIRE(reopened.ok());
    REQUIRE(reopened.value()->entries().size() == 1);
    CHECK(reopened.value()->entries()[0].handle == rig.handle);

    std::string corrupted = raw;
    corrupted[corrupted.size() / 2] ^= 0x40;
    {
        std::ofstream out(rig.dir / "vault.bin", std::ios::binary | std::ios::trunc);
        out << corrupted;
    }
    auto bad = Vault::open((rig.dir / "vault.bin").string(), (rig.dir / "vault.key").string(),
                           rig.issuer.rng);
    CHECK(bad.code() == Err::vault_corrupt);
}

TEST_CASE("duplicate vault entries replace prior grants") {
    auto rig = make_manager();
    auto entries = rig.vault->entries();
    REQUIRE(entries.size() == 1);
    REQUIRE(rig.manager
                ->store_refresh("alice", fixtures::kIssuerUrl, "new-handle-value",
                                entries[0].scopes, entries[0].expires_at + 100)
                .ok());
    auto after = rig.vault->entries();
    REQUIRE(after.size() == 1);
    CHECK(after[0].handle == "new-handle-value");
}

TEST_CASE("get_access mints, caches and re-mints at the margin") {
    auto rig = make_manager();
    auto t0 = rig.issuer.clock->now();

    // t=0: first request mints
    auto first = rig.manager->get_access(stage_in_request());
    REQUIRE(first.ok());
    CHECK(rig.manager->mints() == 1);
    CHECK(first.value().expires_at == t0 + 600);
    CHECK(first.value().scope == "read:/data/ligo/frames");

    // t=500: still fresh, served from cache
    rig.issuer.clock->advance_to(t0 + 500);
    auto second = rig.manager->get_access(stage_in_request("job-2"));
    REQUIRE(second.ok());
    CHECK(second.value().token == first.value().token);
    CHECK(rig.manager->mints() == 1);
    CHECK(rig.manager->cache_hits() == 1);

    // t=560: inside the 60 s margin, mints anew
    rig.issuer.clock->advance_to(t0 + 560);
    auto third = rig.manager->get_access(stage_in_request("job-3"));
    REQUIRE(third.ok());
    CHECK(third.value().token != first.value().token);
    CHECK(rig.manager->mints() == 2);
}

TEST_CASE("fresh per-instance requests bypass the shared cache") {
    auto rig = make_manager();
    auto req = stage_in_request();
    req.origin = "node-1";
    req.fresh = true;
    auto a = rig.manager->get_access(req);
    auto b = rig.manager->get_access(req);
    REQUIRE(a.ok());
    REQUIRE(b.ok());
    CHECK(a.value().token != b.value().token);
    CHECK(rig.manager->mints() == 2);

    // origin-restricted tokens are keyed separately even when shared
    auto shared = stage_in_request("job-9");
    shared.origin = "node-2";
    auto c = rig.manager->get_access(shared);
    REQUIRE(c.ok());
    CHECK(decode_unverified(c.value().token).value().claims.origin == "node-2");
}

TEST_CASE("get_access refuses when nothing dominates") {
    auto rig = make_manager();
    auto req = stage_in_request("job-1", "read:/elsewhere");
    CHECK(rig.manager->get_access(req).code() == Err::no_dominating_grant);

    auto escalated = stage_in_request("job-1", "write:/data/ligo/frames");
    CHECK(rig.manager->get_access(escalated).code() == Err::no_dominating_grant);

    // narrowing inside the grant works and delivers exactly what was asked
    auto narrow = stage_in_request("job-1", "read:/data/ligo/frames/O3/chunk1");
    auto out = rig.manager->get_access(narrow);
    REQUIRE(out.ok());
    CHECK(out.value().scope == "read:/data/ligo/frames/O3/chunk1");
}

TEST_CASE("stage_out needs the completion signal") {
    auto rig = make_manager();
    TokenRequest req = stage_in_request("job-7", "write:/store/user/alice/out");
    req.phase = JobPhase::stage_out;
    CHECK(rig.manager->get_access(req).code() == Err::phase_violation);

    rig.manager->mark_execution_complete("job-7");
    CHECK(rig.manager->get_access(req).ok());
}

TEST_CASE("refresh_running delivers on the margin schedule") {
    auto rig = make_manager();
    auto t0 = rig.issuer.clock->now();
    auto req = stage_in_request("long-job");
    auto first = rig.manager->get_access(req);
    REQUIRE(first.ok());
    rig.manager->track_job(req, first.value().expires_at);

    // run for 3x the 600 s lifetime: expect ceil(1800 / 540) = 4 deliveries
    std::int64_t end = t0 + 1800;
    int delivered = 1;
    while (true) {
        auto next = rig.manager->next_event();
        REQUIRE(next.has_value());
        if (*next >= end) break;
        rig.issuer.clock->advance_to(*next);
        auto deliveries = rig.manager->refresh_running(rig.issuer.clock->now());
        delivered += static_cast<int>(deliveries.size());
    }
    CHECK(delivered == 4);
    CHECK(rig.manager->deliveries("long-job") == 4);
    CHECK(rig.manager->job_state("long-job") == JobState::running);
    rig.manager->job_finished("long-job");
    CHECK(rig.manager->refresh_running(end).empty());
}

TEST_CASE("issuer outage holds the job and recovery resumes it") {
    auto rig = make_manager();
    auto t0 = rig.issuer.clock->now();
    auto req = stage_in_request("held-job");
    auto first = rig.manager->get_access(req);
    REQUIRE(first.ok());
    rig.manager->track_job(req, first.value().expires_at);

    // outage window covering the first refresh point (t0+540)
    rig.outage->add_outage(t0 + 530, t0 + 700);

    rig.issuer.clock->advance_to(t0 + 540);
    CHECK(rig.manager->refresh_running(t0 + 540).empty());
    CHECK(rig.manager->job_state("held-job") == JobState::hold);
    CHECK(rig.manager->job_hold_cause("held-job").code == Err::issuer_unreachable);

    // pump retries through the outage; backoff gaps 1,2,4,8,... cap 60
    while (rig.manager->job_state("held-job") == JobState::hold) {
        auto next = rig.manager->next_event();
        REQUIRE(next.has_value());
        rig.issuer.clock->advance_to(*next);
        rig.manager->refresh_running(rig.issuer.clock->now());
        REQUIRE(rig.issuer.clock->now() < t0 + 1200);
    }
    CHECK(rig.manager->job_state("held-job") == JobState::running);

    auto retries = rig.manager->retry_times("held-job");
    REQUIRE(retries.size() >= 2);
    // gaps double from 1 s up to the cap
    std::int64_t expected_gap = 1;
    for (std::size_t i = 0; i < retries.size(); ++i) {
        std::int64_t gap = i == 0 ? retries[0] - (t0 + 540) : retries[i] - retries[i - 1];
        CHECK(gap == expected_gap);
        expected_gap = std::min(expected_gap * 2, std::int64_t{60});
    }
    // the successful retry lands after the outage window
    CHECK(retries.back() >= t0 + 700);
}

TEST_CASE("revoked grants terminaly hold the job") {
    auto rig = make_manager();
    auto req = stage_in_request("doomed-job");
    auto first = rig.manager->get_access(req);
    REQUIRE(first.ok());
    rig.manager->track_job(req, first.value().expires_at);

    rig.issuer.issuer->revoke(rig.handle);
    rig.issuer.clock->advance_by(560);
    rig.manager->refresh_running(rig.issuer.clock->now());
    CHECK(rig.manager->job_state("doomed-job") == JobState::terminal_hold);
    CHECK(rig.manager->job_hold_cause("doomed-job").code == Err::revoked);

    // a terminal hold stays put
    rig.issuer.clock->advance_by(300);
    CHECK(rig.manager->refresh_running(rig.issuer.clock->now()).empty());
    CHECK(rig.manager->job_state("doomed-job") == JobState::terminal_hold);
}

TEST_CASE("cache sharing bounds mints independently of job count") {
    auto rig = make_manager();
    auto t0 = rig.issuer.clock->now();
    // 50 jobs with the identical scope set over a 1800 s window
    const int jobs = 50;
    std::int64_t window = 1800;
    for (std::int64_t t = t0; t < t0 + window; t += 90) {
        rig.issuer.clock->advance_to(t);
        for (int j = 0; j < jobs; ++j) {
            auto out = rig.manager->get_access(stage_in_request("job-" + std::to_string(j)));
            REQUIRE(out.ok());
        }
    }
    // ceil(T / (lifetime - margin)) = ceil(1800/540) = 4
    CHECK(rig.manager->mints() <= 4);
}

TEST_CASE("manager local socket serves get_access and store_refresh") {
    auto rig = make_manager();
    ManagerHttpServer server(*rig.manager);
    int port = server.start();
    REQUIRE(port > 0);
    httplib::Client cli("http://127.0.0.1:" + std::to_string(port));

    auto res = cli.Post("/get_access", httplib::Params{{"job_id", "cli-job"},
                                                       {"phase", "stage_in"},
                                                       {"scope", "read:/data/ligo/frames"},
                                                       {"audience", "data-gw"}});
    REQUIRE(res);
    REQUIRE(res->status == 200);
    auto body = json::parse(res->body);
    CHECK(body.contains("access_token"));
    CHECK(body["scope"] == "read:/data/ligo/frames");

    auto denied = cli.Post("/get_access", httplib::Params{{"job_id", "cli-job"},
                                                          {"phase", "stage_in"},
                                                          {"scope", "read:/nope"},
                                                          {"audience", "data-gw"}});
    REQUIRE(denied);
    CHECK(denied->status == 400);
    CHECK(json::parse(denied->body)["error"] == "no-dominating-grant");

    auto stored = cli.Post("/store_refresh", httplib::Params{{"user", "alice"},
                                                             {"issuer", fixtures::kIssuerUrl},
                                                             {"handle", "cli-handle"},
                                                             {"scopes", "read:/data/public"},
                                                             {"expires_at", "99999999999"}});
    REQUIRE(stored);
    CHECK(stored->status == 200);

    auto listing = cli.Get("/vault");
    REQUIRE(listing);
    CHECK(listing->body.find("cli-handle") == std::string::npos);
    CHECK(listing->body.find("read:/data/public") != std::string::npos);
}
