#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "captok/gateway.hpp"
#include "captok/gateway_http.hpp"
#include "support/fixtures.hpp"

using namespace captok;
namespace fs = std::filesystem;

namespace {

std::atomic<int> g_rig_counter{0};

struct GatewayRig {
    fixtures::IssuerRig issuer;
    fs::path dir;
    std::unique_ptr<InProcessIssuer> api;
    std::unique_ptr<CountingIssuerApi> counting;
    std::unique_ptr<OutageIssuerApi> outage;
    std::unique_ptr<GatewayCore> gateway;
    std::string handle;

    GatewayRig() = default;
    GatewayRig(GatewayRig &&) = default;
    GatewayRig &operator=(GatewayRig &&) = default;

    ~GatewayRig() {
        std::error_code ec;
        if (!dir.empty()) fs::remove_all(dir, ec);
    }

    std::string mint(const std::string &scope, const std::string &aud = "data-gw",
                     const std::optional<std::string> &origin = std::nullopt,
                     const std::string &user = "alice", const std::string &secret = "alice-secret") {
        auto grant = issuer.issuer->grant_refresh(user, secret, scope, aud);
        REQUIRE(grant.ok());
        auto out = issuer.issuer->mint_access(grant.value().refresh_token, scope, aud, origin);
        REQUIRE(out.ok());
        return out.value().access_token;
    }
};

GatewayRig make_gateway(GatewayConfig config = {}) {
    GatewayRig rig;
    rig.issuer = fixtures::make_issuer();
    rig.dir = fs::temp_directory_path() /
              ("captok-gw-" + std::to_string(::getpid()) + "-" +
               std::to_string(g_rig_counter.fetch_add(1)));
    fs::create_directories(rig.dir / "docroot/data/ligo/frames");
    std::ofstream(rig.dir / "docroot/data/ligo/frames/x.gwf") << "frame-bytes";

    rig.api = std::make_unique<InProcessIssuer>(*rig.issuer.issuer);
    rig.counting = std::make_unique<CountingIssuerApi>(*rig.api);
    rig.outage = std::make_unique<OutageIssuerApi>(*rig.counting, rig.issuer.clock);

    config.docroot = (rig.dir / "docroot").string();
    config.issuer_url = fixtures::kIssuerUrl;
    if (config.audience.empty()) config.audience = "data-gw";
    auto gw = GatewayCore::create(config, *rig.outage, rig.issuer.clock);
    REQUIRE(gw.ok());
    rig.gateway = std::move(gw).value();

    auto grant = rig.issuer.issuer->grant_refresh(
        "alice", "alice-secret", "read:/data/ligo/frames write:/store/user/alice", "data-gw");
    REQUIRE(grant.ok());
    rig.handle = grant.value().refresh_token;
    return rig;
}

} // namespace

TEST_CASE("gateway config is validated") {
    auto rig = fixtures::make_issuer();
    InProcessIssuer api(*rig.issuer);
    GatewayConfig config;
    config.docroot = "/no/such/dir";
    config.issuer_url = fixtures::kIssuerUrl;
    config.audience = "data-gw";
    CHECK(GatewayCore::create(config, api, rig.clock).code() == Err::config_error);

    config.docroot = fs::temp_directory_path().string();
    config.audience = "";
    CHECK(GatewayCore::create(config, api, rig.clock).code() == Err::config_error);

    config.strict_audience = false;
    CHECK(GatewayCore::create(config, api, rig.clock).ok());
}

TEST_CASE("authorized GET serves bytes and the rest of the taxonomy holds") {
    auto rig = make_gateway();
    auto token = rig.mint("read:/data/ligo/frames");

    SECTION("happy path") {
        auto res = rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", token);
        CHECK(res.status == 200);
        CHECK(res.body == "frame-bytes");
    }
    SECTION("missing token is 401") {
        auto res = rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", std::nullopt);
        CHECK(res.status == 401);
        CHECK(res.error_code == "missing-token");
        auto empty = rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", std::string{});
        CHECK(empty.status == 401);
    }
    SECTION("garbage token is 401 malformed") {
        auto res = rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", std::string{"nonsense"});
        CHECK(res.status == 401);
        CHECK(res.error_code == "malformed");
    }
    SECTION("tampered token is 401 signature-invalid") {
        std::string bad = token;
        auto sig_start = bad.rfind('.') + 1;
        auto mid = sig_start + (bad.size() - sig_start) / 2;
        bad[mid] = bad[mid] == 'A' ? 'B' : 'A';
        auto res = rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", bad);
        CHECK(res.status == 401);
        CHECK(res.error_code == "signature-invalid");
    }
    SECTION("read scope does not grant writes") {
        auto res = rig.gateway->handle("PUT", "/data/ligo/frames/new.gwf", token, "", "data");
        CHECK(res.status == 403);
        CHECK(res.error_code == "forbidden");
    }
    SECTION("out-of-scope path is 403") {
        auto res = rig.gateway->handle("GET", "/data/other/x", token);
        CHECK(res.status == 403);
    }
    SECTION("authorized GET of a missing file is 404") {
        auto res = rig.gateway->handle("GET", "/data/ligo/frames/missing.gwf", token);
        CHECK(res.status == 404);
        CHECK(res.error_code == "not-found");
    }
    SECTION("expired token is 401 expired") {
        rig.issuer.clock->advance_by(600 + kDefaultSkew + 1);
        auto res = rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", token);
        CHECK(res.status == 401);
        CHECK(res.error_code == "expired");
    }
    SECTION("wrong audience is 401 audience-mismatch") {
        auto other = rig.mint("read:/data/ligo/frames", "other-service");
        auto res = rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", other);
        CHECK(res.status == 401);
        CHECK(res.error_code == "audience-mismatch");
    }
    SECTION("bad path is 400") {
        auto res = rig.gateway->handle("GET", "/data/../etc/passwd", token);
        CHECK(res.status == 400);
        CHECK(res.error_code == "traversal-rejected");
        CHECK(rig.gateway->handle("GET", "relative/path", token).status == 400);
    }
    SECTION("unsupported method is 405") {
        CHECK(rig.gateway->handle("DELETE", "/data/ligo/frames/x.gwf", token).status == 405);
    }
}

TEST_CASE("authorized PUT creates parents and reports create vs overwrite") {
    auto rig = make_gateway();
    auto token = rig.mint("write:/store/user/alice");

    auto created = rig.gateway->handle("PUT", "/store/user/alice/out/result.dat", token, "",
                                       "payload-1");
    CHECK(created.status == 201);
    auto overwritten = rig.gateway->handle("PUT", "/store/user/alice/out/result.dat", token, "",
                                           "payload-2");
    CHECK(overwritten.status == 204);

    std::ifstream in(rig.dir / "docroot/store/user/alice/out/result.dat");
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(content == "payload-2");

    // write scope does not grant reads
    auto read_back = rig.gateway->handle("GET", "/store/user/alice/out/result.dat", token);
    CHECK(read_back.status == 403);
}

TEST_CASE("ANY-audience tokens pass only lax gateways") {
    GatewayConfig lax;
    lax.strict_audience = false;
    auto rig = make_gateway(lax);
    auto any_token = rig.mint("read:/data/ligo/frames", "ANY");
    CHECK(rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", any_token).status == 200);

    auto strict_rig = make_gateway();
    auto strict_token = strict_rig.mint("read:/data/ligo/frames", "ANY");
    auto res = strict_rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", strict_token);
    CHECK(res.status == 401);
    CHECK(res.error_code == "audience-mismatch");
}

TEST_CASE("origin enforcement compares the client identifier") {
    GatewayConfig config;
    config.enforce_origin = true;
    auto rig = make_gateway(config);
    auto bound = rig.mint("read:/data/ligo/frames", "data-gw", std::string("node-17"));

    CHECK(rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", bound, "node-17").status == 200);
    auto res = rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", bound, "node-99");
    CHECK(res.status == 403);
    CHECK(res.error_code == "origin-mismatch");

    // tokens without an origin claim are not node-bound
    auto unbound = rig.mint("read:/data/ligo/frames");
    CHECK(rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", unbound, "node-99").status ==
          200);

    // an unenforcing gateway ignores the claim
    auto lax_rig = make_gateway();
    auto lax_bound = lax_rig.mint("read:/data/ligo/frames", "data-gw", std::string("node-17"));
    CHECK(lax_rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", lax_bound, "node-99")
              .status == 200);
}

TEST_CASE("mount prefix re-roots request paths") {
    GatewayConfig config;
    config.mount_prefix = "/data";
    auto rig = make_gateway(config);
    // rebuild the doc tree relative to the mount
    fs::create_directories(rig.dir / "docroot/ligo/frames");
    std::ofstream(rig.dir / "docroot/ligo/frames/y.gwf") << "mounted";

    auto token = rig.mint("read:/data/ligo/frames");
    auto res = rig.gateway->handle("GET", "/ligo/frames/y.gwf", token);
    CHECK(res.status == 200);
    CHECK(res.body == "mounted");

    // scopes outside the mount do not apply
    auto outside = rig.mint("write:/store/user/alice");
    CHECK(rig.gateway->handle("PUT", "/store/user/alice/f", outside, "", "x").status == 403);
}

TEST_CASE("steady-state requests never call the issuer") {
    auto rig = make_gateway();
    auto token = rig.mint("read:/data/ligo/frames");
    auto warmup_calls = rig.counting->key_fetches();
    CHECK(warmup_calls >= 1);

    for (int i = 0; i < 500; ++i) {
        auto res = rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", token);
        REQUIRE(res.status == 200);
    }
    CHECK(rig.counting->key_fetches() == warmup_calls);
    CHECK(rig.counting->introspections() == 0);
    CHECK(rig.gateway->issuer_calls() == warmup_calls);
}

TEST_CASE("issuer outage after warm-up keeps requests flowing") {
    auto rig = make_gateway();
    auto token = rig.mint("read:/data/ligo/frames");
    rig.outage->add_outage(rig.issuer.clock->now(), rig.issuer.clock->now() + 100000);

    CHECK(rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", token).status == 200);

    // cache goes stale, tick fails to refetch, requests still flow
    rig.issuer.clock->advance_by(GatewayConfig{}.key_refetch_interval + 1);
    CHECK(rig.gateway->keys().stale());
    CHECK(rig.gateway->keys().tick());
    CHECK(rig.gateway->keys().stale_serves() == 1);
    // the issuer wrapper is down for the gateway, but the issuer core can
    // still mint for a caller inside the submit domain
    auto fresh = rig.mint("read:/data/ligo/frames");
    CHECK(rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", fresh).status == 200);
}

TEST_CASE("fail-closed mode refuses on a stale cache") {
    GatewayConfig config;
    config.fail_closed = true;
    auto rig = make_gateway(config);
    auto token = rig.mint("read:/data/ligo/frames");
    CHECK(rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", token).status == 200);

    rig.outage->add_outage(rig.issuer.clock->now(), rig.issuer.clock->now() + 100000);
    rig.issuer.clock->advance_by(GatewayConfig{}.key_refetch_interval + 1);
    rig.gateway->keys().tick();
    auto res = rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", token);
    CHECK(res.status == 503);
    CHECK(res.error_code == "issuer-unreachable");
}

TEST_CASE("key rotation propagates through tick") {
    GatewayConfig config;
    config.key_refetch_interval = 100; // keep refetches inside token lifetime
    auto rig = make_gateway(config);
    auto before = rig.mint("read:/data/ligo/frames");
    rig.issuer.issuer->rotate_keys();
    auto after = rig.mint("read:/data/ligo/frames");

    // freshly rotated kid is unknown until the next tick
    CHECK(rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", after).error_code ==
          "unknown-kid");

    // both verify against the served overlap set once refreshed
    rig.issuer.clock->advance_by(101);
    rig.gateway->keys().tick();
    CHECK(rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", before).status == 200);
    CHECK(rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", after).status == 200);

    // beyond the overlap window the old kid disappears from the served set
    rig.issuer.clock->advance_by(IssuerConfig{}.key_overlap_window + 1);
    rig.gateway->keys().tick();
    auto res = rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", before);
    CHECK(res.status == 401);
    CHECK(res.error_code == "unknown-kid");
}

TEST_CASE("disk cache lets a gateway start while the issuer is down") {
    auto rig = make_gateway();
    auto cache_path = (rig.dir / "keys.json").string();
    {
        GatewayConfig config;
        config.docroot = (rig.dir / "docroot").string();
        config.issuer_url = fixtures::kIssuerUrl;
        config.audience = "data-gw";
        config.key_cache_path = cache_path;
        auto gw = GatewayCore::create(config, *rig.outage, rig.issuer.clock);
        REQUIRE(gw.ok());
    }
    rig.outage->add_outage(rig.issuer.clock->now(), rig.issuer.clock->now() + 1000);
    GatewayConfig config;
    config.docroot = (rig.dir / "docroot").string();
    config.issuer_url = fixtures::kIssuerUrl;
    config.audience = "data-gw";
    config.key_cache_path = cache_path;
    auto gw = GatewayCore::create(config, *rig.outage, rig.issuer.clock);
    REQUIRE(gw.ok());
    auto token = rig.mint("read:/data/ligo/frames");
    CHECK(gw.value()->handle("GET", "/data/ligo/frames/x.gwf", token).status == 200);

    // with no cache at all, startup fails
    GatewayConfig bare = config;
    bare.key_cache_path = (rig.dir / "nonexistent.json").string();
    CHECK(GatewayCore::create(bare, *rig.outage, rig.issuer.clock).code() ==
          Err::issuer_unreachable);
}

TEST_CASE("introspection mode calls the issuer once per request") {
    GatewayConfig config;
    config.use_introspection = true;
    auto rig = make_gateway(config);
    auto token = rig.mint("read:/data/ligo/frames");

    auto before = rig.counting->introspections();
    const int n = 25;
    for (int i = 0; i < n; ++i) {
        REQUIRE(rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", token).status == 200);
    }
    CHECK(rig.counting->introspections() - before == n);

    rig.issuer.clock->advance_by(601);
    auto res = rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", token);
    CHECK(res.status == 401);
    CHECK(res.error_code == "token-inactive");
}

TEST_CASE("hostile paths never reach the document tree") {
    auto rig = make_gateway();
    auto token = rig.mint("read:/", "data-gw", std::nullopt, "root-op", "root-secret");
    // escape attempts are rejected at normalization, before any filesystem touch
    for (const char *hostile : {"/..", "/../etc/passwd", "/a/../../x", "/data/..", "..", "etc",
                                "/a/./../b", ""}) {
        auto res = rig.gateway->handle("GET", hostile, token);
        INFO("path " << hostile);
        CHECK(res.status == 400);
    }
    // the root scope can read anything inside, never outside
    CHECK(rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", token).status == 200);
}

TEST_CASE("audit replay reproduces every verdict") {
    GatewayConfig config;
    config.enforce_origin = true;
    auto rig = make_gateway(config);
    auto read_tok = rig.mint("read:/data/ligo/frames");
    auto write_tok = rig.mint("write:/store/user/alice");
    auto bound_tok = rig.mint("read:/data/ligo/frames", "data-gw", std::string("node-1"));

    rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", read_tok);
    rig.gateway->handle("PUT", "/data/ligo/frames/x.gwf", read_tok, "", "x");
    rig.gateway->handle("PUT", "/store/user/alice/a", write_tok, "", "павлоад");
    rig.gateway->handle("GET", "/store/user/alice/a", write_tok);
    rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", bound_tok, "node-1");
    rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", bound_tok, "node-2");
    rig.gateway->handle("GET", "/data/ligo/frames/missing", read_tok);
    rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", std::nullopt);
    rig.gateway->handle("GET", "/nope/../x", read_tok);
    std::string tampered = read_tok;
    tampered[tampered.find('.') + 3] ^= 1;
    rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", tampered);
    rig.issuer.clock->advance_by(700);
    rig.gateway->handle("GET", "/data/ligo/frames/x.gwf", read_tok); // expired now

    auto records = rig.gateway->audit().records();
    REQUIRE(records.size() == 11);
    CHECK(replay_audit(records, rig.issuer.issuer->served_keys(), rig.gateway->config()) == 0);

    // a forged allow in the log is caught
    auto forged = records;
    for (auto &r : forged) {
        if (r.decision == "deny" && !r.token.empty() && r.status == 403) r.decision = "allow";
    }
    CHECK(replay_audit(forged, rig.issuer.issuer->served_keys(), rig.gateway->config()) > 0);
}

TEST_CASE("gateway HTTP transport carries the same semantics") {
    auto rig = make_gateway();
    GatewayHttpServer server(*rig.gateway);
    int port = server.start();
    REQUIRE(port > 0);
    HttpGatewayClient client("http://127.0.0.1:" + std::to_string(port));

    auto token = rig.mint("read:/data/ligo/frames write:/store/user/alice");
    auto got = client.get("/data/ligo/frames/x.gwf", token);
    CHECK(got.status == 200);
    CHECK(got.body == "frame-bytes");

    auto put = client.put("/store/user/alice/http.out", "written-via-http", token);
    CHECK(put.status == 201);

    auto denied = client.get("/data/secret", token);
    CHECK(denied.status == 403);
    CHECK(denied.error_code == "forbidden");

    auto anonymous = client.get("/data/ligo/frames/x.gwf", std::nullopt);
    CHECK(anonymous.status == 401);
    CHECK(anonymous.error_code == "missing-token");

    auto expired_rig_skew = rig.issuer.clock->now();
    (void)expired_rig_skew;
    auto body = json::parse(denied.body);
    CHECK(body["error"] == "forbidden");
}

TEST_CASE("local cache re-verifies tokens before serving bytes") {
    auto rig = make_gateway();
    InProcessGateway gateway(*rig.gateway);
    auto keys = KeySet::parse(rig.issuer.issuer->jwks_json()).value();
    LocalCacheReader cache(keys, fixtures::kIssuerUrl, "data-gw");

    auto token = rig.mint("read:/data/ligo/frames");
    auto now = [&] { return rig.issuer.clock->now(); };

    auto first = cache.read(gateway, token, "/data/ligo/frames/x.gwf", now());
    REQUIRE(first.ok());
    CHECK(first.value() == "frame-bytes");
    CHECK(cache.gateway_calls() == 1);

    // warm hits serve locally with zero gateway calls
    for (int i = 0; i < 10; ++i) {
        auto hit = cache.read(gateway, token, "/data/ligo/frames/x.gwf", now());
        REQUIRE(hit.ok());
    }
    CHECK(cache.gateway_calls() == 1);
    CHECK(cache.cache_hits() == 10);

    // an expired token cannot read even locally cached bytes
    rig.issuer.clock->advance_by(600 + kDefaultSkew + 1);
    auto expired = cache.read(gateway, token, "/data/ligo/frames/x.gwf", now());
    CHECK(expired.code() == Err::expired);

    // a token lacking the read scope for the path cannot read the cache either
    auto narrow = rig.mint("write:/store/user/alice");
    auto denied = cache.read(gateway, narrow, "/data/ligo/frames/x.gwf", now());
    CHECK(denied.code() == Err::forbidden);

    // a tampered token is rejected before the cache is consulted
    std::string tampered = token;
    auto sig_mid = tampered.rfind('.') + 1 + (tampered.size() - tampered.rfind('.')) / 2;
    tampered[sig_mid] = tampered[sig_mid] == 'A' ? 'B' : 'A';
    CHECK(cache.read(gateway, tampered, "/data/ligo/frames/x.gwf", now()).code() ==
          Err::signature_invalid);
}
