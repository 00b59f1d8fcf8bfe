// captok: keys, tokens, services and the workflow harness in one binary.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "captok/gateway.hpp"
#include "captok/gateway_http.hpp"
#include "captok/harness.hpp"
#include "captok/issuer.hpp"
#include "captok/issuer_http.hpp"
#include "captok/manager_http.hpp"
#include "captok/token.hpp"
#include "captok/token_manager.hpp"
#include "captok/vault.hpp"

using namespace captok;
namespace fs = std::filesystem;

namespace {

int fail(const Error &err) {
    std::cerr << json{{"error", to_string(err.code)}, {"detail", err.detail}}.dump()
              << std::endl;
    return 1;
}

int fail(Err code, const std::string &detail) { return fail(Error{code, detail}); }

Result<std::string> read_file(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return Error{Err::io_error, "cannot read " + path};
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

Result<void> write_file(const std::string &path, const std::string &content, bool force) {
    if (!force && fs::exists(path))
        return Error{Err::already_exists, path + " exists, use --force to overwrite"};
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) return Error{Err::io_error, "cannot write " + path};
    out << content;
    return {};
}

std::string vault_key_path(const std::string &flag_value) {
    if (!flag_value.empty()) return flag_value;
    if (const char *env = std::getenv("CAPTOK_VAULT_KEY")) return env;
    return {};
}

// host:port for the serve commands
struct Listen {
    std::string host = "127.0.0.1";
    int port = 0;
};

Result<Listen> parse_listen(const std::string &s) {
    auto colon = s.rfind(':');
    if (colon == std::string::npos) return Error{Err::config_error, "listen must be host:port"};
    Listen l;
    l.host = s.substr(0, colon);
    try {
        l.port = std::stoi(s.substr(colon + 1));
    } catch (...) {
        return Error{Err::config_error, "bad port in " + s};
    }
    return l;
}

int cmd_keygen(const std::string &alg, const std::string &priv_path,
               const std::string &jwks_path, bool force) {
    auto key = generate_signing_key(alg);
    if (!key) return fail(key.error());
    auto pem = crypto::private_key_to_pem(key.value().priv);
    if (!pem) return fail(pem.error());
    KeySet set;
    set.add(key.value().record);

    auto wrote_priv = write_file(priv_path, pem.value(), force);
    if (!wrote_priv) return fail(wrote_priv.error());
    ::chmod(priv_path.c_str(), 0600);
    auto wrote_jwks = write_file(jwks_path, set.to_json().dump(2) + "\n", force);
    if (!wrote_jwks) return fail(wrote_jwks.error());
    std::cout << json{{"kid", key.value().record.kid},
                      {"alg", alg},
                      {"private_key", priv_path},
                      {"jwks", jwks_path}}
                     .dump(2)
              << std::endl;
    return 0;
}

int cmd_inspect(const std::string &token) {
    auto decoded = decode_unverified(token);
    if (!decoded) return fail(decoded.error());
    const auto &d = decoded.value();
    json out{{"header", {{"alg", d.header.alg}, {"kid", d.header.kid}, {"typ", d.header.typ}}},
             {"claims", d.claims.to_json()}};
    std::cout << out.dump(2) << std::endl;
    return 0;
}

int cmd_verify(const std::string &token, const std::string &issuer_url,
               const std::string &jwks_file, const std::string &audience, std::int64_t skew,
               std::int64_t at) {
    KeySet keys;
    std::string expected_iss;
    if (!jwks_file.empty()) {
        auto text = read_file(jwks_file);
        if (!text) return fail(text.error());
        auto set = KeySet::parse(text.value());
        if (!set) return fail(set.error());
        keys = std::move(set).value();
        expected_iss = issuer_url;
    } else if (!issuer_url.empty()) {
        HttpIssuerClient client(issuer_url);
        auto disco = client.discovery();
        if (!disco) return fail(disco.error());
        expected_iss = disco.value().value("issuer", issuer_url);
        auto jwks = client.jwks();
        if (!jwks) return fail(jwks.error());
        auto set = KeySet::parse(jwks.value());
        if (!set) return fail(set.error());
        keys = std::move(set).value();
    } else {
        return fail(Err::config_error, "need --issuer or --jwks");
    }

    std::int64_t now = at > 0 ? at : SystemClock().now();
    auto verified = verify_token(token, keys, expected_iss, audience, now, skew);
    if (!verified) {
        std::cout << json{{"valid", false}, {"code", to_string(verified.code())}}.dump(2)
                  << std::endl;
        return 1;
    }
    std::cout << json{{"valid", true},
                      {"sub", verified.value().claims.sub},
                      {"scope", verified.value().claims.scope_string()},
                      {"exp", verified.value().claims.exp},
                      {"kid", verified.value().kid}}
                     .dump(2)
              << std::endl;
    return 0;
}

int cmd_issue(const std::string &issuer_url, const std::string &username,
              const std::string &password, const std::string &refresh_token,
              const std::string &scope, const std::string &audience, const std::string &origin,
              bool print_refresh) {
    HttpIssuerClient client(issuer_url);
    std::string handle = refresh_token;
    if (handle.empty()) {
        if (username.empty())
            return fail(Err::config_error, "need --username/--password or --refresh-token");
        auto grant = client.password_grant(username, password, scope, audience);
        if (!grant) return fail(grant.error());
        handle = grant.value().refresh_token;
        if (print_refresh) {
            std::cout << json{{"refresh_token", handle},
                              {"scope", grant.value().scope},
                              {"expires_in", grant.value().expires_in}}
                             .dump(2)
                      << std::endl;
            return 0;
        }
    }
    auto minted = client.refresh_grant(
        handle, scope.empty() ? std::nullopt : std::optional<std::string>(scope),
        audience.empty() ? std::nullopt : std::optional<std::string>(audience),
        origin.empty() ? std::nullopt : std::optional<std::string>(origin));
    if (!minted) return fail(minted.error());
    std::cout << minted.value().access_token << std::endl;
    return 0;
}

int cmd_serve_issuer(const std::string &listen, const std::string &issuer_url,
                     const std::string &users_file, const std::string &policy_file,
                     const std::string &store_file, const std::string &alg,
                     std::int64_t access_lifetime, std::int64_t refresh_lifetime,
                     std::int64_t overlap) {
    auto l = parse_listen(listen);
    if (!l) return fail(l.error());
    auto users_text = read_file(users_file);
    if (!users_text) return fail(users_text.error());
    auto users = UserDirectory::parse(users_text.value());
    if (!users) return fail(users.error());
    auto policy_text = read_file(policy_file);
    if (!policy_text) return fail(policy_text.error());
    auto policy = Policy::parse(policy_text.value());
    if (!policy) return fail(policy.error());

    std::shared_ptr<RefreshStore> store;
    if (store_file.empty()) {
        store = std::make_shared<MemoryRefreshStore>();
    } else {
        auto file_store = FileRefreshStore::open(store_file);
        if (!file_store) return fail(file_store.error());
        store = std::shared_ptr<RefreshStore>(std::move(file_store).value());
    }

    IssuerConfig config;
    config.issuer_url = issuer_url;
    config.alg = alg;
    config.default_access_lifetime = access_lifetime;
    config.default_refresh_lifetime = refresh_lifetime;
    config.key_overlap_window = overlap;

    Issuer issuer(config, std::move(policy).value(), std::move(users).value(), store,
                  system_clock(), system_rng());
    httplib::Server server;
    mount_issuer_routes(server, issuer);
    std::cerr << "issuer " << issuer_url << " listening on " << l.value().host << ":"
              << l.value().port << std::endl;
    if (!server.listen(l.value().host, l.value().port))
        return fail(Err::io_error, "cannot bind " + listen);
    return 0;
}

int cmd_serve_gateway(const GatewayConfig &config) {
    auto l = parse_listen(config.listen);
    if (!l) return fail(l.error());
    HttpIssuerClient issuer(config.issuer_url);
    auto clock = system_clock();
    auto gw = GatewayCore::create(config, issuer, clock);
    if (!gw) return fail(gw.error());

    // background key refetch at the configured interval
    std::atomic<bool> running{true};
    std::thread refresher([&] {
        while (running) {
            std::this_thread::sleep_for(std::chrono::seconds(1));
            gw.value()->keys().tick();
        }
    });

    httplib::Server server;
    mount_gateway_routes(server, *gw.value());
    std::cerr << "gateway for " << config.issuer_url << " serving " << config.docroot << " on "
              << l.value().host << ":" << l.value().port << std::endl;
    bool ok = server.listen(l.value().host, l.value().port);
    running = false;
    refresher.join();
    if (!ok) return fail(Err::io_error, "cannot bind " + config.listen);
    return 0;
}

int cmd_serve_manager(int port, const std::string &user, const std::string &issuer_url,
                      const std::string &vault_file, const std::string &key_flag,
                      std::int64_t margin) {
    auto key_path = vault_key_path(key_flag);
    if (key_path.empty())
        return fail(Err::vault_locked, "set --vault-key or CAPTOK_VAULT_KEY");
    auto rng = system_rng();
    auto vault = Vault::open(vault_file, key_path, rng);
    if (!vault) return fail(vault.error());

    HttpIssuerClient issuer(issuer_url);
    ManagerConfig config;
    config.user = user;
    config.issuer_url = issuer_url;
    config.refresh_margin = margin;
    TokenManager manager(config, *vault.value(), issuer, system_clock());

    httplib::Server server;
    mount_manager_routes(server, manager);
    std::cerr << "token manager for " << user << " on 127.0.0.1:" << port << std::endl;
    if (!server.listen("127.0.0.1", port))
        return fail(Err::io_error, "cannot bind manager port");
    return 0;
}

int cmd_vault_init_key(const std::string &key_file, bool force) {
    if (!force && fs::exists(key_file))
        return fail(Err::already_exists, key_file + " exists, use --force");
    SystemRng rng;
    auto wrote = write_vault_key(key_file, rng);
    if (!wrote) return fail(wrote.error());
    ::chmod(key_file.c_str(), 0600);
    std::cout << json{{"vault_key", key_file}}.dump() << std::endl;
    return 0;
}

int cmd_vault_store(const std::string &vault_file, const std::string &key_flag,
                    const VaultEntry &entry) {
    auto key_path = vault_key_path(key_flag);
    if (key_path.empty()) return fail(Err::vault_locked, "set --vault-key or CAPTOK_VAULT_KEY");
    auto vault = Vault::open(vault_file, key_path, system_rng());
    if (!vault) return fail(vault.error());
    auto scopes = parse_scope(entry.scopes);
    if (!scopes) return fail(scopes.error());
    auto stored = vault.value()->store(entry);
    if (!stored) return fail(stored.error());
    std::cout << json{{"stored", entry.to_json(true)}}.dump(2) << std::endl;
    return 0;
}

int cmd_vault_list(const std::string &vault_file, const std::string &key_flag) {
    auto key_path = vault_key_path(key_flag);
    if (key_path.empty()) return fail(Err::vault_locked, "set --vault-key or CAPTOK_VAULT_KEY");
    auto vault = Vault::open(vault_file, key_path, system_rng());
    if (!vault) return fail(vault.error());
    std::cout << vault.value()->listing().dump(2) << std::endl;
    return 0;
}

int cmd_useradd(const std::string &users_file, const std::string &username,
                const std::string &password, const std::vector<std::string> &groups,
                int iterations) {
    UserDirectory dir;
    if (fs::exists(users_file)) {
        auto text = read_file(users_file);
        if (!text) return fail(text.error());
        auto parsed = UserDirectory::parse(text.value());
        if (!parsed) return fail(parsed.error());
        dir = std::move(parsed).value();
    }
    SystemRng rng;
    auto added = dir.add_user(username, password, groups, rng, iterations);
    if (!added) return fail(added.error());
    auto wrote = write_file(users_file, dir.to_json().dump(2) + "\n", /*force=*/true);
    if (!wrote) return fail(wrote.error());
    std::cout << json{{"user", username}, {"groups", groups}}.dump() << std::endl;
    return 0;
}

int cmd_run_workflow(const std::string &file, const std::string &report_file,
                     const std::string &workspace, const std::string &transcript_file) {
    auto text = read_file(file);
    if (!text) return fail(text.error());
    auto run = WorkflowRun::parse(text.value());
    if (!run) return fail(run.error());

    std::string ws = workspace;
    if (ws.empty()) {
        ws = (fs::temp_directory_path() /
              ("captok-run-" + std::to_string(::getpid())))
                 .string();
    }
    fs::create_directories(ws);

    WorkflowRunner runner(std::move(run).value(), ws);
    auto report = runner.execute();
    if (!report) return fail(report.error());

    if (!transcript_file.empty()) runner.transcript().write_jsonl(transcript_file);
    if (!report_file.empty()) {
        auto wrote = write_file(report_file, report.value().to_json().dump(2) + "\n", true);
        if (!wrote) return fail(wrote.error());
    }
    std::cout << report.value().summary();
    bool ok = report.value().invariants_ok();
    std::cout << (ok ? "workflow invariants hold" : "workflow invariants VIOLATED")
              << std::endl;
    return ok ? 0 : 2;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"capability-token toolkit: issuer, gateway, token manager and harness"};
    app.require_subcommand(1);

    // keygen
    std::string kg_alg = "ES256", kg_priv = "captok-key.pem", kg_jwks = "captok-jwks.json";
    bool kg_force = false;
    auto *keygen = app.add_subcommand("keygen", "generate a signing keypair");
    keygen->add_option("--alg", kg_alg, "ES256 or EdDSA");
    keygen->add_option("--private", kg_priv, "private key PEM output");
    keygen->add_option("--jwks", kg_jwks, "public key set JSON output");
    keygen->add_flag("--force", kg_force, "overwrite existing files");

    // inspect
    std::string in_token;
    auto *inspect = app.add_subcommand("inspect", "decode a token without verification");
    inspect->add_option("token", in_token, "compact token")->required();

    // verify
    std::string vf_token, vf_issuer, vf_jwks, vf_aud;
    std::int64_t vf_skew = kDefaultSkew, vf_at = 0;
    auto *verify = app.add_subcommand("verify", "verify a token against fetched keys");
    verify->add_option("token", vf_token, "compact token")->required();
    verify->add_option("--issuer", vf_issuer, "issuer base URL (discovery + jwks)");
    verify->add_option("--jwks", vf_jwks, "local key set file instead of fetching");
    verify->add_option("--audience", vf_aud, "expected audience");
    verify->add_option("--skew", vf_skew, "clock skew seconds");
    verify->add_option("--at", vf_at, "verification time (epoch seconds, 0 = now)");

    // issue
    std::string is_issuer, is_user, is_pass, is_refresh, is_scope, is_aud, is_origin;
    bool is_print_refresh = false;
    auto *issue = app.add_subcommand("issue", "obtain a token from a running issuer");
    issue->add_option("--issuer", is_issuer, "issuer base URL")->required();
    issue->add_option("--username", is_user, "user for the password grant");
    issue->add_option("--password", is_pass, "secret for the password grant");
    issue->add_option("--refresh-token", is_refresh, "existing refresh handle");
    issue->add_option("--scope", is_scope, "requested scope string");
    issue->add_option("--audience", is_aud, "requested audience");
    issue->add_option("--origin", is_origin, "origin restriction for the access token");
    issue->add_flag("--print-refresh", is_print_refresh,
                    "stop after the password grant and print the refresh token");

    // serve-issuer
    std::string si_listen = "127.0.0.1:8080", si_url = "https://issuer.local";
    std::string si_users, si_policy, si_store, si_alg = "ES256";
    std::int64_t si_access = 600, si_refresh = 2592000, si_overlap = 86400;
    auto *serve_issuer = app.add_subcommand("serve-issuer", "run the token server");
    serve_issuer->add_option("--listen", si_listen, "host:port");
    serve_issuer->add_option("--issuer-url", si_url, "issuer identifier URL");
    serve_issuer->add_option("--users", si_users, "user directory JSON")->required();
    serve_issuer->add_option("--policy", si_policy, "policy rules JSON")->required();
    serve_issuer->add_option("--store", si_store, "refresh store file (default in-memory)");
    serve_issuer->add_option("--alg", si_alg, "signing algorithm");
    serve_issuer->add_option("--access-lifetime", si_access, "access token seconds");
    serve_issuer->add_option("--refresh-lifetime", si_refresh, "refresh grant seconds");
    serve_issuer->add_option("--key-overlap", si_overlap, "old-key overlap seconds");

    // serve-gateway
    GatewayConfig gw_config;
    gw_config.listen = "127.0.0.1:8081";
    auto *serve_gateway = app.add_subcommand("serve-gateway", "run the data gateway");
    serve_gateway->add_option("--listen", gw_config.listen, "host:port");
    serve_gateway->add_option("--docroot", gw_config.docroot, "document root")->required();
    serve_gateway->add_option("--issuer", gw_config.issuer_url, "trusted issuer URL")
        ->required();
    serve_gateway->add_option("--audience", gw_config.audience, "expected audience");
    serve_gateway->add_option("--key-refetch-interval", gw_config.key_refetch_interval,
                              "seconds between key refetches");
    serve_gateway->add_flag("!--no-strict-audience", gw_config.strict_audience,
                            "accept the ANY wildcard audience");
    serve_gateway->add_flag("--enforce-origin", gw_config.enforce_origin,
                            "compare token origin with the client id header");
    serve_gateway->add_option("--mount-prefix", gw_config.mount_prefix,
                              "token-namespace prefix this gateway serves");
    serve_gateway->add_flag("--introspect-mode", gw_config.use_introspection,
                            "validate via the issuer instead of offline");
    serve_gateway->add_flag("--fail-closed", gw_config.fail_closed,
                            "refuse requests when the key cache is stale");
    serve_gateway->add_option("--skew", gw_config.skew, "verification clock skew");
    serve_gateway->add_option("--audit-log", gw_config.audit_log_path, "audit JSONL path");
    serve_gateway->add_option("--key-cache", gw_config.key_cache_path, "key cache file");

    // serve-manager
    int sm_port = 8090;
    std::string sm_user, sm_issuer, sm_vault = "captok-vault.bin", sm_key;
    std::int64_t sm_margin = 60;
    auto *serve_manager =
        app.add_subcommand("serve-manager", "run the submit-domain token manager");
    serve_manager->add_option("--port", sm_port, "loopback port");
    serve_manager->add_option("--user", sm_user, "vault user")->required();
    serve_manager->add_option("--issuer", sm_issuer, "issuer base URL")->required();
    serve_manager->add_option("--vault", sm_vault, "vault file");
    serve_manager->add_option("--vault-key", sm_key, "vault key file (or CAPTOK_VAULT_KEY)");
    serve_manager->add_option("--margin", sm_margin, "refresh margin seconds");

    // vault
    auto *vault = app.add_subcommand("vault", "manage the encrypted refresh vault");
    vault->require_subcommand(1);
    std::string vk_file = "captok-vault.key";
    bool vk_force = false;
    auto *vault_init = vault->add_subcommand("init-key", "provision a vault key");
    vault_init->add_option("--key", vk_file, "key file to create");
    vault_init->add_flag("--force", vk_force, "overwrite an existing key");

    std::string vs_vault = "captok-vault.bin", vs_key;
    VaultEntry vs_entry;
    auto *vault_store = vault->add_subcommand("store", "store a refresh handle");
    vault_store->add_option("--vault", vs_vault, "vault file");
    vault_store->add_option("--vault-key", vs_key, "key file (or CAPTOK_VAULT_KEY)");
    vault_store->add_option("--user", vs_entry.user, "owner")->required();
    vault_store->add_option("--issuer", vs_entry.issuer, "issuer URL")->required();
    vault_store->add_option("--handle", vs_entry.handle, "refresh token value")->required();
    vault_store->add_option("--scopes", vs_entry.scopes, "granted scope string")->required();
    vault_store->add_option("--audience", vs_entry.audience, "audience of the grant");
    vault_store->add_option("--expires-at", vs_entry.expires_at, "epoch seconds")->required();

    std::string vl_vault = "captok-vault.bin", vl_key;
    auto *vault_list = vault->add_subcommand("list", "list stored grants (handles redacted)");
    vault_list->add_option("--vault", vl_vault, "vault file");
    vault_list->add_option("--vault-key", vl_key, "key file (or CAPTOK_VAULT_KEY)");

    // useradd
    std::string ua_file, ua_user, ua_pass;
    std::vector<std::string> ua_groups;
    int ua_iters = 10000;
    auto *useradd = app.add_subcommand("useradd", "add a user to a directory file");
    useradd->add_option("--users", ua_file, "user directory JSON")->required();
    useradd->add_option("--username", ua_user)->required();
    useradd->add_option("--password", ua_pass)->required();
    useradd->add_option("--group", ua_groups, "group membership (repeatable)");
    useradd->add_option("--iterations", ua_iters, "PBKDF2 iterations");

    // run-workflow
    std::string rw_file, rw_report = "report.json", rw_workspace, rw_transcript;
    auto *run_wf = app.add_subcommand("run-workflow", "execute a workflow file end to end");
    run_wf->add_option("--file", rw_file, "workflow JSON")->required();
    run_wf->add_option("--report", rw_report, "report output path");
    run_wf->add_option("--workspace", rw_workspace, "working directory (default temp)");
    run_wf->add_option("--transcript", rw_transcript, "write the message transcript JSONL");

    CLI11_PARSE(app, argc, argv);

    if (*keygen) return cmd_keygen(kg_alg, kg_priv, kg_jwks, kg_force);
    if (*inspect) return cmd_inspect(in_token);
    if (*verify) return cmd_verify(vf_token, vf_issuer, vf_jwks, vf_aud, vf_skew, vf_at);
    if (*issue)
        return cmd_issue(is_issuer, is_user, is_pass, is_refresh, is_scope, is_aud, is_origin,
                         is_print_refresh);
    if (*serve_issuer)
        return cmd_serve_issuer(si_listen, si_url, si_users, si_policy, si_store, si_alg,
                                si_access, si_refresh, si_overlap);
    if (*serve_gateway) return cmd_serve_gateway(gw_config);
    if (*serve_manager)
        return cmd_serve_manager(sm_port, sm_user, sm_issuer, sm_vault, sm_key, sm_margin);
    if (*vault_init) return cmd_vault_init_key(vk_file, vk_force);
    if (*vault_store) return cmd_vault_store(vs_vault, vs_key, vs_entry);
    if (*vault_list) return cmd_vault_list(vl_vault, vl_key);
    if (*useradd) return cmd_useradd(ua_file, ua_user, ua_pass, ua_groups, ua_iters);
    if (*run_wf) return cmd_run_workflow(rw_file, rw_report, rw_workspace, rw_transcript);
    return 1;
}
