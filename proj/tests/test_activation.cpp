#include <doctest.h>

#include <json.hpp>

#include "harness.hpp"
#include "lpf/activation.hpp"
#include "lpf/config.hpp"

using namespace lpf;
using harness::LpfRunner;
using harness::ToolProc;
using nlohmann::json;

namespace {

const std::string kBare = std::string(TOOLS_DIR) + "/barelpf";
const std::string kLpfd = std::string(TOOLS_DIR) + "/lpfd";

struct BareRig {
    int bare_port = net::pick_free_port();
    std::unique_ptr<ToolProc> proc;

    BareRig() { start(); }

    void start() {
        proc = std::make_unique<ToolProc>(std::vector<std::string>{
            kBare, "--port", std::to_string(bare_port), "--lpfd", kLpfd});
        REQUIRE(harness::wait_until([&] { return harness::port_listening(bare_port); }, 5000));
    }

    RpcResult spawn(const std::string& name, int port, const std::string& service = "") {
        return harness::ask(bare_port, "local-lpf-map", "SpawnLpf",
                            {{"name", name},
                             {"port", std::to_string(port)},
                             {"host", harness::kHost},
                             {"service", service}},
                            8000);
    }

    json lpf_map() {
        auto r = harness::ask(bare_port, "local-lpf-map", "LpfMapQuery");
        REQUIRE(r.ok);
        return json::parse(kv_get(r.answer.body, "lpfs", "[]"));
    }

    RpcResult reap(const std::string& service = "", bool force = false) {
        Kv body;
        if (!service.empty()) body["service"] = service;
        if (force) body["force"] = "1";
        return harness::ask(bare_port, "local-lpf-map", "LocalLpfReaper", body, 8000);
    }
};

/// Drives a Configuration-Master activation of the given parsed tree and
/// returns the report.
ActivationReport activate_tree(const ConfigTree& tree, int wait_ms = 30000) {
    LpfRunner master(harness::options("master", 0));
    auto* service = new ActivationService();
    master.get().register_module({"activation", ModuleKind::Active, {}},
                                 std::unique_ptr<Module>(service));
    master.start();
    Message kick;
    kick.verb = "ActivateTree";
    kick.body = {{"tree", config_to_json(tree.root)}};
    kick.destination = local_module("activation");
    master.get().post(kick);

    std::optional<ActivationReport> report;
    harness::wait_until(
        [&] {
            report = service->take_report();
            return report.has_value();
        },
        wait_ms, 25);
    master.stop();
    REQUIRE(report.has_value());
    return *report;
}

std::string lpf_block(const std::string& name, int port, const std::string& extra = "") {
    return "    Lpf " + name + " host=127.0.0.1 port=" + std::to_string(port) + " {\n" + extra +
           "    }\n";
}

}  // namespace

TEST_CASE("bare spawn: a fresh LPF answers LpfStatus; occupied ports are refused") {
    BareRig rig;
    int p1 = net::pick_free_port();
    auto r = rig.spawn("alpha", p1);
    REQUIRE(r.ok);
    CHECK(kv_get(r.answer.body, "ok") == "1");

    auto st = harness::ask(p1, "core", "LpfStatus");
    REQUIRE(st.ok);
    CHECK(kv_get(st.answer.body, "name") == "alpha");

    // occupied port: refused, barelpf stays healthy
    auto r2 = rig.spawn("beta", p1);
    REQUIRE(r2.ok);
    CHECK(kv_get(r2.answer.body, "ok") == "0");
    CHECK(kv_get(r2.answer.body, "error").find("PortInUse") != std::string::npos);

    int p2 = net::pick_free_port();
    auto r3 = rig.spawn("gamma", p2, "demo");
    REQUIRE(r3.ok);
    CHECK(kv_get(r3.answer.body, "ok") == "1");

    // two independent LPFs listed in the local map
    auto map = rig.lpf_map();
    CHECK(map.size() == 2);

    auto reaped = rig.reap();
    REQUIRE(reaped.ok);
    CHECK(kv_get(reaped.answer.body, "targeted") == "2");
    CHECK(harness::wait_until(
        [&] { return !harness::port_listening(p1) && !harness::port_listening(p2); }, 5000));

    // BareLPF remains ready for a new activation
    int p3 = net::pick_free_port();
    auto r4 = rig.spawn("delta", p3);
    REQUIRE(r4.ok);
    CHECK(kv_get(r4.answer.body, "ok") == "1");
    rig.reap();
}

TEST_CASE("reap by service targets only that service's LPFs") {
    BareRig rig;
    int pc = net::pick_free_port();
    int er = net::pick_free_port();
    REQUIRE(kv_get(rig.spawn("pc1", pc, "PCfarm").answer.body, "ok") == "1");
    REQUIRE(kv_get(rig.spawn("er1", er, "ERfarm").answer.body, "ok") == "1");

    auto reaped = rig.reap("PCfarm");
    REQUIRE(reaped.ok);
    CHECK(kv_get(reaped.answer.body, "targeted") == "1");
    CHECK(harness::wait_until([&] { return !harness::port_listening(pc); }, 5000));
    CHECK(harness::port_listening(er));  // the other service keeps running
    rig.reap();
}

TEST_CASE("recursive activation: three LPFs, modules loaded, then a clean reap cycle") {
    BareRig rig;
    int p_parent = net::pick_free_port();
    int p_child = net::pick_free_port();
    int p_other = net::pick_free_port();

    std::string cfg = "System demo {\n"
                      "  barelpf_port = " + std::to_string(rig.bare_port) + "\n"
                      "  Service reco {\n"
                      "    Lpf parent host=127.0.0.1 port=" + std::to_string(p_parent) + " {\n"
                      "      Module echo1 {\n        impl = echo\n      }\n"
                      "      Lpf nested host=127.0.0.1 port=" + std::to_string(p_child) + " {\n"
                      "        Module echo2 {\n          impl = echo\n        }\n"
                      "      }\n"
                      "    }\n" +
                      lpf_block("other", p_other) +
                      "  }\n"
                      "}\n";
    reset_config_parse_count();
    auto tree = parse_config(cfg);
    auto report = activate_tree(tree);
    INFO(report.render());
    CHECK(report.success());
    CHECK(report.lpfs.size() == 3);
    for (const auto& [path, oc] : report.lpfs) CHECK(oc.outcome == "SUCCESS");

    // every LPF answers, modules are loaded where declared
    auto st = harness::ask(p_parent, "core", "LpfStatus");
    REQUIRE(st.ok);
    CHECK(kv_get(st.answer.body, "modules").find("echo1") != std::string::npos);
    auto st2 = harness::ask(p_child, "core", "LpfStatus");
    REQUIRE(st2.ok);
    CHECK(kv_get(st2.answer.body, "modules").find("echo2") != std::string::npos);
    CHECK(harness::ask(p_other, "core", "Ping").ok);

    // the Configuration Master parsed exactly once
    CHECK(config_parse_count() == 1);

    // reap everything; only the BareLPF port keeps listening
    auto reaped = rig.reap();
    REQUIRE(reaped.ok);
    CHECK(harness::wait_until(
        [&] {
            return !harness::port_listening(p_parent) && !harness::port_listening(p_child) &&
                   !harness::port_listening(p_other);
        },
        5000));
    CHECK(harness::port_listening(rig.bare_port));

    // activate/reap again: the cycle is repeatable
    auto report2 = activate_tree(tree);
    CHECK(report2.success());
    rig.reap();
    CHECK(harness::wait_until([&] { return rig.lpf_map().empty(); }, 5000));
}

TEST_CASE("failure policy matrix: FAIL propagates, IGNORE records, RECOVER falls back") {
    BareRig rig;
    int dead_bare = net::pick_free_port();  // no barelpf listens there

    auto build = [&](const std::string& policy, const std::string& fallback) {
        int c1 = net::pick_free_port();
        int c2 = net::pick_free_port();
        int c3 = net::pick_free_port();
        std::string cfg =
            "System matrix {\n"
            "  barelpf_port = " + std::to_string(rig.bare_port) + "\n"
            "  activation_timeout_s = 20\n"
            "  Service svc {\n" +
            lpf_block("c1", c1) +
            "    Lpf c2 host=127.0.0.1 port=" + std::to_string(c2) + " {\n"
            "      barelpf_port = " + std::to_string(dead_bare) + "\n"
            "      on_child_failure = " + policy + "\n"
            "      recover_fallback = " + fallback + "\n"
            "      activation_timeout_s = 5\n"
            "    }\n" +
            lpf_block("c3", c3) +
            "  }\n"
            "}\n";
        return parse_config(cfg);
    };

    SUBCASE("FAIL: master fails and names the child") {
        auto report = activate_tree(build("FAIL", "FAIL"));
        CHECK_FALSE(report.success());
        CHECK(report.lpfs.at("matrix/svc/c2").outcome == "FAILED");
        CHECK(report.lpfs.at("matrix/svc/c2").cause.find("barelpf unreachable") !=
              std::string::npos);
        CHECK(report.lpfs.at("matrix/svc/c1").outcome == "SUCCESS");
        CHECK(report.lpfs.at("matrix/svc/c3").outcome == "SUCCESS");
        rig.reap();
    }
    SUBCASE("IGNORE: master succeeds, child recorded as ignored failure") {
        auto report = activate_tree(build("IGNORE", "FAIL"));
        CHECK(report.success());
        CHECK(report.lpfs.at("matrix/svc/c2").outcome == "IGNORED_FAILURE");
        rig.reap();
    }
    SUBCASE("RECOVER with FAIL fallback: one retry, then failure") {
        auto report = activate_tree(build("RECOVER", "FAIL"));
        CHECK_FALSE(report.success());
        CHECK(report.lpfs.at("matrix/svc/c2").outcome == "FAILED");
        rig.reap();
    }
    SUBCASE("RECOVER with IGNORE fallback: one retry, then ignored") {
        auto report = activate_tree(build("RECOVER", "IGNORE"));
        CHECK(report.success());
        CHECK(report.lpfs.at("matrix/svc/c2").outcome == "IGNORED_FAILURE");
        rig.reap();
    }
}

TEST_CASE("permanently silent child: activation returns within its timeout plus one second") {
    BareRig rig;
    int p1 = net::pick_free_port();
    // the child wedges in module init and never answers the configure step
    std::string cfg =
        "System wedge {\n"
        "  barelpf_port = " + std::to_string(rig.bare_port) + "\n"
        "  activation_timeout_s = 20\n"
        "  Service svc {\n"
        "    Lpf stuck host=127.0.0.1 port=" + std::to_string(p1) + " {\n"
        "      activation_timeout_s = 2\n"
        "      Module wedge {\n"
        "        impl = sleeper\n"
        "        init_sleep_s = 600\n"
        "      }\n"
        "    }\n"
        "  }\n"
        "}\n";
    auto tree = parse_config(cfg);
    auto t0 = std::chrono::steady_clock::now();
    auto report = activate_tree(tree);
    auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
    CHECK_FALSE(report.success());
    CHECK(report.lpfs.at("wedge/svc/stuck").outcome == "FAILED");
    CHECK(report.lpfs.at("wedge/svc/stuck").cause.find("timeout") != std::string::npos);
    CHECK(elapsed < 3000);  // activation_timeout_s + 1 s
    rig.reap("", true);     // the wedged LPF ignores StopLocalLpf; force-kill it
    CHECK(harness::wait_until([&] { return !harness::port_listening(p1); }, 5000));
}

TEST_CASE("recovery succeeds when the failure is transient") {
    BareRig rig;
    int p1 = net::pick_free_port();
    int occupier_holds_port = p1;

    // occupy the child's port so the first spawn fails, then free it before
    // the retry: RECOVER should land on RECOVERED
    std::string err;
    int holder = net::listen_tcp(harness::kHost, occupier_holds_port, &err);
    REQUIRE(holder >= 0);

    std::string cfg =
        "System rec {\n"
        "  barelpf_port = " + std::to_string(rig.bare_port) + "\n"
        "  activation_timeout_s = 20\n"
        "  Service svc {\n"
        "    Lpf child host=127.0.0.1 port=" + std::to_string(p1) + " {\n"
        "      on_child_failure = RECOVER\n"
        "      recover_fallback = FAIL\n"
        "      activation_timeout_s = 10\n"
        "    }\n"
        "  }\n"
        "}\n";
    auto tree = parse_config(cfg);

    // free the port shortly after activation starts
    std::thread freer([&] {
        std::this_thread::sleep_for(std::chrono::milliseconds(300));
        net::close_fd(holder);
    });
    auto report = activate_tree(tree);
    freer.join();
    INFO(report.render());
    CHECK(report.success());
    CHECK(report.lpfs.at("rec/svc/child").outcome == "RECOVERED");
    rig.reap();
}
