#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "farm/hosts.hpp"
#include "farm/records.hpp"
#include "farm/staging.hpp"
#include "lpf/lpf.hpp"
#include "lpf/net.hpp"
#include "lpf/procsup.hpp"

namespace farm {

using lpf::FsmContext;
using lpf::Kv;
using lpf::Message;
using lpf::MethodResult;
using lpf::StateImpl;
using nlohmann::json;

namespace {

std::string rc(FsmContext& ctx, const std::string& key, const std::string& def = "") {
    return lpf::kv_get(*ctx.run_config, key, def);
}

int64_t rci(FsmContext& ctx, const std::string& key, int64_t def = 0) {
    return lpf::kv_get_int(*ctx.run_config, key, def);
}

MethodResult fail_with(FsmContext& ctx, const std::string& cause) {
    if (ctx.scratch->count("fail_cause") == 0) (*ctx.scratch)["fail_cause"] = cause;
    MethodResult r;
    r.next_state = "Failed";
    return r;
}

std::vector<std::pair<std::string, int>> parse_nodes(const std::string& csv) {
    std::vector<std::pair<std::string, int>> out;
    std::istringstream is(csv);
    std::string item;
    while (std::getline(is, item, ',')) {
        auto colon = item.rfind(':');
        if (colon == std::string::npos) continue;
        out.emplace_back(item.substr(0, colon), std::atoi(item.c_str() + colon + 1));
    }
    return out;
}

void kill_lm(FsmContext& ctx) {
    std::string handle = lpf::kv_get(*ctx.scratch, "lm_handle");
    if (ctx.lpf == nullptr || handle.empty()) return;
    try {
        ctx.lpf->supervisor()->signal(*ctx.lpf, handle, lpf::ProcSignal::Kill);
    } catch (const std::exception&) {
    }
}

Message bk_set_pass(FsmContext& ctx, const std::string& status, int64_t events_processed,
                    const std::string& fail_cause, bool set_calibrated) {
    Message m;
    m.verb = "BkSetPass";
    m.body = {{"run_id", rc(ctx, "run_id")},
              {"pass", rc(ctx, "pass", "PC")},
              {"status", status},
              {"events_processed", std::to_string(events_processed)},
              {"fail_cause", fail_cause},
              {"log_dir", rc(ctx, "run_dir")}};
    if (set_calibrated) m.body["calibrated"] = "1";
    m.destination = lpf::endpoint(rc(ctx, "bk_host"),
                                  static_cast<int>(rci(ctx, "bk_port")),
                                  rc(ctx, "bk_module", "bookkeeper"));
    return m;
}

Message run_complete(FsmContext& ctx, const std::string& outcome, int64_t events,
                     const std::string& cause) {
    Message m;
    m.verb = "RunComplete";
    m.body = {{"run_id", rc(ctx, "run_id")},
              {"pass", rc(ctx, "pass", "PC")},
              {"outcome", outcome},
              {"events", std::to_string(events)},
              {"cause", cause}};
    m.destination = lpf::endpoint(rc(ctx, "report_host"),
                                  static_cast<int>(rci(ctx, "report_port")),
                                  rc(ctx, "report_module", "fm"));
    return m;
}

struct RpCollect final : StateImpl {
    RpCollect() {
        bind("collect", [](FsmContext& ctx) {
            MethodResult r;
            auto header = read_xtc_header(rc(ctx, "xtc_path"));
            if (!header) {
                (*ctx.scratch)["fail_cause"] = "cannot read XTC " + rc(ctx, "xtc_path");
                r.auto_transition = "bad";
                return r;
            }
            if (header->run_id != rci(ctx, "run_id")) {
                (*ctx.scratch)["fail_cause"] = "XTC run id mismatch";
                r.auto_transition = "bad";
                return r;
            }
            int64_t claimed = rci(ctx, "events_total", -1);
            if (claimed >= 0 && claimed != header->events) {
                (*ctx.scratch)["fail_cause"] = "catalog and XTC disagree on event count";
                r.auto_transition = "bad";
                return r;
            }
            (*ctx.run_config)["events_total"] = std::to_string(header->events);
            r.auto_transition = "collected";
            return r;
        });
        bind("toLogDir", [](FsmContext&) { return MethodResult{.next_state = "MakeLogDir"}; });
        bind("toFailed", [](FsmContext& ctx) { return fail_with(ctx, "collect failed"); });
    }
};

struct RpLogDir final : StateImpl {
    RpLogDir() {
        bind("makeDir", [](FsmContext& ctx) {
            MethodResult r;
            std::string dir = rc(ctx, "workdir") + "/run_" + rc(ctx, "run_id");
            std::error_code ec;
            std::filesystem::create_directories(dir + "/locks", ec);
            if (ec) {
                (*ctx.scratch)["fail_cause"] = "cannot create run directory " + dir;
                r.auto_transition = "bad";
                return r;
            }
            (*ctx.run_config)["run_dir"] = dir;
            r.auto_transition = "made";
            return r;
        });
        bind("toStartLm", [](FsmContext&) { return MethodResult{.next_state = "StartLM"}; });
        bind("toFailed", [](FsmContext& ctx) { return fail_with(ctx, "log dir failed"); });
    }
};

struct RpStartLm final : StateImpl {
    RpStartLm() {
        bind("launchLm", [](FsmContext& ctx) {
            MethodResult r;
            int nodes = static_cast<int>(parse_nodes(rc(ctx, "nodes")).size());
            std::vector<std::string> argv{rc(ctx, "lm"),
                                          "--xtc", rc(ctx, "xtc_path"),
                                          "--host", rc(ctx, "lm_host"),
                                          "--port", std::to_string(rci(ctx, "lm_port")),
                                          "--nodes", std::to_string(std::max(nodes, 1))};
            try {
                std::string handle = ctx.lpf->supervisor()->start(
                    *ctx.lpf, argv, {}, {}, lpf::local_module(rc(ctx, "self_module", "rp")));
                (*ctx.scratch)["lm_handle"] = handle;
            } catch (const std::exception& ex) {
                (*ctx.scratch)["fail_cause"] = std::string("cannot start LM: ") + ex.what();
                r.auto_transition = "bad";
                return r;
            }
            r.auto_transition = "started";
            return r;
        });
        bind("toWaitLm", [](FsmContext&) { return MethodResult{.next_state = "WaitLm"}; });
        bind("toFailed", [](FsmContext& ctx) { return fail_with(ctx, "LM launch failed"); });
    }
};

struct RpWaitLm final : StateImpl {
    RpWaitLm() {
        bind("probe", [](FsmContext& ctx) {
            (*ctx.scratch)["__probe_host"] = rc(ctx, "lm_host");
            (*ctx.scratch)["__probe_port"] = std::to_string(rci(ctx, "lm_port"));
            (*ctx.scratch)["__probe_transition"] = "lmReady";
            return MethodResult{};
        });
        bind("toNodeConfig",
             [](FsmContext&) { return MethodResult{.next_state = "WriteNodeConfig"}; });
        bind("onTimeout", [](FsmContext& ctx) {
            kill_lm(ctx);
            return fail_with(ctx, "event distributor never became reachable");
        });
    }
};

struct RpNodeConfig final : StateImpl {
    RpNodeConfig() {
        bind("writeConfigs", [](FsmContext& ctx) {
            MethodResult r;
            auto nodes = parse_nodes(rc(ctx, "nodes"));
            std::string dir = rc(ctx, "run_dir");
            for (size_t i = 0; i < nodes.size(); i++) {
                std::ofstream out(dir + "/node_" + std::to_string(i) + ".conf");
                if (!out) {
                    (*ctx.scratch)["fail_cause"] = "cannot write node configuration";
                    r.auto_transition = "bad";
                    return r;
                }
                out << "run_id = " << rc(ctx, "run_id") << "\n"
                    << "node_id = " << i << "\n"
                    << "lm = " << rc(ctx, "lm_host") << ":" << rci(ctx, "lm_port") << "\n"
                    << "workdir = " << dir << "\n"
                    << "elf = " << rc(ctx, "elf") << "\n";
            }
            r.auto_transition = "written";
            return r;
        });
        bind("toStartNodes", [](FsmContext&) { return MethodResult{.next_state = "StartNodes"}; });
        bind("toFailed", [](FsmContext& ctx) { return fail_with(ctx, "node config failed"); });
    }
};

struct RpStartNodes final : StateImpl {
    RpStartNodes() {
        bind("startAll", [](FsmContext& ctx) {
            MethodResult r;
            auto nodes = parse_nodes(rc(ctx, "nodes"));
            (*ctx.scratch)["nodes_expected"] = std::to_string(nodes.size());
            for (size_t i = 0; i < nodes.size(); i++) {
                Message start;
                start.verb = "NpStart";
                start.body = {{"run_id", rc(ctx, "run_id")},
                              {"node_id", std::to_string(i)},
                              {"lm_host", rc(ctx, "lm_host")},
                              {"lm_port", std::to_string(rci(ctx, "lm_port"))},
                              {"elf", rc(ctx, "elf")},
                              {"elf_args", rc(ctx, "elf_args")},
                              {"workdir", rc(ctx, "run_dir")},
                              {"report_host", rc(ctx, "self_host")},
                              {"report_port", rc(ctx, "self_port")},
                              {"report_module", rc(ctx, "self_module", "rp")}};
                // np_timeout.X keys travel to the nodes as timeout.X
                for (const auto& [k, v] : *ctx.run_config)
                    if (k.rfind("np_timeout.", 0) == 0)
                        start.body["timeout." + k.substr(11)] = v;
                start.destination = lpf::endpoint(nodes[i].first, nodes[i].second,
                                                  rc(ctx, "np_module", "np"));
                r.out.push_back(std::move(start));
            }
            r.auto_transition = "started";
            return r;
        });
        bind("toWaitNodes", [](FsmContext&) { return MethodResult{.next_state = "WaitNodes"}; });
    }
};

struct RpWaitNodes final : StateImpl {
    RpWaitNodes() {
        bind("toConsistency",
             [](FsmContext&) { return MethodResult{.next_state = "CheckConsistency"}; });
        bind("toFailed", [](FsmContext& ctx) {
            return fail_with(ctx, "node failure");
        });
        bind("onAbort", [](FsmContext& ctx) {
            (*ctx.scratch)["fail_cause"] = "aborted by operator";
            return fail_with(ctx, "aborted by operator");
        });
        bind("onTimeout", [](FsmContext& ctx) {
            return fail_with(ctx, "nodes did not all report before the state timeout");
        });
    }
};

struct RpConsistency final : StateImpl {
    RpConsistency() {
        bind("check", [](FsmContext& ctx) {
            MethodResult r;
            int64_t total = rci(ctx, "events_total");
            int64_t sum = 0;
            json results = json::parse(lpf::kv_get(*ctx.scratch, "node_results", "[]"),
                                       nullptr, false);
            if (results.is_array())
                for (const auto& res : results)
                    sum += std::atoll(res.value("events", "0").c_str());
            (*ctx.scratch)["events_sum"] = std::to_string(sum);
            if (sum != total) {
                (*ctx.scratch)["fail_cause"] = "event conservation violated: nodes report " +
                                               std::to_string(sum) + " of " +
                                               std::to_string(total);
                r.auto_transition = "inconsistent";
                return r;
            }
            r.auto_transition = "consistent";
            return r;
        });
        bind("toBookkeep", [](FsmContext&) { return MethodResult{.next_state = "Bookkeep"}; });
        bind("toFailed", [](FsmContext& ctx) { return fail_with(ctx, "inconsistent"); });
    }
};

struct RpBookkeep final : StateImpl {
    RpBookkeep() {
        bind("record", [](FsmContext& ctx) {
            MethodResult r;
            int64_t sum = lpf::kv_get_int(*ctx.scratch, "events_sum");
            bool calibrates = rc(ctx, "pass", "PC") == "PC";
            r.out.push_back(bk_set_pass(ctx, "DONE", sum, "", calibrates));
            return r;
        });
        bind("onBooked", [](FsmContext& ctx) {
            MethodResult r;
            if (lpf::kv_get(*ctx.payload, "ok") != "1") {
                (*ctx.scratch)["fail_cause"] =
                    "bookkeeping rejected the record: " + lpf::kv_get(*ctx.payload, "error");
                r.next_state = "Failed";
                return r;
            }
            r.next_state = "PostProcess";
            return r;
        });
        bind("onTimeout",
             [](FsmContext& ctx) { return fail_with(ctx, "bookkeeping did not answer"); });
    }
};

struct RpPostProcess final : StateImpl {
    RpPostProcess() {
        bind("qa", [](FsmContext& ctx) {
            MethodResult r;
            std::string cmd = rc(ctx, "qa_cmd");
            if (!cmd.empty() && ctx.lpf != nullptr) {
                std::istringstream is(cmd);
                std::vector<std::string> argv;
                std::string t;
                while (is >> t) argv.push_back(t);
                try {
                    ctx.lpf->supervisor()->start(*ctx.lpf, argv, {}, {});
                } catch (const std::exception& ex) {
                    ctx.lpf->raise_alarm(lpf::AlarmLevel::Warning, "rp",
                                         std::string("qa hook failed to start: ") + ex.what());
                }
            }
            r.auto_transition = "done";
            return r;
        });
        bind("toDone", [](FsmContext&) { return MethodResult{.next_state = "Done"}; });
    }
};

struct RpDone final : StateImpl {
    RpDone() {
        bind("finish", [](FsmContext& ctx) {
            MethodResult r;
            kill_lm(ctx);
            r.out.push_back(run_complete(ctx, "DONE",
                                         lpf::kv_get_int(*ctx.scratch, "events_sum"), ""));
            return r;
        });
    }
};

struct RpFailed final : StateImpl {
    RpFailed() {
        bind("failRun", [](FsmContext& ctx) {
            MethodResult r;
            kill_lm(ctx);
            std::string cause = lpf::kv_get(*ctx.scratch, "fail_cause", "unknown");
            r.out.push_back(bk_set_pass(ctx, "FAILED",
                                        lpf::kv_get_int(*ctx.scratch, "events_sum"), cause,
                                        false));
            r.out.push_back(run_complete(ctx, "FAILED", 0, cause));
            return r;
        });
    }
};

}  // namespace

void register_rp_states(lpf::StateRegistry& registry) {
    registry.add("rp.collect", [] { return std::make_unique<RpCollect>(); });
    registry.add("rp.logdir", [] { return std::make_unique<RpLogDir>(); });
    registry.add("rp.startlm", [] { return std::make_unique<RpStartLm>(); });
    registry.add("rp.waitlm", [] { return std::make_unique<RpWaitLm>(); });
    registry.add("rp.nodeconfig", [] { return std::make_unique<RpNodeConfig>(); });
    registry.add("rp.startnodes", [] { return std::make_unique<RpStartNodes>(); });
    registry.add("rp.waitnodes", [] { return std::make_unique<RpWaitNodes>(); });
    registry.add("rp.consistency", [] { return std::make_unique<RpConsistency>(); });
    registry.add("rp.bookkeep", [] { return std::make_unique<RpBookkeep>(); });
    registry.add("rp.postprocess", [] { return std::make_unique<RpPostProcess>(); });
    registry.add("rp.done", [] { return std::make_unique<RpDone>(); });
    registry.add("rp.failed", [] { return std::make_unique<RpFailed>(); });
}

void register_farm_states(lpf::StateRegistry& registry) {
    register_np_states(registry);
    register_rp_states(registry);
}

void RpHostModule::init(lpf::Lpf& lpf, const Kv& config) {
    Kv cfg = config;
    if (cfg.find("fsm_file") == cfg.end() && cfg.find("fsm_text") == cfg.end()) {
        std::string dir = lpf::kv_get(cfg, "fsm_dir");
        if (!dir.empty()) cfg["fsm_file"] = dir + "/run_processing.fsm";
    }
    FsmHostModule::init(lpf, cfg);
}

std::vector<Message> RpHostModule::do_message(lpf::Lpf& lpf, const Message& m) {
    if (m.verb == "RpStart") {
        if (instance() != nullptr && instance()->status() == lpf::FsmStatus::Running)
            return {m.answer("RpStartAnswer", {{"ok", "0"}, {"error", "run in progress"}})};
        results_.clear();
        failed_nodes_ = 0;
        expected_nodes_ = static_cast<int>(parse_nodes(lpf::kv_get(m.body, "nodes")).size());
        Kv run_config = m.body;
        run_config["self_module"] = name_;
        run_config["self_host"] = lpf.options().host;
        run_config["self_port"] = std::to_string(lpf.options().port);
        auto out = host_start(lpf, std::move(run_config));
        Kv ack{{"ok", instance() != nullptr &&
                          instance()->status() != lpf::FsmStatus::Faulted
                      ? "1"
                      : "0"}};
        if (instance() != nullptr) ack["state"] = instance()->current_state();
        out.push_back(m.answer("RpStartAnswer", std::move(ack)));
        return out;
    }
    return FsmHostModule::do_message(lpf, m);
}

std::vector<Message> RpHostModule::on_unmatched(lpf::Lpf& lpf, const Message& m) {
    if (m.verb != "NodeResult") return {};
    if (instance() == nullptr || instance()->status() != lpf::FsmStatus::Running) return {};
    results_.push_back(m.body);
    if (lpf::kv_get(m.body, "ok") != "1") failed_nodes_++;

    json arr = json::array();
    for (const auto& res : results_) arr.push_back(res);
    instance()->scratch()["node_results"] = arr.dump();

    const lpf::StateDef* sd = instance()->definition().state(instance()->current_state());
    bool in_barrier = sd != nullptr && sd->transitions.count("allDone") > 0;
    if (!in_barrier) return {};

    int64_t tolerance = lpf::kv_get_int(instance()->run_config(), "node_fail_tolerance", 0);
    if (failed_nodes_ > tolerance) {
        instance()->scratch()["fail_cause"] =
            "node " + lpf::kv_get(m.body, "node_id") + " failed: " +
            lpf::kv_get(m.body, "cause", "unknown");
        return host_step(lpf, "nodeFailed", m.body);
    }
    if (static_cast<int>(results_.size()) >= expected_nodes_)
        return host_step(lpf, "allDone", {});
    return {};
}

std::vector<Message> RpHostModule::run(lpf::Lpf& lpf) {
    auto out = FsmHostModule::run(lpf);
    if (instance() != nullptr && instance()->status() == lpf::FsmStatus::Running) {
        auto& scratch = instance()->scratch();
        auto pit = scratch.find("__probe_port");
        if (pit != scratch.end()) {
            std::string err;
            int fd = lpf::net::connect_tcp(lpf::kv_get(scratch, "__probe_host", "127.0.0.1"),
                                           std::atoi(pit->second.c_str()), 30, &err);
            if (fd >= 0) {
                lpf::net::close_fd(fd);
                std::string transition = lpf::kv_get(scratch, "__probe_transition", "lmReady");
                scratch.erase("__probe_host");
                scratch.erase("__probe_port");
                scratch.erase("__probe_transition");
                auto stepped = host_step(lpf, transition, {});
                out.insert(out.end(), stepped.begin(), stepped.end());
            }
        }
    }
    return out;
}

}  // namespace farm
