#include <filesystem>
#include <sstream>

#include "farm/hosts.hpp"
#include "lpf/lpf.hpp"
#include "lpf/procsup.hpp"

namespace farm {

using lpf::FsmContext;
using lpf::Kv;
using lpf::Message;
using lpf::MethodResult;
using lpf::StateImpl;

namespace {

std::vector<std::string> split_args(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string t;
    while (is >> t) out.push_back(t);
    return out;
}

std::string rc(FsmContext& ctx, const std::string& key, const std::string& def = "") {
    return lpf::kv_get(*ctx.run_config, key, def);
}

std::string lock_path(FsmContext& ctx) {
    return rc(ctx, "workdir") + "/locks/node_" + rc(ctx, "node_id") + ".lock";
}

MethodResult fail_with(FsmContext& ctx, const std::string& cause) {
    (*ctx.scratch)["fail_cause"] = cause;
    MethodResult r;
    r.next_state = "Failed";
    return r;
}

struct NpConfigure final : StateImpl {
    NpConfigure() {
        bind("setup", [](FsmContext& ctx) {
            MethodResult r;
            if (rc(ctx, "run_id").empty() || rc(ctx, "workdir").empty() ||
                rc(ctx, "node_id").empty()) {
                (*ctx.scratch)["fail_cause"] = "incomplete node configuration";
                r.auto_transition = "configured";  // validation happens again in later states
                return r;
            }
            std::filesystem::create_directories(rc(ctx, "workdir") + "/locks");
            r.auto_transition = "configured";
            return r;
        });
        bind("toFetch", [](FsmContext&) {
            MethodResult r;
            r.next_state = "FetchRange";
            return r;
        });
    }
};

struct NpFetch final : StateImpl {
    NpFetch() {
        bind("requestRange", [](FsmContext& ctx) {
            MethodResult r;
            Message q;
            q.verb = "LmFetch";
            q.body = {{"node_id", rc(ctx, "node_id")}};
            q.destination = lpf::endpoint(rc(ctx, "lm_host"),
                                          static_cast<int>(lpf::kv_get_int(*ctx.run_config,
                                                                           "lm_port")),
                                          rc(ctx, "lm_module", "lm"));
            r.out.push_back(std::move(q));
            return r;
        });
        bind("onRange", [](FsmContext& ctx) {
            MethodResult r;
            (*ctx.scratch)["events_assigned"] = lpf::kv_get(*ctx.payload, "count", "0");
            (*ctx.scratch)["first_event"] = lpf::kv_get(*ctx.payload, "first", "0");
            r.next_state = "StartElf";
            return r;
        });
        bind("onTimeout",
             [](FsmContext& ctx) { return fail_with(ctx, "no answer from the event distributor"); });
    }
};

struct NpStartElf final : StateImpl {
    NpStartElf() {
        bind("launch", [](FsmContext& ctx) {
            MethodResult r;
            std::vector<std::string> argv{rc(ctx, "elf")};
            argv.push_back("--events");
            argv.push_back(lpf::kv_get(*ctx.scratch, "events_assigned", "0"));
            for (auto& a : split_args(rc(ctx, "elf_args"))) argv.push_back(a);
            lpf::ProcessLimits limits;
            limits.max_runtime_s =
                static_cast<int>(lpf::kv_get_int(*ctx.run_config, "elf_max_runtime_s", 0));
            try {
                std::string handle = ctx.lpf->supervisor()->start(
                    *ctx.lpf, argv, {}, limits, lpf::local_module(rc(ctx, "self_module", "np")));
                (*ctx.scratch)["elf_handle"] = handle;
            } catch (const std::exception& ex) {
                return fail_with(ctx, std::string("cannot launch worker: ") + ex.what());
            }
            r.auto_transition = "started";
            return r;
        });
        bind("toWait", [](FsmContext&) {
            MethodResult r;
            r.next_state = "WaitElf";
            return r;
        });
    }
};

struct NpWaitElf final : StateImpl {
    NpWaitElf() {
        bind("onElfEvent", [](FsmContext& ctx) {
            MethodResult r;
            std::string state = lpf::kv_get(*ctx.payload, "state");
            if (state == "RUNNING" || state == "SUSPENDED") {
                r.next_state = "WaitElf";  // stay put
                return r;
            }
            if (state == "EXITED") {
                if (lpf::kv_get(*ctx.payload, "exit_code") == "0") {
                    r.next_state = "CheckLocks";
                    return r;
                }
                return fail_with(ctx, "worker exited with code " +
                                          lpf::kv_get(*ctx.payload, "exit_code"));
            }
            return fail_with(ctx, "worker " + state + ": " + lpf::kv_get(*ctx.payload, "cause"));
        });
        bind("onTimeout", [](FsmContext& ctx) {
            std::string handle = lpf::kv_get(*ctx.scratch, "elf_handle");
            if (ctx.lpf != nullptr && !handle.empty()) {
                try {
                    ctx.lpf->supervisor()->signal(*ctx.lpf, handle, lpf::ProcSignal::Kill);
                } catch (const std::exception&) {
                }
            }
            return fail_with(ctx, "worker did not finish before the state timeout");
        });
    }
};

struct NpCheckLocks final : StateImpl {
    NpCheckLocks() {
        bind("check", [](FsmContext& ctx) {
            MethodResult r;
            if (std::filesystem::exists(lock_path(ctx))) {
                (*ctx.scratch)["fail_cause"] = "LockOutstanding: " + lock_path(ctx);
                r.auto_transition = "lockFound";
            } else {
                r.auto_transition = "clean";
            }
            return r;
        });
        bind("toGather", [](FsmContext&) {
            MethodResult r;
            r.next_state = "GatherOutput";
            return r;
        });
        bind("toFailed", [](FsmContext&) {
            MethodResult r;
            r.next_state = "Failed";
            return r;
        });
    }
};

struct NpGather final : StateImpl {
    NpGather() {
        bind("parse", [](FsmContext& ctx) {
            MethodResult r;
            std::string handle = lpf::kv_get(*ctx.scratch, "elf_handle");
            long long events = -1;
            if (ctx.lpf != nullptr && !handle.empty()) {
                auto fetched =
                    ctx.lpf->supervisor()->fetch(*ctx.lpf, handle, lpf::ProcChannel::Stdout, 0);
                for (const auto& line : fetched.lines) {
                    long long n = 0;
                    if (std::sscanf(line.c_str(), "processed %lld events", &n) == 1) events = n;
                }
            }
            if (events < 0) {
                (*ctx.scratch)["fail_cause"] = "OutputUnparseable: no summary line";
                r.auto_transition = "unparseable";
                return r;
            }
            (*ctx.scratch)["events_processed"] = std::to_string(events);
            r.auto_transition = "gathered";
            return r;
        });
        bind("toReport", [](FsmContext&) {
            MethodResult r;
            r.next_state = "Report";
            return r;
        });
        bind("toFailed", [](FsmContext&) {
            MethodResult r;
            r.next_state = "Failed";
            return r;
        });
    }
};

struct NpReport final : StateImpl {
    NpReport() {
        bind("sendResult", [](FsmContext& ctx) {
            MethodResult r;
            Message res;
            res.verb = "NodeResult";
            res.body = {{"run_id", rc(ctx, "run_id")},
                        {"node_id", rc(ctx, "node_id")},
                        {"ok", "1"},
                        {"events", lpf::kv_get(*ctx.scratch, "events_processed", "0")}};
            res.destination = lpf::endpoint(
                rc(ctx, "report_host"),
                static_cast<int>(lpf::kv_get_int(*ctx.run_config, "report_port")),
                rc(ctx, "report_module", "rp"));
            r.out.push_back(std::move(res));
            r.auto_transition = "reported";
            return r;
        });
        bind("toDone", [](FsmContext&) {
            MethodResult r;
            r.next_state = "Done";
            return r;
        });
    }
};

struct NpDone final : StateImpl {
    NpDone() {
        bind("finish", [](FsmContext&) { return MethodResult{}; });
    }
};

struct NpFailed final : StateImpl {
    NpFailed() {
        bind("reportFailure", [](FsmContext& ctx) {
            MethodResult r;
            Message res;
            res.verb = "NodeResult";
            res.body = {{"run_id", rc(ctx, "run_id")},
                        {"node_id", rc(ctx, "node_id")},
                        {"ok", "0"},
                        {"events", "0"},
                        {"cause", lpf::kv_get(*ctx.scratch, "fail_cause", "unknown")}};
            res.destination = lpf::endpoint(
                rc(ctx, "report_host"),
                static_cast<int>(lpf::kv_get_int(*ctx.run_config, "report_port")),
                rc(ctx, "report_module", "rp"));
            r.out.push_back(std::move(res));
            return r;
        });
    }
};

}  // namespace

void register_np_states(lpf::StateRegistry& registry) {
    registry.add("np.configure", [] { return std::make_unique<NpConfigure>(); });
    registry.add("np.fetch", [] { return std::make_unique<NpFetch>(); });
    registry.add("np.startelf", [] { return std::make_unique<NpStartElf>(); });
    registry.add("np.waitelf", [] { return std::make_unique<NpWaitElf>(); });
    registry.add("np.checklocks", [] { return std::make_unique<NpCheckLocks>(); });
    registry.add("np.gather", [] { return std::make_unique<NpGather>(); });
    registry.add("np.report", [] { return std::make_unique<NpReport>(); });
    registry.add("np.done", [] { return std::make_unique<NpDone>(); });
    registry.add("np.failed", [] { return std::make_unique<NpFailed>(); });
}

void NpHostModule::init(lpf::Lpf& lpf, const Kv& config) {
    Kv cfg = config;
    if (cfg.find("fsm_file") == cfg.end() && cfg.find("fsm_text") == cfg.end()) {
        std::string dir = lpf::kv_get(cfg, "fsm_dir");
        if (!dir.empty()) cfg["fsm_file"] = dir + "/node_processing.fsm";
    }
    FsmHostModule::init(lpf, cfg);
}

std::vector<Message> NpHostModule::do_message(lpf::Lpf& lpf, const Message& m) {
    if (m.verb == "NpStart") {
        Kv run_config = m.body;
        run_config["self_module"] = name_;
        auto out = host_start(lpf, std::move(run_config));
        lpf::Kv ack{{"ok", instance() != nullptr &&
                               instance()->status() != lpf::FsmStatus::Faulted
                           ? "1"
                           : "0"}};
        if (instance() != nullptr) ack["state"] = instance()->current_state();
        out.push_back(m.answer("NpStartAnswer", std::move(ack)));
        return out;
    }
    return FsmHostModule::do_message(lpf, m);
}

}  // namespace farm
