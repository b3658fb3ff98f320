#include <doctest.h>

#include <chrono>
#include <sys/wait.h>
#include <thread>

#include "harness.hpp"
#include "lpf/errors.hpp"
#include "lpf/procsup.hpp"

using namespace lpf;

namespace {

const std::string kWorker = std::string(TOOLS_DIR) + "/mock_worker";

struct ProcRig {
    Lpf lpf{harness::options("proc", 0)};
    ProcessSupervisor& sup() { return *lpf.supervisor(); }

    /// Pump the loop (real time) until pred or timeout.
    bool pump_until(const std::function<bool()>& pred, int timeout_ms) {
        auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
        while (std::chrono::steady_clock::now() < deadline) {
            lpf.run_once();
            if (pred()) return true;
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
        }
        return pred();
    }

    bool wait_state(const std::string& h, ProcState s, int timeout_ms = 5000) {
        return pump_until([&] { return sup().query(lpf, h).state == s; }, timeout_ms);
    }
};

}  // namespace

TEST_CASE("clean exit reaches EXITED with code 0") {
    ProcRig rig;
    auto h = rig.sup().start(rig.lpf, {kWorker, "--lines", "0"}, {}, {});
    CHECK(rig.wait_state(h, ProcState::Exited));
    auto st = rig.sup().query(rig.lpf, h);
    REQUIRE(st.exit_code.has_value());
    CHECK(*st.exit_code == 0);
}

TEST_CASE("nonexistent executable lands in LOST with a cause, loop uninterrupted") {
    ProcRig rig;
    auto h = rig.sup().start(rig.lpf, {"/no/such/binary"}, {}, {});
    CHECK(rig.wait_state(h, ProcState::Lost));
    auto st = rig.sup().query(rig.lpf, h);
    CHECK(st.cause.find("exec failed") != std::string::npos);
    for (int i = 0; i < 10; i++) rig.lpf.run_once();  // still healthy
}

TEST_CASE("worker printing 100 lines: all retrievable after EXITED(0)") {
    ProcRig rig;
    auto h = rig.sup().start(rig.lpf, {kWorker, "--lines", "100"}, {}, {});
    CHECK(rig.wait_state(h, ProcState::Exited));
    auto out = rig.sup().fetch(rig.lpf, h, ProcChannel::Stdout, 0);
    REQUIRE(out.lines.size() == 100);
    CHECK(out.lines.front() == "line 0");
    CHECK(out.lines.back() == "line 99");
    CHECK(out.dropped_before == 0);
}

TEST_CASE("exit code 3 reported") {
    ProcRig rig;
    auto h = rig.sup().start(rig.lpf, {kWorker, "--exit-code", "3"}, {}, {});
    CHECK(rig.wait_state(h, ProcState::Exited));
    CHECK(*rig.sup().query(rig.lpf, h).exit_code == 3);
}

TEST_CASE("unknown handle raises") {
    ProcRig rig;
    CHECK_THROWS_AS((void)rig.sup().query(rig.lpf, "proc-999"), LpfError);
    CHECK_THROWS_AS((void)rig.sup().fetch(rig.lpf, "proc-999", ProcChannel::Stdout, 0), LpfError);
}

TEST_CASE("fetch from a silent child is empty; advancing from_line never duplicates") {
    ProcRig rig;
    auto h = rig.sup().start(rig.lpf, {kWorker, "--lines", "0", "--sleep", "0.3"}, {}, {});
    rig.lpf.run_once();
    auto early = rig.sup().fetch(rig.lpf, h, ProcChannel::Stdout, 0);
    CHECK(early.lines.empty());
    CHECK(rig.wait_state(h, ProcState::Exited));

    auto h2 = rig.sup().start(rig.lpf, {kWorker, "--lines", "10"}, {}, {});
    CHECK(rig.wait_state(h2, ProcState::Exited));
    auto first = rig.sup().fetch(rig.lpf, h2, ProcChannel::Stdout, 0);
    auto second = rig.sup().fetch(rig.lpf, h2, ProcChannel::Stdout, first.next_line);
    CHECK(first.lines.size() == 10);
    CHECK(second.lines.empty());  // nothing new, nothing repeated
}

TEST_CASE("output beyond the cap drops oldest lines and marks the gap") {
    ProcRig rig;
    ProcessLimits limits;
    limits.max_output_lines = 10;
    auto h = rig.sup().start(rig.lpf, {kWorker, "--lines", "25"}, {}, limits);
    CHECK(rig.wait_state(h, ProcState::Exited));
    auto out = rig.sup().fetch(rig.lpf, h, ProcChannel::Stdout, 0);
    REQUIRE(out.lines.size() == 11);  // 1 drop marker + 10 newest
    CHECK(out.lines[0].find("15 lines dropped") != std::string::npos);
    CHECK(out.lines[1] == "line 15");
    CHECK(out.lines.back() == "line 24");
    CHECK(out.dropped_before == 15);
}

TEST_CASE("KILL on a sleeping worker reaches SIGNALED quickly") {
    ProcRig rig;
    auto h = rig.sup().start(rig.lpf, {kWorker, "--hang"}, {}, {});
    CHECK(rig.wait_state(h, ProcState::Running));
    rig.sup().signal(rig.lpf, h, ProcSignal::Kill);
    CHECK(rig.wait_state(h, ProcState::Signaled, 2000));
}

TEST_CASE("signals on terminal handles are invalid transitions") {
    ProcRig rig;
    auto h = rig.sup().start(rig.lpf, {kWorker, "--lines", "1"}, {}, {});
    CHECK(rig.wait_state(h, ProcState::Exited));
    CHECK_THROWS_AS(rig.sup().signal(rig.lpf, h, ProcSignal::Kill), LpfError);
    CHECK_THROWS_AS(rig.sup().signal(rig.lpf, h, ProcSignal::Continue), LpfError);
}

TEST_CASE("SUSPEND then CONTINUE a ticking worker leaves a gap in its timestamps") {
    ProcRig rig;
    auto h = rig.sup().start(rig.lpf, {kWorker, "--tick-ms", "25", "--ticks", "60"}, {}, {});
    CHECK(rig.wait_state(h, ProcState::Running));
    rig.pump_until([&] { return rig.sup().query(rig.lpf, h).stdout_lines >= 3; }, 4000);

    rig.sup().signal(rig.lpf, h, ProcSignal::Suspend);
    CHECK(rig.wait_state(h, ProcState::Suspended, 2000));
    std::this_thread::sleep_for(std::chrono::milliseconds(400));
    rig.sup().signal(rig.lpf, h, ProcSignal::Continue);
    CHECK(rig.wait_state(h, ProcState::Running, 2000));
    CHECK(rig.wait_state(h, ProcState::Exited, 6000));

    auto out = rig.sup().fetch(rig.lpf, h, ProcChannel::Stdout, 0);
    REQUIRE(out.lines.size() >= 10);
    int64_t max_gap = 0;
    int64_t prev = -1;
    for (const auto& line : out.lines) {
        long long idx, ts;
        if (sscanf(line.c_str(), "tick %lld %lld", &idx, &ts) == 2) {
            if (prev >= 0) max_gap = std::max<int64_t>(max_gap, ts - prev);
            prev = ts;
        }
    }
    CHECK(max_gap >= 300);  // the suspension window shows in the output
}

TEST_CASE("runaway child exceeding its runtime budget is killed and reported") {
    ProcRig rig;
    ProcessLimits limits;
    limits.max_runtime_s = 1;
    auto h = rig.sup().start(rig.lpf, {kWorker, "--hang"}, {}, limits);
    CHECK(rig.wait_state(h, ProcState::Signaled, 5000));
    auto st = rig.sup().query(rig.lpf, h);
    CHECK(st.cause.find("runtime budget") != std::string::npos);
    bool alarmed = false;
    for (const auto& a : rig.lpf.recent_alarms())
        if (a.text.find("runtime budget") != std::string::npos) alarmed = true;
    CHECK(alarmed);
}

TEST_CASE("five children exiting are all reported; child table empties; no zombies") {
    ProcRig rig;
    std::vector<std::string> handles;
    for (int i = 0; i < 5; i++)
        handles.push_back(rig.sup().start(rig.lpf, {kWorker, "--lines", "2"}, {}, {}));
    CHECK(rig.pump_until(
        [&] {
            for (const auto& h : handles)
                if (rig.sup().query(rig.lpf, h).state != ProcState::Exited) return false;
            return true;
        },
        5000));
    CHECK(rig.sup().live_children() == 0);
    // the OS has no unreaped children of this process
    int status = 0;
    pid_t w = waitpid(-1, &status, WNOHANG);
    bool no_zombies = (w == 0) || (w == -1 && errno == ECHILD);
    CHECK(no_zombies);
}

TEST_CASE("every state change produces exactly one transition event") {
    ProcRig rig;
    auto log = std::make_shared<harness::MsgLog>();
    rig.lpf.register_module({"watcher", ModuleKind::Passive, {}},
                            std::make_unique<harness::RecordingSink>(log));
    auto h = rig.sup().start(rig.lpf, {kWorker, "--lines", "1"}, {}, {},
                             local_module("watcher"));
    CHECK(rig.wait_state(h, ProcState::Exited));
    rig.pump_until([&] { return log->count.load() >= 2; }, 2000);
    auto events = log->snapshot();
    std::vector<std::string> states;
    for (const auto& e : events) {
        CHECK(e.verb == "ProcEvent");
        CHECK(kv_get(e.body, "handle") == h);
        states.push_back(kv_get(e.body, "state"));
    }
    CHECK(states == std::vector<std::string>{"RUNNING", "EXITED"});
}

TEST_CASE("message surface: Start, QueryStatus, FetchOutput, Signal") {
    ProcRig rig;
    Message start;
    start.verb = "Start";
    start.body = {{"argv", "[\"" + kWorker + "\",\"--lines\",\"3\"]"}};
    start.source = local_module("watcher");
    start.destination = local_module("sysproc");
    auto log = std::make_shared<harness::MsgLog>();
    rig.lpf.register_module({"watcher", ModuleKind::Passive, {}},
                            std::make_unique<harness::RecordingSink>(log));
    rig.lpf.send(start);
    rig.pump_until([&] { return log->count.load() >= 1; }, 3000);
    auto msgs = log->snapshot();
    REQUIRE_FALSE(msgs.empty());
    CHECK(msgs[0].verb == "StartAnswer");
    std::string h = kv_get(msgs[0].body, "handle");
    REQUIRE_FALSE(h.empty());

    rig.pump_until([&] { return rig.sup().query(rig.lpf, h).state == ProcState::Exited; }, 4000);

    Message q;
    q.verb = "QueryStatus";
    q.body = {{"handle", h}};
    q.source = local_module("watcher");
    q.destination = local_module("sysproc");
    rig.lpf.send(q);
    auto saw_exited = [&] {
        for (const auto& m : log->snapshot())
            if (m.verb == "QueryStatusAnswer" && kv_get(m.body, "state") == "EXITED") return true;
        return false;
    };
    CHECK(rig.pump_until(saw_exited, 3000));
}
