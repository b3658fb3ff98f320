#include <doctest.h>

#include <chrono>
#include <fstream>
#include <random>

#include "harness.hpp"
#include "lpf/fsm.hpp"

using namespace lpf;

namespace {

/// Scripted state whose methods are provided by the test.
class Scripted final : public StateImpl {
public:
    using Script = std::map<std::string, std::function<MethodResult(FsmContext&)>>;
    explicit Scripted(const Script& script) {
        for (const auto& [name, fn] : script) bind(name, fn);
    }
};

StateRegistry scripted_registry(const std::string& impl, Scripted::Script script) {
    StateRegistry reg;
    reg.add(impl, [script] { return std::make_unique<Scripted>(script); });
    return reg;
}

/// Registry whose single impl records hook calls into an external log and
/// advances along a provided next-state table.
StateRegistry recording_registry(std::shared_ptr<std::vector<std::string>> log,
                                 std::map<std::string, std::string> next_of) {
    Scripted::Script script;
    script["onEnter"] = [log](FsmContext& ctx) {
        log->push_back("entry:" + ctx.state_name);
        return MethodResult{};
    };
    script["onLeave"] = [log](FsmContext& ctx) {
        log->push_back("exit:" + ctx.state_name);
        return MethodResult{};
    };
    script["go"] = [log, next_of](FsmContext& ctx) {
        log->push_back("action:" + ctx.state_name);
        MethodResult r;
        r.next_state = next_of.at(ctx.state_name);
        return r;
    };
    StateRegistry reg;
    reg.add("rec", [script] { return std::make_unique<Scripted>(script); });
    return reg;
}

FsmDefinition linear_def(int n_states, bool hooks) {
    std::string text = "FSM: Lin\nbegin: S0\n";
    for (int i = 0; i < n_states; i++) {
        std::string s = "S" + std::to_string(i);
        text += "state: " + s + " isA: rec\n";
        if (hooks) {
            text += "state: " + s + " onEntry: onEnter\n";
            text += "state: " + s + " onExit: onLeave\n";
        }
        if (i + 1 < n_states) text += "state: " + s + " onTransition: go do: go\n";
    }
    return parse_fsm(text);
}

std::map<std::string, std::string> linear_next(int n_states) {
    std::map<std::string, std::string> next;
    for (int i = 0; i + 1 < n_states; i++)
        next["S" + std::to_string(i)] = "S" + std::to_string(i + 1);
    return next;
}

}  // namespace

TEST_CASE("three-line definition parses to one state with begin A") {
    auto def = parse_fsm("FSM: T\nbegin: A\nstate: A isA: Terminal\n");
    CHECK(def.name == "T");
    CHECK(def.begin == "A");
    REQUIRE(def.states.size() == 1);
    CHECK(def.states[0].first == "A");
    CHECK(def.states[0].second.impl == "Terminal");
}

TEST_CASE("timeout clause binds seconds to the state") {
    auto def = parse_fsm("FSM: T\nbegin: RunElf\nstate: RunElf isA: X\n"
                         "state: RunElf timeout: 3600\n");
    REQUIRE(def.state("RunElf") != nullptr);
    CHECK(def.state("RunElf")->timeout_s == 3600);
}

TEST_CASE("comments and blank lines are ignored; clauses for one state merge") {
    auto def = parse_fsm("# header comment\n\nFSM: M\nbegin: A\n"
                         "state: A isA: Impl   # trailing comment\n\n"
                         "state: A onEntry: enterA\n"
                         "state: A onTransition: t do: m\n"
                         "state: A onTransition: t do: m\n"  // exact duplicate: fine
                         "state: B isA: Impl\n");
    CHECK(def.states.size() == 2);
    CHECK(def.state("A")->on_entry == "enterA");
    CHECK(def.state("A")->transitions.at("t") == "m");
}

TEST_CASE("parse errors carry line numbers") {
    try {
        parse_fsm("FSM: X\nbegin: A\nstate: A isA: I\nbogus: clause here\n");
        FAIL("expected throw");
    } catch (const FsmParseError& ex) {
        CHECK(ex.line() == 4);
    }
}

TEST_CASE("conflicting duplicate bindings are errors") {
    CHECK_THROWS_AS(parse_fsm("FSM: X\nbegin: A\nstate: A isA: I\nstate: A isA: J\n"),
                    FsmParseError);
    CHECK_THROWS_AS(parse_fsm("FSM: X\nbegin: A\nstate: A isA: I\n"
                              "state: A onTransition: t do: m1\n"
                              "state: A onTransition: t do: m2\n"),
                    FsmParseError);
}

TEST_CASE("missing FSM name / begin are parse errors") {
    CHECK_THROWS_AS(parse_fsm("begin: A\nstate: A isA: I\n"), FsmParseError);
    CHECK_THROWS_AS(parse_fsm("FSM: X\nstate: A isA: I\n"), FsmParseError);
}

TEST_CASE("validation catches undefined begin, unknown impls, bad timeouts") {
    StateRegistry reg = scripted_registry("I", {});
    auto d1 = parse_fsm("FSM: X\nbegin: Nope\nstate: A isA: I\n");
    auto errs = validate_fsm(d1, reg);
    REQUIRE(errs.size() == 1);
    CHECK(errs[0].find("Nope") != std::string::npos);

    auto d2 = parse_fsm("FSM: X\nbegin: A\nstate: A isA: Mystery\n");
    errs = validate_fsm(d2, reg);
    REQUIRE(errs.size() == 1);
    CHECK(errs[0].find("UnknownImplementation") != std::string::npos);

    auto d3 = parse_fsm("FSM: X\nbegin: A\nstate: A isA: I\nstate: A timeout: 0\n");
    errs = validate_fsm(d3, reg);
    REQUIRE(errs.size() == 1);
    CHECK(errs[0].find("InvalidTimeout") != std::string::npos);

    auto d4 = parse_fsm("FSM: X\nbegin: A\nstate: A isA: I\n");
    CHECK(validate_fsm(d4, reg).empty());
}

TEST_CASE("instantiating an unvalidated definition throws ValidationRequired") {
    StateRegistry reg = scripted_registry("I", {});
    auto def = parse_fsm("FSM: X\nbegin: A\nstate: A isA: Mystery\n");
    CHECK_THROWS_AS(FsmInstance(def, reg, {}), LpfError);
}

TEST_CASE("single terminal state finishes on start; trace is [entry(A)]") {
    auto log = std::make_shared<std::vector<std::string>>();
    auto reg = recording_registry(log, {});
    auto def = parse_fsm("FSM: T\nbegin: A\nstate: A isA: rec\nstate: A onEntry: onEnter\n");
    FsmInstance inst(def, reg, {});
    CHECK(inst.status() == FsmStatus::Ready);
    auto oc = inst.start(nullptr, Millis(0), 0);
    CHECK(oc.ok);
    CHECK(inst.status() == FsmStatus::Finished);
    CHECK(inst.normalized_trace() == std::vector<std::string>{"entry:A:onEnter"});
}

TEST_CASE("3-state linear walk shows exit, action, entry per step") {
    auto log = std::make_shared<std::vector<std::string>>();
    auto reg = recording_registry(log, linear_next(3));
    FsmInstance inst(linear_def(3, true), reg, {});
    REQUIRE(inst.start(nullptr, Millis(0), 0).ok);
    REQUIRE(inst.step("go", {}, nullptr, Millis(1), 1).ok);
    REQUIRE(inst.step("go", {}, nullptr, Millis(2), 2).ok);
    std::vector<std::string> expect{"entry:S0", "exit:S0", "action:S0",
                                    "entry:S1", "exit:S1", "action:S1", "entry:S2"};
    CHECK(*log == expect);
    CHECK(inst.status() == FsmStatus::Finished);  // S2 has no outgoing transitions
}

TEST_CASE("undefined transition: FAULT policy faults with an error; IGNORE stays running") {
    auto log = std::make_shared<std::vector<std::string>>();
    auto reg = recording_registry(log, linear_next(2));
    FsmInstance inst(linear_def(2, false), reg, {});
    REQUIRE(inst.start(nullptr, Millis(0), 0).ok);
    auto oc = inst.step("warp", {}, nullptr, Millis(1), 1);
    CHECK_FALSE(oc.ok);
    CHECK(oc.error.find("UndefinedTransition") != std::string::npos);
    CHECK(oc.error.find("S0") != std::string::npos);
    CHECK(inst.status() == FsmStatus::Faulted);

    FsmInstance inst2(linear_def(2, false), reg, {});
    inst2.set_undefined_policy(FsmInstance::UndefinedPolicy::Ignore);
    REQUIRE(inst2.start(nullptr, Millis(0), 0).ok);
    auto oc2 = inst2.step("warp", {}, nullptr, Millis(1), 1);
    CHECK_FALSE(oc2.ok);
    CHECK(inst2.status() == FsmStatus::Running);
}

TEST_CASE("hook raising an exception faults the instance") {
    Scripted::Script script;
    script["onEnter"] = [](FsmContext&) -> MethodResult { throw std::runtime_error("bad hook"); };
    auto reg = scripted_registry("I", script);
    auto def = parse_fsm("FSM: T\nbegin: A\nstate: A isA: I\nstate: A onEntry: onEnter\n");
    FsmInstance inst(def, reg, {});
    auto oc = inst.start(nullptr, Millis(0), 0);
    CHECK_FALSE(oc.ok);
    CHECK(inst.status() == FsmStatus::Faulted);
    CHECK(oc.error.find("HookFault") != std::string::npos);
}

TEST_CASE("instances are isolated: scratch and trace never leak across") {
    Scripted::Script script;
    script["onEnter"] = [](FsmContext& ctx) {
        (*ctx.scratch)["touched"] += "x";
        return MethodResult{};
    };
    auto reg = scripted_registry("I", script);
    auto def = parse_fsm("FSM: T\nbegin: A\nstate: A isA: I\nstate: A onEntry: onEnter\n");
    FsmInstance a(def, reg, {{"run_id", "42"}});
    FsmInstance b(def, reg, {});
    a.start(nullptr, Millis(0), 0);
    CHECK(a.scratch()["touched"] == "x");
    CHECK(b.scratch().count("touched") == 0);
    CHECK(b.trace().empty());
    CHECK(kv_get(a.run_config(), "run_id") == "42");
}

TEST_CASE("run_config is visible to states") {
    std::string seen;
    Scripted::Script script;
    script["onEnter"] = [&seen](FsmContext& ctx) {
        seen = kv_get(*ctx.run_config, "run_id");
        return MethodResult{};
    };
    auto reg = scripted_registry("I", script);
    auto def = parse_fsm("FSM: T\nbegin: A\nstate: A isA: I\nstate: A onEntry: onEnter\n");
    FsmInstance inst(def, reg, {{"run_id", "42"}});
    inst.start(nullptr, Millis(0), 0);
    CHECK(seen == "42");
}

TEST_CASE("timeout fires exactly once per overdue state entry and resets on transition") {
    auto reg = recording_registry(std::make_shared<std::vector<std::string>>(), linear_next(2));
    auto def = parse_fsm("FSM: T\nbegin: S0\nstate: S0 isA: rec\n"
                         "state: S0 onTransition: go do: go\nstate: S0 timeout: 10\n"
                         "state: S1 isA: rec\nstate: S1 timeout: 10\n"
                         "state: S1 onTransition: go do: go\n");
    // S1 keeps an outgoing transition so it never auto-finishes
    std::map<std::string, std::string> next{{"S0", "S1"}, {"S1", "S1"}};
    auto reg2 = recording_registry(std::make_shared<std::vector<std::string>>(), next);
    FsmInstance inst(def, reg2, {});
    REQUIRE(inst.start(nullptr, Millis(0), 0).ok);

    // dwell 11 s: exactly one alarm over 100 checks
    int alarms = 0;
    for (int i = 0; i < 100; i++)
        if (inst.check_timeout(Millis(11000 + i))) alarms++;
    CHECK(alarms == 1);

    // transition resets the clock: 9 s dwell in each state stays silent
    FsmInstance quiet(def, reg2, {});
    REQUIRE(quiet.start(nullptr, Millis(0), 0).ok);
    CHECK_FALSE(quiet.check_timeout(Millis(9000)).has_value());
    REQUIRE(quiet.step("go", {}, nullptr, Millis(9000), 9000).ok);
    CHECK_FALSE(quiet.check_timeout(Millis(18000)).has_value());
    CHECK(quiet.check_timeout(Millis(19001)).has_value());
}

TEST_CASE("determinism: identical inputs give byte-identical normalized traces") {
    auto log = std::make_shared<std::vector<std::string>>();
    auto reg = recording_registry(log, linear_next(5));
    auto def = linear_def(5, true);
    auto run = [&] {
        FsmInstance inst(def, reg, {});
        inst.start(nullptr, Millis(0), 0);
        for (int i = 0; i < 4; i++) inst.step("go", {}, nullptr, Millis(i), i);
        return inst.normalized_trace();
    };
    CHECK(run() == run());
}

TEST_CASE("hook-order law holds on randomized linear walks") {
    std::mt19937 rng(7);
    for (int iter = 0; iter < 100; iter++) {
        int n = 2 + static_cast<int>(rng() % 6);
        bool hooks = rng() % 2 == 0;
        auto log = std::make_shared<std::vector<std::string>>();
        auto reg = recording_registry(log, linear_next(n));
        FsmInstance inst(linear_def(n, hooks), reg, {});
        REQUIRE(inst.start(nullptr, Millis(0), 0).ok);
        int steps = static_cast<int>(rng() % n);
        for (int i = 0; i < steps; i++) REQUIRE(inst.step("go", {}, nullptr, Millis(i), i).ok);

        // law: between consecutive entry records there is exactly
        // [exit?, action] and nothing else
        const auto& tr = inst.trace();
        REQUIRE_FALSE(tr.empty());
        CHECK(tr[0].kind == "entry");
        size_t i = 1;
        while (i < tr.size()) {
            if (hooks) {
                REQUIRE(tr[i].kind == "exit");
                i++;
            }
            REQUIRE(i < tr.size());
            REQUIRE(tr[i].kind == "action");
            i++;
            REQUIRE(i < tr.size());
            REQUIRE(tr[i].kind == "entry");
            i++;
        }
    }
}

TEST_CASE("parser totality: arbitrary bytes never crash, errors are positioned") {
    std::mt19937 rng(99);
    const std::string alphabet = "FSM:begin state isA onTransition do timeout \n\t#xyz0123";
    for (int iter = 0; iter < 300; iter++) {
        size_t len = rng() % 4096;
        std::string text;
        for (size_t i = 0; i < len; i++) text.push_back(alphabet[rng() % alphabet.size()]);
        try {
            auto def = parse_fsm(text);
            CHECK_FALSE(def.name.empty());
        } catch (const FsmParseError& ex) {
            CHECK(ex.line() >= 0);
        }
    }
    // one megabyte of noise
    std::string big(1u << 20, '#');
    CHECK_THROWS_AS(parse_fsm(big), FsmParseError);  // no FSM name
}

TEST_CASE("corpus: 40-state 80-transition definition loads fast") {
    std::ifstream in(std::string(SHARE_DIR) + "/fsm/large_demo.fsm");
    REQUIRE(in.good());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    Scripted::Script script;
    script["arm"] = [](FsmContext&) { return MethodResult{}; };
    script["disarm"] = [](FsmContext&) { return MethodResult{}; };
    script["toNext"] = [](FsmContext& ctx) {
        MethodResult r;
        int i = std::stoi(ctx.state_name.substr(1));
        char buf[8];
        std::snprintf(buf, sizeof(buf), "S%02d", (i + 1) % 40);
        r.next_state = buf;
        return r;
    };
    script["toSkip"] = [](FsmContext& ctx) {
        MethodResult r;
        int i = std::stoi(ctx.state_name.substr(1));
        char buf[8];
        std::snprintf(buf, sizeof(buf), "S%02d", (i + 2) % 40);
        r.next_state = buf;
        return r;
    };
    StateRegistry reg;
    reg.add("demo.state", [script] { return std::make_unique<Scripted>(script); });

    auto t0 = std::chrono::steady_clock::now();
    auto def = parse_fsm(text);
    auto errs = validate_fsm(def, reg);
    FsmInstance inst(def, reg, {});
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                  std::chrono::steady_clock::now() - t0)
                  .count();
    CHECK(errs.empty());
    CHECK(def.states.size() == 40);
    size_t transitions = 0;
    for (const auto& [n, sd] : def.states) transitions += sd.transitions.size();
    CHECK(transitions == 80);
    CHECK(ms < 100);

    // and it actually runs
    REQUIRE(inst.start(nullptr, Millis(0), 0).ok);
    for (int i = 0; i < 10; i++)
        REQUIRE(inst.step(i % 2 ? "next" : "skip", {}, nullptr, Millis(i), i).ok);
}

TEST_CASE("pretty-print then re-parse is structurally identical") {
    std::vector<std::string> corpus{"/fsm/node_processing.fsm", "/fsm/run_processing.fsm",
                                    "/fsm/large_demo.fsm"};
    for (const auto& rel : corpus) {
        std::ifstream in(std::string(SHARE_DIR) + rel);
        REQUIRE(in.good());
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        auto def = parse_fsm(text);
        auto again = parse_fsm(pretty_print(def));
        CHECK(def.structurally_equal(again));
    }
}

TEST_CASE("run_config can tune per-state timeouts") {
    auto reg = recording_registry(std::make_shared<std::vector<std::string>>(),
                                  {{"S0", "S0"}});
    auto def = parse_fsm("FSM: T\nbegin: S0\nstate: S0 isA: rec\n"
                         "state: S0 onTransition: go do: go\nstate: S0 timeout: 100\n");
    FsmInstance inst(def, reg, {{"timeout.S0", "2"}});
    REQUIRE(inst.start(nullptr, Millis(0), 0).ok);
    CHECK(inst.check_timeout(Millis(2001)).has_value());  // 2 s override, not 100 s
}

TEST_CASE("fsm host module: load, start, message-driven transitions, query") {
    Lpf lpf(harness::options("fsmhost", 0));
    // isolated registry for this test via a subclass
    auto log = std::make_shared<std::vector<std::string>>();
    static StateRegistry reg;  // host consults the global registry otherwise
    reg = recording_registry(log, linear_next(3));

    class TestHost final : public FsmHostModule {
    protected:
        const StateRegistry& registry() const override { return reg; }
    };
    lpf.register_module({"np", ModuleKind::Active, {}}, std::make_unique<TestHost>());

    auto pump = [&](int n) {
        for (int i = 0; i < n; i++) lpf.run_once();
    };
    Message load;
    load.verb = "FsmLoad";
    load.body = {{"text", pretty_print(linear_def(3, true))}};
    load.destination = local_module("np");
    lpf.send(load);
    pump(2);
    Message start;
    start.verb = "FsmStart";
    start.destination = local_module("np");
    lpf.send(start);
    pump(2);

    // message verb matching a transition drives the machine
    Message go;
    go.verb = "go";
    go.destination = local_module("np");
    lpf.send(go);
    pump(2);

    auto* host = dynamic_cast<FsmHostModule*>(lpf.find_module("np"));
    REQUIRE(host != nullptr);
    REQUIRE(host->instance() != nullptr);
    CHECK(host->instance()->current_state() == "S1");

    Message expl;
    expl.verb = "FsmTransition";
    expl.body = {{"transition", "go"}};
    expl.destination = local_module("np");
    lpf.send(expl);
    pump(2);
    CHECK(host->instance()->current_state() == "S2");
    CHECK(host->instance()->status() == FsmStatus::Finished);
}
