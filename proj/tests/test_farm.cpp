#include <doctest.h>

#include <fstream>
#include <json.hpp>

#include "farm/factories.hpp"
#include "farm/farm_manager.hpp"
#include "farm/hosts.hpp"
#include "farm/lm.hpp"
#include "farm/records.hpp"
#include "farm/scheduler.hpp"
#include "farm/staging.hpp"
#include "harness.hpp"
#include "lpf/errors.hpp"

using namespace farm;
using namespace lpf;
using harness::LpfRunner;
using nlohmann::json;

namespace {

const std::string kElf = std::string(TOOLS_DIR) + "/mock_elf";
const std::string kLm = std::string(TOOLS_DIR) + "/mock_lm";
const std::string kFsmDir = std::string(SHARE_DIR) + "/fsm";

RunRecord make_run(int64_t id, const std::string& pc_status, const std::string& er_status,
                   bool calibrated, int64_t events = 10) {
    RunRecord r;
    r.run_id = id;
    r.events_total = events;
    r.pc.status = pc_status;
    r.er.status = er_status;
    r.calibrated = calibrated;
    if (pc_status == "DONE") r.pc.events_processed = events;
    if (er_status == "DONE") r.er.events_processed = events;
    if (pc_status != "PENDING") r.xtc_path = "staged.xtc";
    return r;
}

// Independent eligibility oracle: per-run predicate evaluated directly
// against the rules, then minimized.
std::optional<int64_t> oracle_next(const std::map<int64_t, RunRecord>& catalog,
                                   const std::string& pass) {
    std::optional<int64_t> best;
    for (const auto& [id, rec] : catalog) {
        bool eligible;
        if (pass == "PC") {
            eligible = rec.pc.status == "STAGED";
            for (const auto& [other_id, other] : catalog)
                if (other_id < id && other.pc.status != "DONE") eligible = false;
        } else {
            eligible = rec.er.status == "STAGED" && rec.calibrated;
        }
        if (eligible && !best) best = id;
    }
    return best;
}

}  // namespace

TEST_CASE("PC scheduling follows strict sequential order") {
    std::map<int64_t, RunRecord> catalog;
    catalog[1] = make_run(1, "DONE", "PENDING", true);
    catalog[2] = make_run(2, "STAGED", "PENDING", false);
    catalog[3] = make_run(3, "STAGED", "PENDING", false);
    CHECK(schedule_next(catalog, "PC") == 2);

    catalog.clear();
    catalog[1] = make_run(1, "FAILED", "PENDING", false);
    catalog[2] = make_run(2, "STAGED", "PENDING", false);
    CHECK_FALSE(schedule_next(catalog, "PC").has_value());  // blocked by the predecessor
}

TEST_CASE("ER scheduling is gated on calibration only") {
    std::map<int64_t, RunRecord> catalog;
    catalog[5] = make_run(5, "DONE", "STAGED", false);
    catalog[6] = make_run(6, "DONE", "STAGED", true);
    CHECK(schedule_next(catalog, "ER") == 6);
}

TEST_CASE("scheduler agrees with the brute-force oracle over every status combination") {
    const std::vector<std::string> statuses{"PENDING", "STAGED", "PROCESSING", "DONE", "FAILED"};
    // PC: 5^3 combinations
    for (const auto& s1 : statuses)
        for (const auto& s2 : statuses)
            for (const auto& s3 : statuses) {
                std::map<int64_t, RunRecord> catalog;
                catalog[1] = make_run(1, s1, "PENDING", false);
                catalog[2] = make_run(2, s2, "PENDING", false);
                catalog[3] = make_run(3, s3, "PENDING", false);
                CHECK(schedule_next(catalog, "PC") == oracle_next(catalog, "PC"));
            }
    // ER: status x calibrated per run
    for (const auto& s1 : statuses)
        for (bool c1 : {false, true})
            for (const auto& s2 : statuses)
                for (bool c2 : {false, true}) {
                    std::map<int64_t, RunRecord> catalog;
                    catalog[1] = make_run(1, "DONE", s1, c1);
                    catalog[2] = make_run(2, "DONE", s2, c2);
                    CHECK(schedule_next(catalog, "ER") == oracle_next(catalog, "ER"));
                }
}

TEST_CASE("staging writes the synthetic XTC deterministically") {
    auto dir = harness::temp_dir("stage");
    auto p1 = write_xtc(dir / "a", 7, 100);
    auto p2 = write_xtc(dir / "b", 7, 100);
    std::ifstream f1(p1), f2(p2);
    std::string c1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string c2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(c1 == c2);

    int lines = 0;
    std::ifstream in(p1);
    std::string line;
    while (std::getline(in, line)) lines++;
    CHECK(lines == 101);  // header + 100 events

    auto header = read_xtc_header(p1);
    REQUIRE(header.has_value());
    CHECK(header->run_id == 7);
    CHECK(header->events == 100);
}

TEST_CASE("staging module: stage, AlreadyStaged, quota") {
    Lpf lpf(harness::options("stg", 0));
    auto dir = harness::temp_dir("stagemod");
    StagingModule mod;
    mod.init(lpf, {{"staging_area", dir.string()}, {"quota_files", "1"}});
    auto path = mod.stage(1, 10);
    CHECK(std::filesystem::exists(path));
    CHECK_THROWS_AS((void)mod.stage(1, 10), LpfError);  // AlreadyStaged
    CHECK_THROWS_AS((void)mod.stage(2, 10), LpfError);  // StagingAreaFull
}

TEST_CASE("run record invariants") {
    RunRecord r = make_run(3, "STAGED", "PENDING", false);
    CHECK(r.check().empty());
    r.er.status = "PROCESSING";
    CHECK(r.check().find("uncalibrated") != std::string::npos);
    r.calibrated = true;
    CHECK(r.check().empty());
    r.pc.status = "DONE";
    r.pc.events_processed = 3;  // != events_total
    CHECK(r.check().find("DONE requires") != std::string::npos);
}

TEST_CASE("bookkeeping journal and snapshot: round-trip, last-write-wins, corruption") {
    auto dir = harness::temp_dir("bk");
    {
        BookStore store(dir);
        CHECK(store.load() == 0);
        store.put(make_run(3, "STAGED", "PENDING", false), 1);
        auto got = store.get(3);
        REQUIRE(got.has_value());
        CHECK(*got == make_run(3, "STAGED", "PENDING", false));

        // second append for the same run: snapshot reflects the later
        auto updated = make_run(3, "DONE", "PENDING", true);
        updated.pc.events_processed = 10;
        store.put(updated, 2);
    }
    // journal holds both entries
    std::ifstream in(dir / "journal.log");
    int lines = 0;
    std::string line;
    while (std::getline(in, line)) lines++;
    CHECK(lines == 2);

    {
        BookStore store(dir);
        CHECK(store.load() == 1);  // one run after replay
        CHECK(store.get(3)->pc.status == "DONE");
    }

    // truncate the second line: prior valid entries survive, writes refused
    {
        std::ifstream rd(dir / "journal.log");
        std::string first;
        std::getline(rd, first);
        std::string second;
        std::getline(rd, second);
        std::ofstream wr(dir / "journal.log", std::ios::trunc);
        wr << first << "\n" << second.substr(0, second.size() / 2) << "\n";
    }
    BookStore store(dir);
    CHECK(store.load() == -1);
    CHECK(store.corrupt());
    REQUIRE(store.get(3).has_value());
    CHECK(store.get(3)->pc.status == "STAGED");  // the valid prefix
    CHECK_THROWS_AS(store.put(make_run(4, "PENDING", "PENDING", false), 3), LpfError);
}

TEST_CASE("event distributor hands out contiguous chunks then runs dry") {
    auto dir = harness::temp_dir("lm");
    auto xtc = write_xtc(dir, 9, 10);
    Lpf lpf(harness::options("lm", 0));
    LmModule lm;
    lm.init(lpf, {{"xtc", xtc.string()}, {"nodes", "3"}});
    auto fetch = [&](int) {
        Message q;
        q.id = "q" + std::to_string(rand());
        q.verb = "LmFetch";
        auto out = lm.do_message(lpf, q);
        REQUIRE(out.size() == 1);
        return std::pair<int64_t, int64_t>(kv_get_int(out[0].body, "first"),
                                           kv_get_int(out[0].body, "count"));
    };
    CHECK(fetch(0) == std::pair<int64_t, int64_t>(0, 4));
    CHECK(fetch(1) == std::pair<int64_t, int64_t>(4, 4));
    CHECK(fetch(2) == std::pair<int64_t, int64_t>(8, 2));
    CHECK(fetch(3).second == 0);  // exhausted
}

// ---------------------------------------------------------------------------
// In-process two-node farm: full message choreography without BareLPF.

namespace {

struct FarmRig {
    std::filesystem::path dir = harness::temp_dir("farm");
    int bk_port = net::pick_free_port();
    int fm_port = net::pick_free_port();
    int rp_port = net::pick_free_port();
    int np1_port = net::pick_free_port();
    int np2_port = net::pick_free_port();
    int lm_port = net::pick_free_port();

    std::unique_ptr<LpfRunner> bk, fm, server, node1, node2;

    void seed(const std::vector<RunRecord>& runs) {
        BookStore store(dir / "store");
        store.load();
        for (const auto& r : runs) store.put(r, 0);
    }

    void start(const std::string& pass = "PC", Kv fm_extra = {}) {
        bk = std::make_unique<LpfRunner>(harness::options("bk", bk_port));
        bk->get().register_module({"bookkeeper", ModuleKind::Passive,
                                   {{"store_dir", (dir / "store").string()}}},
                                  std::make_unique<BookkeeperModule>());
        bk->start();

        auto node = [&](const std::string& name, int port) {
            auto runner = std::make_unique<LpfRunner>(harness::options(name, port));
            register_farm_factories(runner->get());
            runner->get().activate_module("np-host",
                                          {{"fsm_dir", kFsmDir},
                                           {"kind", "active"},
                                           {"undefined_transition", "ignore"}},
                                          Scope::Local, "np");
            runner->start();
            return runner;
        };
        node1 = node("node1", np1_port);
        node2 = node("node2", np2_port);

        server = std::make_unique<LpfRunner>(harness::options("server", rp_port));
        register_farm_factories(server->get());
        server->get().activate_module("rp-host",
                                      {{"fsm_dir", kFsmDir},
                                       {"kind", "active"},
                                       {"undefined_transition", "ignore"}},
                                      Scope::Local, "rp");
        server->start();

        Kv fm_cfg{{"pass", pass},
                  {"nodes", std::string(harness::kHost) + ":" + std::to_string(np1_port) + "," +
                                harness::kHost + ":" + std::to_string(np2_port)},
                  {"rp_host", harness::kHost},
                  {"rp_port", std::to_string(rp_port)},
                  {"lm", kLm},
                  {"lm_port", std::to_string(lm_port)},
                  {"elf", kElf},
                  {"workdir", (dir / "work").string()},
                  {"bk_host", harness::kHost},
                  {"bk_port", std::to_string(bk_port)},
                  {"stage_host", harness::kHost},
                  {"stage_port", std::to_string(fm_port)},
                  {"poll_interval_ms", "100"},
                  {"timeout.WaitNodes", "30"},
                  {"timeout.WaitLm", "10"},
                  {"np_timeout.WaitElf", "20"},
                  {"np_timeout.FetchRange", "10"}};
        for (auto& [k, v] : fm_extra) fm_cfg[k] = v;
        fm = std::make_unique<LpfRunner>(harness::options("fm", fm_port));
        register_farm_factories(fm->get());
        fm->get().register_module({"staging", ModuleKind::Passive,
                                   {{"staging_area", (dir / "stage").string()}}},
                                  std::make_unique<StagingModule>());
        fm->get().register_module({"fm", ModuleKind::Active, fm_cfg},
                                  std::make_unique<FarmManagerModule>());
        fm->start();
    }

    void stop() {
        if (fm) fm->stop();
        if (server) server->stop();
        if (node1) node1->stop();
        if (node2) node2->stop();
        if (bk) bk->stop();
    }

    json catalog() {
        auto r = harness::ask(bk_port, "bookkeeper", "BkList");
        REQUIRE(r.ok);
        return json::parse(kv_get(r.answer.body, "records", "[]"));
    }

    bool pass_status_is(int64_t run, const std::string& pass, const std::string& status) {
        for (const auto& j : catalog())
            if (j["run_id"] == run) return j[pass == "ER" ? "er" : "pc"]["status"] == status;
        return false;
    }
};

}  // namespace

TEST_CASE("two-node farm processes seeded runs sequentially with event conservation") {
    FarmRig rig;
    rig.seed({make_run(1, "PENDING", "PENDING", false, 10),
              make_run(2, "PENDING", "PENDING", false, 6)});
    rig.start("PC");

    REQUIRE(harness::wait_until([&] { return rig.pass_status_is(2, "PC", "DONE"); }, 60000, 100));
    REQUIRE(harness::wait_until([&] { return rig.pass_status_is(1, "PC", "DONE"); }, 5000, 100));

    auto cat = rig.catalog();
    REQUIRE(cat.size() == 2);
    for (const auto& j : cat) {
        // event conservation: node counts summed to the staged total
        CHECK(j["pc"]["events_processed"] == j["events_total"]);
        CHECK(j["calibrated"] == true);  // the calibration pass marks each DONE run
        CHECK(std::filesystem::exists(j["xtc_path"].get<std::string>()));
        CHECK_FALSE(j["log_dir"].get<std::string>().empty());
    }

    // strict PC sequencing: run 1 finished before run 2 started processing
    int64_t done1 = std::stoll(cat[0]["pc"]["timestamps"]["DONE"].get<std::string>());
    int64_t proc2 = std::stoll(cat[1]["pc"]["timestamps"]["PROCESSING"].get<std::string>());
    CHECK(done1 <= proc2);

    // run dirs carry the per-node configuration files
    auto run_dir = cat[0]["log_dir"].get<std::string>();
    CHECK(std::filesystem::exists(run_dir + "/node_0.conf"));
    CHECK(std::filesystem::exists(run_dir + "/node_1.conf"));

    // FarmStatus reflects the finished work
    auto st = harness::ask(rig.fm_port, "fm", "FarmStatus");
    REQUIRE(st.ok);
    CHECK(kv_get(st.answer.body, "runs_done") == "2");
    CHECK(kv_get(st.answer.body, "runs_failed") == "0");
    rig.stop();
}

TEST_CASE("a crashing worker fails the run with the failing node recorded") {
    FarmRig rig;
    rig.seed({make_run(1, "PENDING", "PENDING", false, 8)});
    rig.start("PC", {{"elf_args", "--fail-at 2"}});

    REQUIRE(harness::wait_until([&] { return rig.pass_status_is(1, "PC", "FAILED"); }, 60000, 100));
    auto cat = rig.catalog();
    std::string cause = cat[0]["pc"]["fail_cause"].get<std::string>();
    CHECK(cause.find("node") != std::string::npos);
    CHECK(cause.find("failed") != std::string::npos);
    rig.stop();
}

TEST_CASE("a planted event-store lock fails the node with LockOutstanding") {
    FarmRig rig;
    rig.seed({make_run(1, "PENDING", "PENDING", false, 6)});
    // slow the workers enough to plant the lock while they run
    rig.start("PC", {{"elf_args", "--event-ms 200"}});

    // wait for the run dir, then plant a lock for node 0
    std::string run_dir = (rig.dir / "work" / "run_1").string();
    REQUIRE(harness::wait_until(
        [&] { return std::filesystem::exists(run_dir + "/locks"); }, 30000, 50));
    std::ofstream(run_dir + "/locks/node_0.lock") << "stale";

    REQUIRE(harness::wait_until([&] { return rig.pass_status_is(1, "PC", "FAILED"); }, 60000, 100));
    auto cat = rig.catalog();
    CHECK(cat[0]["pc"]["fail_cause"].get<std::string>().find("LockOutstanding") !=
          std::string::npos);
    rig.stop();
}

TEST_CASE("ER pass starts only after calibration and reuses the staged XTC") {
    FarmRig rig;
    auto dir_staged = rig.dir / "stage";
    auto xtc = write_xtc(dir_staged, 1, 6);
    auto r1 = make_run(1, "DONE", "STAGED", false, 6);
    r1.pc.events_processed = 6;
    r1.xtc_path = xtc.string();
    rig.seed({r1});
    rig.start("ER");

    // not calibrated: the ER farm must not start it
    std::this_thread::sleep_for(std::chrono::milliseconds(1500));
    CHECK(rig.pass_status_is(1, "ER", "STAGED"));

    // calibrate through the bookkeeper; the farm picks it up
    auto ack = harness::ask(rig.bk_port, "bookkeeper", "BkSetPass",
                            {{"run_id", "1"}, {"pass", "PC"}, {"status", "DONE"},
                             {"events_processed", "6"}, {"calibrated", "1"}});
    REQUIRE(ack.ok);
    REQUIRE(harness::wait_until([&] { return rig.pass_status_is(1, "ER", "DONE"); }, 60000, 100));

    // ER gating invariant: processing began after the calibration entry
    auto cat = rig.catalog();
    int64_t calib_ts = std::stoll(cat[0]["pc"]["timestamps"]["DONE"].get<std::string>());
    int64_t er_proc = std::stoll(cat[0]["er"]["timestamps"]["PROCESSING"].get<std::string>());
    CHECK(calib_ts <= er_proc);
    rig.stop();
}

TEST_CASE("reprocessing a run with a fresh instance yields an identical normalized trace") {
    FarmRig rig;
    rig.seed({make_run(1, "PENDING", "PENDING", false, 10)});
    rig.start("PC");
    REQUIRE(harness::wait_until([&] { return rig.pass_status_is(1, "PC", "DONE"); }, 60000, 100));

    auto trace_of = [&] {
        auto q = harness::ask(rig.rp_port, "rp", "FsmQuery");
        REQUIRE(q.ok);
        return kv_get(q.answer.body, "trace");
    };
    std::string first = trace_of();
    REQUIRE_FALSE(first.empty());

    // force a rerun of the same run
    auto sr = harness::ask(rig.fm_port, "fm", "StartRun", {{"run_id", "1"}, {"force", "1"}});
    REQUIRE(sr.ok);
    REQUIRE(harness::wait_until(
        [&] {
            auto q = harness::ask(rig.rp_port, "rp", "FsmQuery");
            return q.ok && kv_get(q.answer.body, "status") == "FINISHED" &&
                   trace_of() == first;
        },
        60000, 200));
    CHECK(trace_of() == first);
    rig.stop();
}
