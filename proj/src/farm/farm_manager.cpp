#include "farm/farm_manager.hpp"

#include <json.hpp>

#include "farm/records.hpp"
#include "farm/scheduler.hpp"
#include "lpf/lpf.hpp"

namespace farm {

using lpf::Kv;
using lpf::kv_get;
using lpf::kv_get_int;
using lpf::Message;
using nlohmann::json;

void FarmManagerModule::init(lpf::Lpf& lpf, const Kv& config) {
    name_ = kv_get(config, "__name", "fm");
    cfg_ = config;
    poll_interval_ms_ = kv_get_int(config, "poll_interval_ms", 300);
    auto_schedule_ = kv_get(config, "auto_schedule", "1") == "1";
    second_domain_ = kv_get(config, "lower_domain");
    if (!second_domain_.empty()) {
        std::string err;
        if (!lpf.ns_register_self(second_domain_, name_, &err))
            lpf.raise_alarm(lpf::AlarmLevel::Warning, name_,
                            "cannot register in domain " + second_domain_ + ": " + err);
    }
}

void FarmManagerModule::kill(lpf::Lpf& lpf) {
    if (!second_domain_.empty()) lpf.ns_unregister(second_domain_, name_);
}

Message FarmManagerModule::to_bk(lpf::Lpf& lpf, const std::string& verb, Kv body) {
    Message m;
    m.id = lpf.next_message_id();
    m.verb = verb;
    m.body = std::move(body);
    m.destination = lpf::endpoint(kv_get(cfg_, "bk_host"),
                                  static_cast<int>(kv_get_int(cfg_, "bk_port")),
                                  kv_get(cfg_, "bk_module", "bookkeeper"));
    m.source.module = name_;
    return m;
}

Message FarmManagerModule::to_staging(lpf::Lpf& lpf, Kv body) {
    Message m;
    m.id = lpf.next_message_id();
    m.verb = "StageRun";
    m.body = std::move(body);
    m.destination = lpf::endpoint(kv_get(cfg_, "stage_host"),
                                  static_cast<int>(kv_get_int(cfg_, "stage_port")),
                                  kv_get(cfg_, "stage_module", "staging"));
    m.source.module = name_;
    return m;
}

Message FarmManagerModule::rp_start(lpf::Lpf& lpf, const std::string& record_json) {
    auto rec = RunRecord::from_json(record_json);
    Message m;
    m.id = lpf.next_message_id();
    m.verb = "RpStart";
    m.body = {{"run_id", std::to_string(rec->run_id)},
              {"pass", kv_get(cfg_, "pass", "PC")},
              {"xtc_path", rec->xtc_path},
              {"events_total", std::to_string(rec->events_total)},
              {"calibrated", rec->calibrated ? "1" : "0"},
              {"nodes", kv_get(cfg_, "nodes")},
              {"np_module", kv_get(cfg_, "np_module", "np")},
              {"lm", kv_get(cfg_, "lm")},
              {"lm_host", kv_get(cfg_, "rp_host")},
              {"lm_port", kv_get(cfg_, "lm_port")},
              {"elf", kv_get(cfg_, "elf")},
              {"elf_args", kv_get(cfg_, "elf_args")},
              {"workdir", kv_get(cfg_, "workdir")},
              {"qa_cmd", kv_get(cfg_, "qa_cmd")},
              {"node_fail_tolerance", kv_get(cfg_, "node_fail_tolerance", "0")},
              {"bk_host", kv_get(cfg_, "bk_host")},
              {"bk_port", kv_get(cfg_, "bk_port")},
              {"bk_module", kv_get(cfg_, "bk_module", "bookkeeper")},
              {"report_host", lpf.options().host},
              {"report_port", std::to_string(lpf.options().port)},
              {"report_module", name_}};
    for (const auto& [k, v] : cfg_)
        if (k.rfind("timeout.", 0) == 0 || k.rfind("np_timeout.", 0) == 0) m.body[k] = v;
    m.destination = lpf::endpoint(kv_get(cfg_, "rp_host"),
                                  static_cast<int>(kv_get_int(cfg_, "rp_port")),
                                  kv_get(cfg_, "rp_module", "rp"));
    m.source.module = name_;
    return m;
}

std::vector<Message> FarmManagerModule::decide(lpf::Lpf& lpf, const std::string& records_json) {
    std::vector<Message> out;
    const std::string pass = kv_get(cfg_, "pass", "PC");

    std::map<int64_t, RunRecord> catalog;
    json arr = json::parse(records_json, nullptr, false);
    if (arr.is_array())
        for (const auto& j : arr)
            if (auto rec = RunRecord::from_json(j.dump())) catalog[rec->run_id] = *rec;

    if (force_next_ && forced_run_ > 0) {
        auto it = catalog.find(forced_run_);
        force_next_ = false;
        if (it == catalog.end()) {
            lpf.raise_alarm(lpf::AlarmLevel::Warning, name_,
                            "forced run " + std::to_string(forced_run_) + " is not in the catalog");
        } else if (it->second.xtc_path.empty()) {
            lpf.raise_alarm(lpf::AlarmLevel::Warning, name_, "forced run has no staged XTC");
        } else {
            active_run_ = forced_run_;
            pending_record_ = it->second.to_json();
            Message mark = to_bk(lpf, "BkSetPass",
                                 {{"run_id", std::to_string(forced_run_)},
                                  {"pass", pass},
                                  {"status", "PROCESSING"},
                                  {"events_processed", "0"},
                                  {"fail_cause", ""}});
            pending_corr_ = mark.id;
            phase_ = Phase::MarkProcessing;
            out.push_back(std::move(mark));
            return out;
        }
    }

    if (auto run = schedule_next(catalog, pass)) {
        active_run_ = *run;
        pending_record_ = catalog[*run].to_json();
        Message mark = to_bk(lpf, "BkSetPass",
                             {{"run_id", std::to_string(*run)},
                              {"pass", pass},
                              {"status", "PROCESSING"},
                              {"events_processed", "0"},
                              {"fail_cause", ""}});
        pending_corr_ = mark.id;
        phase_ = Phase::MarkProcessing;
        out.push_back(std::move(mark));
        return out;
    }

    if (auto run = next_to_stage(catalog, pass)) {
        const RunRecord& rec = catalog[*run];
        if (!rec.xtc_path.empty()) {
            // staged by the other pass already; just flip this pass's status
            Message mark = to_bk(lpf, "BkSetPass",
                                 {{"run_id", std::to_string(*run)},
                                  {"pass", pass},
                                  {"status", "STAGED"}});
            pending_corr_ = mark.id;
            phase_ = Phase::MarkStaged;
            out.push_back(std::move(mark));
            return out;
        }
        active_run_ = *run;
        Message stage = to_staging(lpf, {{"run_id", std::to_string(*run)},
                                         {"events_total", std::to_string(rec.events_total)}});
        pending_corr_ = stage.id;
        phase_ = Phase::Staging;
        out.push_back(std::move(stage));
        return out;
    }

    phase_ = Phase::Idle;
    return out;
}

std::vector<Message> FarmManagerModule::run(lpf::Lpf& lpf) {
    std::vector<Message> out;
    if (!auto_schedule_ && !force_next_) return out;
    if (phase_ != Phase::Idle) return out;
    int64_t now = lpf.clock().now().count();
    if (now - last_poll_ms_ < poll_interval_ms_) return out;
    last_poll_ms_ = now;
    Message list = to_bk(lpf, "BkList", {});
    pending_corr_ = list.id;
    phase_ = Phase::Listing;
    out.push_back(std::move(list));
    return out;
}

std::vector<Message> FarmManagerModule::do_message(lpf::Lpf& lpf, const Message& m) {
    std::vector<Message> out;
    const std::string pass = kv_get(cfg_, "pass", "PC");

    if (m.verb == "FarmStatus") {
        const char* phase = phase_ == Phase::Idle      ? "idle"
                            : phase_ == Phase::Running ? "running"
                            : phase_ == Phase::Staging ? "staging"
                                                       : "scheduling";
        return {m.answer("FarmStatusAnswer",
                         {{"pass", pass},
                          {"phase", phase},
                          {"active_run", std::to_string(active_run_)},
                          {"runs_done", std::to_string(runs_done_)},
                          {"runs_failed", std::to_string(runs_failed_)},
                          {"last_outcome", last_outcome_},
                          {"auto", auto_schedule_ ? "1" : "0"}})};
    }
    if (m.verb == "StartRun") {
        if (phase_ == Phase::Running)
            return {m.answer("StartRunAnswer", {{"ok", "0"}, {"error", "run in progress"}})};
        if (kv_get(m.body, "force") == "1" && kv_get_int(m.body, "run_id") > 0) {
            force_next_ = true;
            forced_run_ = kv_get_int(m.body, "run_id");
        }
        last_poll_ms_ = 0;  // poll immediately
        return {m.answer("StartRunAnswer", {{"ok", "1"}})};
    }
    if (m.verb == "AbortRun") {
        Message abort;
        abort.id = lpf.next_message_id();
        abort.verb = "AbortRun";
        abort.body = m.body;
        abort.destination = lpf::endpoint(kv_get(cfg_, "rp_host"),
                                          static_cast<int>(kv_get_int(cfg_, "rp_port")),
                                          kv_get(cfg_, "rp_module", "rp"));
        abort.source.module = name_;
        out.push_back(std::move(abort));
        out.push_back(m.answer("AbortRunAnswer", {{"ok", "1"}}));
        return out;
    }
    if (m.verb == "RunComplete") {
        std::string outcome = kv_get(m.body, "outcome");
        last_outcome_ = outcome + " run " + kv_get(m.body, "run_id");
        if (outcome == "DONE") runs_done_++;
        else runs_failed_++;
        if (outcome != "DONE")
            lpf.raise_alarm(lpf::AlarmLevel::Warning, name_,
                            pass + " run " + kv_get(m.body, "run_id") + " failed: " +
                                kv_get(m.body, "cause"));
        phase_ = Phase::Idle;
        active_run_ = 0;
        last_poll_ms_ = 0;
        return out;
    }

    if (m.correlation_id.empty() || m.correlation_id != pending_corr_) return out;
    pending_corr_.clear();

    if (m.verb == "BkListAnswer") {
        if (kv_get(m.body, "corrupt") == "1") {
            lpf.raise_alarm(lpf::AlarmLevel::Error, name_, "bookkeeping store is corrupt");
            phase_ = Phase::Idle;
            return out;
        }
        return decide(lpf, kv_get(m.body, "records", "[]"));
    }
    if (m.verb == "StageRunAnswer") {
        std::string error = kv_get(m.body, "error");
        if (kv_get(m.body, "ok") == "1" || error == "AlreadyStaged") {
            Message mark = to_bk(lpf, "BkSetPass",
                                 {{"run_id", std::to_string(active_run_)},
                                  {"pass", pass},
                                  {"status", "STAGED"},
                                  {"xtc_path", kv_get(m.body, "xtc_path")}});
            pending_corr_ = mark.id;
            phase_ = Phase::MarkStaged;
            out.push_back(std::move(mark));
        } else {
            lpf.raise_alarm(lpf::AlarmLevel::Warning, name_,
                            "staging run " + std::to_string(active_run_) + ": " + error);
            phase_ = Phase::Idle;
            active_run_ = 0;
            last_poll_ms_ = lpf.clock().now().count() + 5000;  // back off
        }
        return out;
    }
    if (m.verb == "BkSetPassAnswer") {
        if (phase_ == Phase::MarkStaged) {
            phase_ = Phase::Idle;
            active_run_ = 0;
            last_poll_ms_ = 0;
            return out;
        }
        if (phase_ == Phase::MarkProcessing) {
            if (kv_get(m.body, "ok") != "1") {
                lpf.raise_alarm(lpf::AlarmLevel::Error, name_,
                                "cannot mark run processing: " + kv_get(m.body, "error"));
                phase_ = Phase::Idle;
                return out;
            }
            Message start = rp_start(lpf, pending_record_);
            pending_corr_ = start.id;
            phase_ = Phase::Running;
            out.push_back(std::move(start));
            return out;
        }
        return out;
    }
    if (m.verb == "RpStartAnswer") {
        if (kv_get(m.body, "ok") != "1") {
            lpf.raise_alarm(lpf::AlarmLevel::Error, name_,
                            "run processor refused the run: " + kv_get(m.body, "error"));
            out.push_back(to_bk(lpf, "BkSetPass", {{"run_id", std::to_string(active_run_)},
                                                   {"pass", pass},
                                                   {"status", "STAGED"}}));
            phase_ = Phase::Idle;
            active_run_ = 0;
        }
        return out;
    }
    return out;
}

}  // namespace farm
