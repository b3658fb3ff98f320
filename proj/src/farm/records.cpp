#include "farm/records.hpp"

#include <fstream>
#include <json.hpp>

#include "lpf/errors.hpp"
#include "lpf/lpf.hpp"

namespace farm {

using lpf::Errc;
using lpf::LpfError;
using nlohmann::json;

uint32_t crc32(const void* data, size_t n) {
    static uint32_t table[256];
    static bool ready = false;
    if (!ready) {
        for (uint32_t i = 0; i < 256; i++) {
            uint32_t c = i;
            for (int k = 0; k < 8; k++) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            table[i] = c;
        }
        ready = true;
    }
    uint32_t c = 0xffffffffu;
    const uint8_t* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < n; i++) c = table[(c ^ p[i]) & 0xffu] ^ (c >> 8);
    return c ^ 0xffffffffu;
}

namespace {

json pass_json(const PassInfo& p) {
    return json{{"status", p.status},
                {"events_processed", p.events_processed},
                {"fail_cause", p.fail_cause},
                {"timestamps", p.timestamps}};
}

PassInfo pass_from(const json& j) {
    PassInfo p;
    p.status = j.value("status", "PENDING");
    p.events_processed = j.value("events_processed", int64_t{0});
    p.fail_cause = j.value("fail_cause", "");
    if (j.contains("timestamps"))
        for (auto& [k, v] : j["timestamps"].items()) p.timestamps[k] = v.get<std::string>();
    return p;
}

bool valid_status(const std::string& s) {
    return s == "PENDING" || s == "STAGED" || s == "PROCESSING" || s == "DONE" || s == "FAILED";
}

}  // namespace

std::string RunRecord::check() const {
    if (run_id <= 0) return "run_id must be positive";
    for (const auto* p : {&pc, &er}) {
        if (!valid_status(p->status)) return "unknown pass status '" + p->status + "'";
        if (p->events_processed < 0) return "negative events_processed";
        if (events_total > 0 && p->events_processed > events_total)
            return "events_processed exceeds events_total";
        if (p->status == "DONE" && p->events_processed != events_total)
            return "DONE requires events_processed = events_total";
    }
    if (er.status == "PROCESSING" && !calibrated)
        return "ER may not process an uncalibrated run";
    return "";
}

std::string RunRecord::to_json() const {
    json j{{"run_id", run_id},   {"xtc_path", xtc_path},     {"events_total", events_total},
           {"calibrated", calibrated}, {"log_dir", log_dir}, {"pc", pass_json(pc)},
           {"er", pass_json(er)}};
    return j.dump();
}

std::optional<RunRecord> RunRecord::from_json(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return std::nullopt;
    RunRecord r;
    r.run_id = j.value("run_id", int64_t{0});
    r.xtc_path = j.value("xtc_path", "");
    r.events_total = j.value("events_total", int64_t{0});
    r.calibrated = j.value("calibrated", false);
    r.log_dir = j.value("log_dir", "");
    if (j.contains("pc")) r.pc = pass_from(j["pc"]);
    if (j.contains("er")) r.er = pass_from(j["er"]);
    if (r.run_id <= 0) return std::nullopt;
    return r;
}

BookStore::BookStore(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
}

int BookStore::load() {
    runs_.clear();
    corrupt_ = false;
    std::ifstream in(journal_path());
    if (!in) return 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto space = line.find(' ');
        bool ok = space != std::string::npos;
        if (ok) {
            std::string crc_hex = line.substr(0, space);
            std::string body = line.substr(space + 1);
            char* end = nullptr;
            uint32_t want = static_cast<uint32_t>(std::strtoul(crc_hex.c_str(), &end, 16));
            ok = end != crc_hex.c_str() && *end == '\0' &&
                 want == crc32(body.data(), body.size());
            if (ok) {
                auto rec = RunRecord::from_json(body);
                ok = rec.has_value();
                if (ok) runs_[rec->run_id] = *rec;
            }
        }
        if (!ok) {
            corrupt_ = true;  // keep the valid prefix, refuse writes
            return -1;
        }
    }
    return static_cast<int>(runs_.size());
}

void BookStore::put(const RunRecord& rec, int64_t) {
    if (corrupt_)
        throw LpfError(Errc::StoreCorrupt, "journal is corrupt; refusing to write");
    std::string err = rec.check();
    if (!err.empty()) throw LpfError(Errc::ValidationError, err);
    std::string body = rec.to_json();
    char crc_hex[16];
    std::snprintf(crc_hex, sizeof(crc_hex), "%08x", crc32(body.data(), body.size()));
    {
        std::ofstream out(journal_path(), std::ios::app);
        if (!out) throw LpfError(Errc::StoreCorrupt, "cannot open journal for append");
        out << crc_hex << ' ' << body << '\n';
    }
    runs_[rec.run_id] = rec;
    write_snapshot();
}

std::optional<RunRecord> BookStore::get(int64_t run_id) const {
    auto it = runs_.find(run_id);
    if (it == runs_.end()) return std::nullopt;
    return it->second;
}

void BookStore::write_snapshot() const {
    json arr = json::array();
    for (const auto& [id, rec] : runs_) arr.push_back(json::parse(rec.to_json()));
    auto tmp = snapshot_path();
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        out << arr.dump(2);
    }
    std::filesystem::rename(tmp, snapshot_path());
}

void BookkeeperModule::init(lpf::Lpf& lpf, const lpf::Kv& config) {
    std::string dir = lpf::kv_get(config, "store_dir");
    if (dir.empty()) throw LpfError(Errc::ValidationError, "bookkeeper needs store_dir");
    store_ = std::make_unique<BookStore>(dir);
    if (store_->load() < 0)
        lpf.raise_alarm(lpf::AlarmLevel::Error, "bookkeeper",
                        "journal corrupt; valid prefix loaded, writes refused");
}

std::vector<lpf::Message> BookkeeperModule::do_message(lpf::Lpf& lpf, const lpf::Message& m) {
    using lpf::kv_get;
    if (m.verb == "BkPut") {
        auto rec = RunRecord::from_json(kv_get(m.body, "record"));
        if (!rec) return {m.answer("BkPutAnswer", {{"ok", "0"}, {"error", "bad record"}})};
        try {
            store_->put(*rec, lpf.clock().wall_unix_ms());
        } catch (const LpfError& ex) {
            lpf.raise_alarm(lpf::AlarmLevel::Error, "bookkeeper", ex.what());
            return {m.answer("BkPutAnswer", {{"ok", "0"}, {"error", ex.what()}})};
        }
        return {m.answer("BkPutAnswer", {{"ok", "1"}})};
    }
    if (m.verb == "BkSetPass") {
        int64_t run_id = lpf::kv_get_int(m.body, "run_id");
        auto rec = store_->get(run_id);
        if (!rec)
            return {m.answer("BkSetPassAnswer",
                             {{"ok", "0"}, {"error", "unknown run " + std::to_string(run_id)}})};
        PassInfo& p = rec->pass(kv_get(m.body, "pass", "PC"));
        p.status = kv_get(m.body, "status", p.status);
        if (m.body.count("events_processed"))
            p.events_processed = lpf::kv_get_int(m.body, "events_processed");
        if (m.body.count("fail_cause")) p.fail_cause = kv_get(m.body, "fail_cause");
        p.timestamps[p.status] = std::to_string(lpf.clock().wall_unix_ms());
        if (kv_get(m.body, "calibrated") == "1") rec->calibrated = true;
        if (m.body.count("log_dir") && !kv_get(m.body, "log_dir").empty())
            rec->log_dir = kv_get(m.body, "log_dir");
        if (m.body.count("xtc_path") && !kv_get(m.body, "xtc_path").empty())
            rec->xtc_path = kv_get(m.body, "xtc_path");
        try {
            store_->put(*rec, lpf.clock().wall_unix_ms());
        } catch (const LpfError& ex) {
            lpf.raise_alarm(lpf::AlarmLevel::Error, "bookkeeper", ex.what());
            return {m.answer("BkSetPassAnswer", {{"ok", "0"}, {"error", ex.what()}})};
        }
        return {m.answer("BkSetPassAnswer", {{"ok", "1"}})};
    }
    if (m.verb == "BkGet") {
        auto rec = store_->get(lpf::kv_get_int(m.body, "run_id"));
        if (!rec) return {m.answer("BkGetAnswer", {{"found", "0"}})};
        return {m.answer("BkGetAnswer", {{"found", "1"}, {"record", rec->to_json()}})};
    }
    if (m.verb == "BkList") {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& [id, rec] : store_->catalog())
            arr.push_back(nlohmann::json::parse(rec.to_json()));
        return {m.answer("BkListAnswer",
                         {{"records", arr.dump()},
                          {"corrupt", store_->corrupt() ? "1" : "0"}})};
    }
    return {};
}

}  // namespace farm
