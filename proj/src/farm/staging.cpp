#include "farm/staging.hpp"

#include <fstream>

#include "lpf/errors.hpp"
#include "lpf/lpf.hpp"

namespace farm {

using lpf::Errc;
using lpf::LpfError;

std::string xtc_event_payload(int64_t run_id, int64_t seq) {
    // small deterministic mixer; the value is opaque, only reproducibility matters
    uint64_t x = static_cast<uint64_t>(run_id) * 0x9e3779b97f4a7c15ull + static_cast<uint64_t>(seq);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(x));
    return buf;
}

std::filesystem::path write_xtc(const std::filesystem::path& staging_area, int64_t run_id,
                                int64_t events_total) {
    std::filesystem::create_directories(staging_area);
    auto path = staging_area / ("run_" + std::to_string(run_id) + ".xtc");
    std::ofstream out(path, std::ios::trunc);
    out << "XTC run=" << run_id << " events=" << events_total << "\n";
    for (int64_t seq = 0; seq < events_total; seq++)
        out << "EVT " << seq << " " << xtc_event_payload(run_id, seq) << "\n";
    return path;
}

std::optional<XtcHeader> read_xtc_header(const std::filesystem::path& xtc_path) {
    std::ifstream in(xtc_path);
    if (!in) return std::nullopt;
    std::string line;
    if (!std::getline(in, line)) return std::nullopt;
    XtcHeader h;
    if (std::sscanf(line.c_str(), "XTC run=%lld events=%lld",
                    reinterpret_cast<long long*>(&h.run_id),
                    reinterpret_cast<long long*>(&h.events)) != 2)
        return std::nullopt;
    return h;
}

void StagingModule::init(lpf::Lpf&, const lpf::Kv& config) {
    std::string area = lpf::kv_get(config, "staging_area");
    if (area.empty()) throw LpfError(Errc::ValidationError, "staging needs staging_area");
    area_ = area;
    quota_files_ = static_cast<int>(lpf::kv_get_int(config, "quota_files", 0));
    std::filesystem::create_directories(area_);
}

std::filesystem::path StagingModule::stage(int64_t run_id, int64_t events_total) {
    auto path = area_ / ("run_" + std::to_string(run_id) + ".xtc");
    if (std::filesystem::exists(path))
        throw LpfError(Errc::AlreadyStaged, path.string());
    if (quota_files_ > 0) {
        int present = 0;
        for (const auto& e : std::filesystem::directory_iterator(area_))
            if (e.path().extension() == ".xtc") present++;
        if (present >= quota_files_)
            throw LpfError(Errc::StagingAreaFull,
                           "quota " + std::to_string(quota_files_) + " files reached");
    }
    return write_xtc(area_, run_id, events_total);
}

std::vector<lpf::Message> StagingModule::do_message(lpf::Lpf& lpf, const lpf::Message& m) {
    if (m.verb != "StageRun") return {};
    int64_t run_id = lpf::kv_get_int(m.body, "run_id");
    int64_t events = lpf::kv_get_int(m.body, "events_total");
    try {
        auto path = stage(run_id, events);
        return {m.answer("StageRunAnswer", {{"ok", "1"}, {"xtc_path", path.string()}})};
    } catch (const LpfError& ex) {
        lpf::Kv body{{"ok", "0"}, {"error", lpf::errc_name(ex.code())}, {"detail", ex.what()}};
        if (ex.code() == Errc::AlreadyStaged)
            body["xtc_path"] = (area_ / ("run_" + std::to_string(run_id) + ".xtc")).string();
        return {m.answer("StageRunAnswer", std::move(body))};
    }
}

}  // namespace farm
