#include "farm/scheduler.hpp"

namespace farm {

std::optional<int64_t> schedule_next(const std::map<int64_t, RunRecord>& catalog,
                                     const std::string& pass_type) {
    if (pass_type == "ER") {
        for (const auto& [id, rec] : catalog)
            if (rec.er.status == "STAGED" && rec.calibrated) return id;
        return std::nullopt;
    }
    // PC: strict sequential order over the catalog
    for (const auto& [id, rec] : catalog) {
        if (rec.pc.status == "DONE") continue;
        if (rec.pc.status == "STAGED") return id;
        return std::nullopt;  // PENDING/PROCESSING/FAILED predecessor blocks everything later
    }
    return std::nullopt;
}

std::optional<int64_t> next_to_stage(const std::map<int64_t, RunRecord>& catalog,
                                     const std::string& pass_type) {
    for (const auto& [id, rec] : catalog)
        if (rec.pass(pass_type).status == "PENDING") return id;
    return std::nullopt;
}

}  // namespace farm
