#pragma once

#include <map>
#include <optional>
#include <string>

#include "farm/records.hpp"

namespace farm {

/// Next run eligible to process.
/// PC: the lowest run whose predecessors are all DONE, itself STAGED
///     (strict sequential order: calibrations feed on previous runs).
/// ER: the lowest STAGED run that has been calibrated; no ordering
///     constraint beyond that.
std::optional<int64_t> schedule_next(const std::map<int64_t, RunRecord>& catalog,
                                     const std::string& pass_type);

/// Next run that still needs its XTC staged for this pass (lowest PENDING).
std::optional<int64_t> next_to_stage(const std::map<int64_t, RunRecord>& catalog,
                                     const std::string& pass_type);

}  // namespace farm
