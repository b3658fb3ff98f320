#pragma once

#include <cstdint>
#include <string>

#include "lpf/message.hpp"

namespace lpf {

enum class AlarmLevel { Info, Warning, Error, Fatal };

const char* alarm_level_name(AlarmLevel level);

/// Alarms are never silently dropped: every one reaches the local log (or
/// in-memory ring) and, when a global handler is configured, a message copy.
struct Alarm {
    AlarmLevel level = AlarmLevel::Info;
    Address origin;
    std::string text;
    int64_t wall_ms = 0;
};

}  // namespace lpf
