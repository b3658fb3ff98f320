#include "lpf/clock.hpp"

#include <cstdio>
#include <ctime>
#include <thread>

namespace lpf {

Millis SystemClock::now() {
    return std::chrono::duration_cast<Millis>(std::chrono::steady_clock::now().time_since_epoch());
}

int64_t SystemClock::wall_unix_ms() {
    return std::chrono::duration_cast<Millis>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

void SystemClock::sleep_for(Millis d) {
    std::this_thread::sleep_for(d);
}

std::shared_ptr<Clock> system_clock() {
    static std::shared_ptr<Clock> instance = std::make_shared<SystemClock>();
    return instance;
}

std::string iso8601_utc(int64_t unix_ms) {
    std::time_t secs = static_cast<std::time_t>(unix_ms / 1000);
    int ms = static_cast<int>(unix_ms % 1000);
    if (ms < 0) {
        ms += 1000;
        secs -= 1;
    }
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, ms);
    return buf;
}

}  // namespace lpf
