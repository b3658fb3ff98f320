#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>

namespace lpf {

using Millis = std::chrono::milliseconds;

/// Injectable time source. Everything an LPF schedules (cron, timeouts,
/// pacing) goes through this interface so tests can run on simulated time.
class Clock {
public:
    virtual ~Clock() = default;

    /// Monotonic time since an arbitrary epoch.
    virtual Millis now() = 0;

    /// Wall clock, unix milliseconds. Used for log stamps and naming
    /// generation numbers; never for scheduling arithmetic.
    virtual int64_t wall_unix_ms() = 0;

    virtual void sleep_for(Millis d) = 0;
};

class SystemClock final : public Clock {
public:
    Millis now() override;
    int64_t wall_unix_ms() override;
    void sleep_for(Millis d) override;
};

/// Deterministic clock for tests. sleep_for() advances simulated time, so a
/// loop that paces itself makes progress without real delay.
class SimClock final : public Clock {
public:
    explicit SimClock(Millis start = Millis{0}) : now_(start) {}

    Millis now() override { return now_; }
    int64_t wall_unix_ms() override { return now_.count(); }
    void sleep_for(Millis d) override { now_ += d; }

    void advance(Millis d) { now_ += d; }

private:
    Millis now_;
};

std::shared_ptr<Clock> system_clock();

/// `YYYY-MM-DDTHH:MM:SS.mmmZ` for the given unix milliseconds.
std::string iso8601_utc(int64_t unix_ms);

}  // namespace lpf
