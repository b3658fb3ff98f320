#pragma once

#include <string>
#include <vector>

namespace lpf {

struct TraceStep {
    enum class Kind { Cron, Run, Poll, Do, Drop, Alarm };
    Kind kind;
    std::string module;
    std::string note;
};

/// Per-iteration record of hook invocations (a total order) plus message
/// accounting: in == delivered + dropped.
struct IterationTrace {
    std::vector<TraceStep> steps;
    int messages_in = 0;
    int delivered = 0;
    int dropped = 0;

    int count(TraceStep::Kind kind, const std::string& module = "") const {
        int n = 0;
        for (const auto& s : steps)
            if (s.kind == kind && (module.empty() || s.module == module)) n++;
        return n;
    }
};

}  // namespace lpf
