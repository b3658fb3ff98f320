#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "cli/client.hpp"

namespace opcli {

/// One farm to watch: the manager plus its run-processing host and nodes.
struct FarmTarget {
    std::string label;
    lpf::HostPort fm;
    lpf::HostPort rp;
    std::vector<lpf::HostPort> nodes;
};

/// "label,fm=h:p,rp=h:p[,node=h:p...]"
std::optional<FarmTarget> parse_farm_target(const std::string& text);

/// Periodically renders one status block per farm: manager phase, current
/// FSM state with dwell time, node summaries and recent alarms are shown
/// inline; unreachable targets are rendered, never fatal. Read-only: only
/// query verbs are ever sent. max_rounds = 0 loops until the stream fails.
int monitor(const std::vector<FarmTarget>& farms, int refresh_ms, int max_rounds,
            std::ostream& out, const Exchange& exchange = default_exchange());

}  // namespace opcli
