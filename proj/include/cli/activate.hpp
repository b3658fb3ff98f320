#pragma once

#include <string>
#include <vector>

#include "lpf/activation.hpp"
#include "lpf/config.hpp"

namespace opcli {

/// Acts as the Configuration Master: hosts an ephemeral LPF that drives the
/// recursive activation of the whole tree and returns the report. The tree
/// is parsed exactly once by the caller; children only ever see serialized
/// subtrees.
lpf::ActivationReport run_activation(const lpf::ConfigTree& tree, int timeout_ms = 120000);

struct ReapOutcome {
    struct HostResult {
        std::string host;
        bool reachable = false;
        int targeted = 0;
    };
    std::vector<HostResult> hosts;
    std::string render() const;
};

/// Deactivation: sends LocalLpfReaper to every BareLPF in scope.
/// scope: "ALL", the System name, or a Service name (only that service's
/// LPFs are then targeted). Unreachable hosts are listed, not fatal.
ReapOutcome run_reap(const lpf::ConfigTree& tree, const std::string& scope, int bare_port,
                     int timeout_ms = 5000, bool force = false);

}  // namespace opcli
