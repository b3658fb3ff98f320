#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cli/interfaces.hpp"
#include "lpf/lpf.hpp"

namespace opcli {

/// Exit codes: 0 success, 1 command error, 2 transport/timeout.
inline constexpr int kOk = 0;
inline constexpr int kCommandError = 1;
inline constexpr int kTransportError = 2;

/// All CLI <-> system traffic is regular framed messages; this hook lets
/// tests capture it. The default wraps the synchronous collector.
using Exchange = std::function<std::vector<lpf::Message>(
    const lpf::HostPort& target, lpf::Message query, int timeout_ms, int quiet_ms,
    std::string* err)>;

Exchange default_exchange();

struct CliOptions {
    std::string target;               // explicit host:port
    std::string broker;               // naming broker host:port
    std::string domain = "default";
    std::vector<std::string> hosts;   // discovery fan-out
    int bare_port = 0;                // 0: default/env
    int timeout_ms = 3000;
    int quiet_ms = 500;               // answer-collection quiet period
};

struct CommandResult {
    int exit_code = kOk;
    std::string rendered;
    std::vector<lpf::Message> answers;
};

/// Build, resolve, send, collect, render.
CommandResult send_command(const CommandInterface& interface, const std::string& command,
                           const std::vector<std::string>& args, const CliOptions& opt,
                           const Exchange& exchange = default_exchange());

struct DiscoveredLpf {
    std::string name;
    int port = 0;
    std::string service;
    lpf::Kv status;  // LpfStatus answer body (empty if unreachable)
};

struct DiscoveryResult {
    struct HostEntry {
        std::string host;
        bool reachable = false;
        std::vector<DiscoveredLpf> lpfs;
    };
    std::vector<HostEntry> hosts;
    std::string render() const;
};

/// Query each host's BareLPF for its local LPF map, then each listed LPF for
/// status. Unreachable hosts are reported, never fatal.
DiscoveryResult discover(const std::vector<std::string>& hosts, int bare_port, int timeout_ms,
                         const Exchange& exchange = default_exchange());

std::string render_answers(const std::vector<lpf::Message>& answers);

}  // namespace opcli
