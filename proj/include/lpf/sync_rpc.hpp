#pragma once

#include <string>
#include <vector>

#include "lpf/message.hpp"

namespace lpf {

/// Bounded synchronous request/answer exchange over one throwaway
/// connection. Used by short-lived clients (CLI, harnesses) and by the
/// bounded in-loop paths (naming lookups during activation, proxy
/// re-resolution).
struct RpcResult {
    bool ok = false;
    Message answer;
    std::string error;
};

RpcResult sync_rpc(const std::string& host, int port, Message query, int timeout_ms);

/// Collect every answer correlated to the query until the quiet period
/// elapses with no further traffic (multi-answer commands).
std::vector<Message> sync_collect(const std::string& host, int port, Message query,
                                  int timeout_ms, int quiet_ms, std::string* err = nullptr);

std::string fresh_client_id();

}  // namespace lpf
