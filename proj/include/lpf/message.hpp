#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace lpf {

/// Flat string key/value map. The universal payload and configuration
/// currency; ordered so encodings are deterministic.
using Kv = std::map<std::string, std::string>;

inline constexpr const char* kLocalDomain = "LOCAL";

/// Forwarding loop guard: messages hopping more than this many LPFs are
/// dropped with an alarm.
inline constexpr int kMaxHops = 16;

struct Address {
    std::string domain = kLocalDomain;
    std::string service;  // global service name, resolved via naming
    std::string host;     // explicit endpoint...
    int port = 0;         // ...pair identifying a running LPF
    std::string module;   // module within the destination LPF

    bool has_endpoint() const { return !host.empty() && port > 0; }
    std::string str() const;

    bool operator==(const Address&) const = default;
};

Address local_module(const std::string& module);
Address endpoint(const std::string& host, int port, const std::string& module = "",
                 const std::string& domain = kLocalDomain);
Address service_addr(const std::string& domain, const std::string& service);

/// The universal asynchronous communication envelope.
struct Message {
    std::string id;              // unique per originating LPF session
    std::string correlation_id;  // links an answer to its query
    Address source;
    Address destination;
    std::string verb;
    Kv body;
    int hop_count = 0;

    bool operator==(const Message&) const = default;

    /// Reply skeleton: destination = query source, correlation = query id.
    /// The id is left empty; the sending LPF stamps it.
    Message answer(const std::string& answer_verb, Kv answer_body = {}) const;
};

std::string kv_get(const Kv& kv, const std::string& key, const std::string& def = "");
int64_t kv_get_int(const Kv& kv, const std::string& key, int64_t def = 0);

}  // namespace lpf
