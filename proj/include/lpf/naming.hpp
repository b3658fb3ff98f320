#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lpf/module.hpp"

namespace lpf {

class Lpf;

/// One naming entry: service name bound to the (host, port) of a running
/// LPF within a naming domain. Generations increase monotonically per name;
/// removal is a tombstone (deleted record) so anti-entropy can propagate it.
struct ServiceRecord {
    std::string domain;
    std::string name;
    std::string host;
    int port = 0;
    int64_t generation = 0;
    int64_t registered_at = 0;
    bool deleted = false;

    bool operator==(const ServiceRecord&) const = default;
};

/// True if a supersedes b under the conflict rule: higher generation wins,
/// ties broken by latest registered_at, then lexicographic location.
bool record_newer(const ServiceRecord& a, const ServiceRecord& b);

/// Replicated store. Verbs: NsWrite, NsGet, NsDump, NsPull, NsSync. Peers
/// listed in config are pulled on a cron schedule (anti-entropy); an
/// optional store_file carries the record set across restarts.
class NsReplicaModule : public Module {
public:
    void init(Lpf& lpf, const Kv& config) override;
    std::vector<Message> do_message(Lpf& lpf, const Message& m) override;

    const std::map<std::string, ServiceRecord>& records() const { return records_; }

private:
    bool apply(const ServiceRecord& r);
    std::string dump_json(bool include_tombstones) const;
    int merge_json(const std::string& text);
    void persist() const;

    std::map<std::string, ServiceRecord> records_;  // key: domain \x1f name
    std::vector<std::pair<std::string, int>> peers_;
    std::string store_file_;
    std::string name_;
    std::string peer_module_;
};

/// Stateless-except-transactions access point: replicates writes to every
/// reachable replica, round-robins lookups across them, and survives restart
/// because it stores no registry data. Replica queries go straight through
/// the connection cache so a dead replica fails fast and the next one is
/// tried transparently.
class NsBrokerModule : public Module {
public:
    void init(Lpf& lpf, const Kv& config) override;
    std::vector<Message> do_message(Lpf& lpf, const Message& m) override;
    std::vector<Message> run(Lpf& lpf) override;

    /// Serialized broker state for the statelessness assertion: replica list
    /// and transaction count only, never records.
    std::string state_snapshot() const;

private:
    struct Tx {
        Message client_query;
        std::string kind;  // register | unregister | lookup
        std::vector<std::string> waits;
        int acks = 0;
        int64_t deadline_ms = 0;
        int replicas_tried = 0;  // lookup only
        ServiceRecord record;
        bool done = false;
    };

    void start_write(Lpf& lpf, const Message& q, bool deleted, std::vector<Message>& out);
    void start_lookup(Lpf& lpf, const Message& q, std::vector<Message>& out);
    /// Picks the next replica round-robin and sends NsGet; skips unreachable
    /// replicas immediately. Settles the tx when every replica failed.
    void ask_replica(Lpf& lpf, Tx& tx, std::vector<Message>& out);
    void settle(Lpf& lpf, Tx& tx, std::vector<Message>& out);
    bool send_direct(Lpf& lpf, const std::pair<std::string, int>& replica, Message m);
    int64_t next_generation(Lpf& lpf);

    std::vector<std::pair<std::string, int>> replicas_;
    std::vector<std::unique_ptr<Tx>> txs_;
    std::map<std::string, Tx*> by_wait_;  // outstanding correlation id -> tx
    std::string name_;
    std::string replica_module_;
    size_t rr_next_ = 0;
    int64_t gen_last_ = 0;
    int tx_timeout_ms_ = 1500;
};

/// Bounded synchronous client side, used during activation, proxy
/// re-resolution and by short-lived tools.
namespace ns {

struct LookupResult {
    bool ok = false;  // broker reachable and replicas answered
    bool found = false;
    std::string host;
    int port = 0;
    std::string error;
};

LookupResult lookup(const std::string& broker_host, int broker_port, const std::string& domain,
                    const std::string& name, int timeout_ms);

/// Returns replica ack count (>= 1 on success), or -1 with *err.
int register_service(const std::string& broker_host, int broker_port, const ServiceRecord& rec,
                     int timeout_ms, std::string* err);

int unregister_service(const std::string& broker_host, int broker_port, const std::string& domain,
                       const std::string& name, int timeout_ms, std::string* err);

}  // namespace ns

}  // namespace lpf
