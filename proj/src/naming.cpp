#include "lpf/naming.hpp"

#include <fstream>
#include <json.hpp>

#include "lpf/lpf.hpp"
#include "lpf/netlink.hpp"
#include "lpf/sync_rpc.hpp"

namespace lpf {

using nlohmann::json;

namespace {

constexpr char kKeySep = '\x1f';

std::string record_key(const std::string& domain, const std::string& name) {
    return domain + kKeySep + name;
}

json record_json(const ServiceRecord& r) {
    return json{{"domain", r.domain},         {"name", r.name},
                {"host", r.host},             {"port", r.port},
                {"generation", r.generation}, {"registered_at", r.registered_at},
                {"deleted", r.deleted}};
}

ServiceRecord record_from(const json& j) {
    ServiceRecord r;
    r.domain = j.value("domain", "");
    r.name = j.value("name", "");
    r.host = j.value("host", "");
    r.port = j.value("port", 0);
    r.generation = j.value("generation", int64_t{0});
    r.registered_at = j.value("registered_at", int64_t{0});
    r.deleted = j.value("deleted", false);
    return r;
}

std::vector<std::pair<std::string, int>> parse_endpoints(const std::string& csv) {
    std::vector<std::pair<std::string, int>> out;
    size_t pos = 0;
    while (pos < csv.size()) {
        size_t comma = csv.find(',', pos);
        std::string item = csv.substr(pos, comma == std::string::npos ? csv.npos : comma - pos);
        if (auto hp = parse_host_port(item)) out.emplace_back(hp->host, hp->port);
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

}  // namespace

bool record_newer(const ServiceRecord& a, const ServiceRecord& b) {
    if (a.generation != b.generation) return a.generation > b.generation;
    if (a.registered_at != b.registered_at) return a.registered_at > b.registered_at;
    std::string la = a.host + ":" + std::to_string(a.port);
    std::string lb = b.host + ":" + std::to_string(b.port);
    return la > lb;
}

// ---------------------------------------------------------------- replica

void NsReplicaModule::init(Lpf& lpf, const Kv& config) {
    peers_ = parse_endpoints(kv_get(config, "peers"));
    store_file_ = kv_get(config, "store_file");
    name_ = kv_get(config, "__name", "ns-replica");
    peer_module_ = kv_get(config, "peer_module", name_);

    if (!store_file_.empty()) {
        std::ifstream in(store_file_);
        if (in) {
            std::string text((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
            if (!text.empty()) merge_json(text);
        }
    }
    if (!peers_.empty()) {
        int64_t period_s = kv_get_int(config, "sync_period_s", 5);
        Message tick;
        tick.verb = "NsSyncTick";
        tick.destination = local_module(name_);
        lpf.schedule_cron(Millis(period_s * 1000), std::move(tick));
    }
}

bool NsReplicaModule::apply(const ServiceRecord& r) {
    auto key = record_key(r.domain, r.name);
    auto it = records_.find(key);
    if (it == records_.end()) {
        records_[key] = r;
        return true;
    }
    if (it->second == r) return true;  // idempotent rewrite
    if (!record_newer(r, it->second)) return false;
    it->second = r;
    return true;
}

std::string NsReplicaModule::dump_json(bool include_tombstones) const {
    json arr = json::array();
    for (const auto& [key, rec] : records_) {
        if (!include_tombstones && rec.deleted) continue;
        arr.push_back(record_json(rec));
    }
    return arr.dump();
}

int NsReplicaModule::merge_json(const std::string& text) {
    json arr = json::parse(text, nullptr, false);
    if (arr.is_discarded() || !arr.is_array()) return -1;
    int merged = 0;
    for (const auto& j : arr) {
        ServiceRecord r = record_from(j);
        if (r.name.empty()) continue;
        if (apply(r)) merged++;
    }
    if (merged > 0) persist();
    return merged;
}

void NsReplicaModule::persist() const {
    if (store_file_.empty()) return;
    std::ofstream out(store_file_, std::ios::trunc);
    out << dump_json(true);
}

std::vector<Message> NsReplicaModule::do_message(Lpf& lpf, const Message& m) {
    if (m.verb == "NsWrite") {
        ServiceRecord r;
        r.domain = kv_get(m.body, "domain");
        r.name = kv_get(m.body, "name");
        r.host = kv_get(m.body, "host");
        r.port = static_cast<int>(kv_get_int(m.body, "port"));
        r.generation = kv_get_int(m.body, "generation");
        r.registered_at = kv_get_int(m.body, "registered_at");
        r.deleted = kv_get(m.body, "deleted") == "1";
        bool applied = apply(r);
        if (applied) persist();
        return {m.answer("NsWriteAck", {{"applied", applied ? "1" : "0"}})};
    }
    if (m.verb == "NsGet") {
        auto it = records_.find(record_key(kv_get(m.body, "domain"), kv_get(m.body, "name")));
        Kv body;
        if (it != records_.end() && !it->second.deleted) {
            body["found"] = "1";
            body["host"] = it->second.host;
            body["port"] = std::to_string(it->second.port);
            body["generation"] = std::to_string(it->second.generation);
        } else {
            body["found"] = "0";
        }
        return {m.answer("NsGetAnswer", std::move(body))};
    }
    if (m.verb == "NsDump")
        return {m.answer("NsDumpAnswer",
                         {{"records", dump_json(kv_get(m.body, "tombstones") == "1")}})};
    if (m.verb == "NsPull") return {m.answer("NsPullAnswer", {{"records", dump_json(true)}})};
    if (m.verb == "NsSync") {
        int n = merge_json(kv_get(m.body, "records"));
        return {m.answer("NsSyncAck", {{"merged", std::to_string(std::max(0, n))}})};
    }
    if (m.verb == "NsSyncTick") {
        std::vector<Message> out;
        for (const auto& [host, port] : peers_) {
            Message pull;
            pull.id = lpf.next_message_id();
            pull.verb = "NsPull";
            pull.destination = endpoint(host, port, peer_module_);
            pull.source.module = name_;
            out.push_back(std::move(pull));
        }
        return out;
    }
    if (m.verb == "NsPullAnswer") {
        merge_json(kv_get(m.body, "records"));
        return {};
    }
    return {};
}

// ----------------------------------------------------------------- broker

void NsBrokerModule::init(Lpf& lpf, const Kv& config) {
    replicas_ = parse_endpoints(kv_get(config, "replicas"));
    replica_module_ = kv_get(config, "replica_module", "ns-replica");
    name_ = kv_get(config, "__name", "ns-broker");
    tx_timeout_ms_ = static_cast<int>(kv_get_int(config, "tx_timeout_ms", 1500));
    if (replicas_.empty())
        lpf.raise_alarm(AlarmLevel::Warning, name_, "no replicas configured");
}

int64_t NsBrokerModule::next_generation(Lpf& lpf) {
    int64_t g = lpf.clock().wall_unix_ms();
    if (g <= gen_last_) g = gen_last_ + 1;
    gen_last_ = g;
    return g;
}

bool NsBrokerModule::send_direct(Lpf& lpf, const std::pair<std::string, int>& replica,
                                 Message m) {
    m.destination = endpoint(replica.first, replica.second, replica_module_);
    m.source.module = name_;
    std::string err;
    return lpf.netlink()->send_remote(lpf, std::move(m), &err);
}

void NsBrokerModule::start_write(Lpf& lpf, const Message& q, bool deleted,
                                 std::vector<Message>& out) {
    auto tx = std::make_unique<Tx>();
    tx->client_query = q;
    tx->kind = deleted ? "unregister" : "register";
    tx->deadline_ms = lpf.clock().now().count() + tx_timeout_ms_;
    tx->record.domain = kv_get(q.body, "domain");
    tx->record.name = kv_get(q.body, "name");
    tx->record.host = kv_get(q.body, "host");
    tx->record.port = static_cast<int>(kv_get_int(q.body, "port"));
    tx->record.registered_at = lpf.clock().wall_unix_ms();
    tx->record.generation = next_generation(lpf);
    tx->record.deleted = deleted;

    Kv body{{"domain", tx->record.domain},
            {"name", tx->record.name},
            {"host", tx->record.host},
            {"port", std::to_string(tx->record.port)},
            {"generation", std::to_string(tx->record.generation)},
            {"registered_at", std::to_string(tx->record.registered_at)},
            {"deleted", deleted ? "1" : "0"}};
    for (const auto& replica : replicas_) {
        Message w;
        w.id = lpf.next_message_id();
        w.verb = "NsWrite";
        w.body = body;
        if (send_direct(lpf, replica, w)) {
            tx->waits.push_back(w.id);
            by_wait_[w.id] = tx.get();
        }
    }
    txs_.push_back(std::move(tx));
    if (txs_.back()->waits.empty()) settle(lpf, *txs_.back(), out);
}

void NsBrokerModule::ask_replica(Lpf& lpf, Tx& tx, std::vector<Message>& out) {
    while (tx.replicas_tried < static_cast<int>(replicas_.size())) {
        const auto& replica = replicas_[rr_next_++ % replicas_.size()];
        tx.replicas_tried++;
        Message g;
        g.id = lpf.next_message_id();
        g.verb = "NsGet";
        g.body = {{"domain", kv_get(tx.client_query.body, "domain")},
                  {"name", kv_get(tx.client_query.body, "name")}};
        if (send_direct(lpf, replica, g)) {
            tx.waits.assign(1, g.id);
            by_wait_[g.id] = &tx;
            tx.deadline_ms = lpf.clock().now().count() + tx_timeout_ms_;
            return;
        }
    }
    settle(lpf, tx, out);  // every replica unreachable
}

void NsBrokerModule::start_lookup(Lpf& lpf, const Message& q, std::vector<Message>& out) {
    auto tx = std::make_unique<Tx>();
    tx->client_query = q;
    tx->kind = "lookup";
    txs_.push_back(std::move(tx));
    ask_replica(lpf, *txs_.back(), out);
}

void NsBrokerModule::settle(Lpf& lpf, Tx& tx, std::vector<Message>& out) {
    if (tx.done) return;
    tx.done = true;
    for (const auto& w : tx.waits) by_wait_.erase(w);
    tx.waits.clear();

    if (tx.kind == "lookup") {
        out.push_back(tx.client_query.answer("NsLookupAnswer",
                                             {{"ok", "0"}, {"error", "AllReplicasDown"}}));
        lpf.raise_alarm(AlarmLevel::Error, name_,
                        "lookup " + kv_get(tx.client_query.body, "name") + ": all replicas down");
        return;
    }
    std::string ack_verb = tx.kind == "register" ? "NsRegisterAck" : "NsUnregisterAck";
    if (tx.acks >= 1) {
        out.push_back(tx.client_query.answer(
            ack_verb, {{"ok", "1"}, {"replicas", std::to_string(tx.acks)}}));
    } else {
        out.push_back(
            tx.client_query.answer(ack_verb, {{"ok", "0"}, {"error", "AllReplicasDown"}}));
        lpf.raise_alarm(AlarmLevel::Error, name_,
                        tx.kind + " " + tx.record.name + ": all replicas down");
    }
}

std::vector<Message> NsBrokerModule::do_message(Lpf& lpf, const Message& m) {
    std::vector<Message> out;
    if (m.verb == "NsRegister") {
        start_write(lpf, m, false, out);
    } else if (m.verb == "NsUnregister") {
        start_write(lpf, m, true, out);
    } else if (m.verb == "NsLookup") {
        start_lookup(lpf, m, out);
    } else if (m.verb == "NsBrokerState") {
        out.push_back(m.answer("NsBrokerStateAnswer", {{"state", state_snapshot()}}));
    } else if (auto wit = by_wait_.find(m.correlation_id); wit != by_wait_.end()) {
        Tx& tx = *wit->second;
        by_wait_.erase(wit);
        std::erase(tx.waits, m.correlation_id);
        if (m.verb == "NsWriteAck") {
            tx.acks++;
            if (tx.waits.empty()) settle(lpf, tx, out);
        } else if (m.verb == "NsGetAnswer") {
            tx.done = true;
            Kv body{{"ok", "1"}, {"found", kv_get(m.body, "found")}};
            if (kv_get(m.body, "found") == "1") {
                body["host"] = kv_get(m.body, "host");
                body["port"] = kv_get(m.body, "port");
                body["generation"] = kv_get(m.body, "generation");
            }
            out.push_back(tx.client_query.answer("NsLookupAnswer", std::move(body)));
        }
    }
    return out;
}

std::vector<Message> NsBrokerModule::run(Lpf& lpf) {
    std::vector<Message> out;
    int64_t now = lpf.clock().now().count();
    for (auto& tx : txs_) {
        if (tx->done || tx->deadline_ms > now) continue;
        for (const auto& w : tx->waits) by_wait_.erase(w);
        tx->waits.clear();
        if (tx->kind == "lookup") {
            ask_replica(lpf, *tx, out);  // transparently try the next replica
        } else {
            settle(lpf, *tx, out);
        }
    }
    std::erase_if(txs_, [](const auto& tx) { return tx->done; });
    return out;
}

std::string NsBrokerModule::state_snapshot() const {
    json j;
    j["replicas"] = json::array();
    for (const auto& [host, port] : replicas_)
        j["replicas"].push_back(host + ":" + std::to_string(port));
    j["in_flight"] = txs_.size();
    return j.dump();
}

// --------------------------------------------------------- client helpers

namespace ns {

LookupResult lookup(const std::string& broker_host, int broker_port, const std::string& domain,
                    const std::string& name, int timeout_ms) {
    Message q;
    q.verb = "NsLookup";
    q.body = {{"domain", domain}, {"name", name}};
    q.destination = endpoint(broker_host, broker_port, "ns-broker");
    auto r = sync_rpc(broker_host, broker_port, std::move(q), timeout_ms);
    LookupResult lr;
    if (!r.ok) {
        lr.error = r.error;
        return lr;
    }
    if (kv_get(r.answer.body, "ok") != "1") {
        lr.error = kv_get(r.answer.body, "error", "lookup failed");
        return lr;
    }
    lr.ok = true;
    lr.found = kv_get(r.answer.body, "found") == "1";
    if (lr.found) {
        lr.host = kv_get(r.answer.body, "host");
        lr.port = static_cast<int>(kv_get_int(r.answer.body, "port"));
    }
    return lr;
}

int register_service(const std::string& broker_host, int broker_port, const ServiceRecord& rec,
                     int timeout_ms, std::string* err) {
    Message q;
    q.verb = "NsRegister";
    q.body = {{"domain", rec.domain},
              {"name", rec.name},
              {"host", rec.host},
              {"port", std::to_string(rec.port)}};
    q.destination = endpoint(broker_host, broker_port, "ns-broker");
    auto r = sync_rpc(broker_host, broker_port, std::move(q), timeout_ms);
    if (!r.ok) {
        if (err) *err = r.error;
        return -1;
    }
    if (kv_get(r.answer.body, "ok") != "1") {
        if (err) *err = kv_get(r.answer.body, "error", "registration failed");
        return -1;
    }
    return static_cast<int>(kv_get_int(r.answer.body, "replicas"));
}

int unregister_service(const std::string& broker_host, int broker_port, const std::string& domain,
                       const std::string& name, int timeout_ms, std::string* err) {
    Message q;
    q.verb = "NsUnregister";
    q.body = {{"domain", domain}, {"name", name}};
    q.destination = endpoint(broker_host, broker_port, "ns-broker");
    auto r = sync_rpc(broker_host, broker_port, std::move(q), timeout_ms);
    if (!r.ok) {
        if (err) *err = r.error;
        return -1;
    }
    if (kv_get(r.answer.body, "ok") != "1") {
        if (err) *err = kv_get(r.answer.body, "error", "unregister failed");
        return -1;
    }
    return static_cast<int>(kv_get_int(r.answer.body, "replicas"));
}

}  // namespace ns

}  // namespace lpf
