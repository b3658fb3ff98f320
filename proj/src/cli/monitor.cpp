#include "cli/monitor.hpp"

#include <ostream>
#include <sstream>
#include <thread>

#include "lpf/sync_rpc.hpp"

namespace opcli {

using lpf::HostPort;
using lpf::Kv;
using lpf::kv_get;
using lpf::Message;

std::optional<FarmTarget> parse_farm_target(const std::string& text) {
    FarmTarget t;
    std::istringstream is(text);
    std::string item;
    while (std::getline(is, item, ',')) {
        auto eq = item.find('=');
        if (eq == std::string::npos) {
            if (t.label.empty()) t.label = item;
            continue;
        }
        std::string key = item.substr(0, eq);
        auto hp = lpf::parse_host_port(item.substr(eq + 1));
        if (!hp) return std::nullopt;
        if (key == "fm") t.fm = *hp;
        else if (key == "rp") t.rp = *hp;
        else if (key == "node") t.nodes.push_back(*hp);
        else return std::nullopt;
    }
    if (t.label.empty()) t.label = t.fm.host + ":" + std::to_string(t.fm.port);
    if (t.fm.port == 0) return std::nullopt;
    return t;
}

namespace {

Kv query_one(const Exchange& exchange, const HostPort& target, const std::string& module,
             const std::string& verb, bool* ok) {
    Message q;
    q.id = lpf::fresh_client_id();
    q.verb = verb;
    q.destination = lpf::endpoint(target.host, target.port, module);
    q.source.module = "monitor";
    std::string err;
    auto answers = exchange(target, std::move(q), 1500, 100, &err);
    if (answers.empty()) {
        if (ok) *ok = false;
        return {};
    }
    if (ok) *ok = true;
    return answers[0].body;
}

}  // namespace

int monitor(const std::vector<FarmTarget>& farms, int refresh_ms, int max_rounds,
            std::ostream& out, const Exchange& exchange) {
    for (int round = 0; max_rounds == 0 || round < max_rounds; round++) {
        for (const auto& farm : farms) {
            bool fm_ok = false, rp_ok = false;
            Kv fm = query_one(exchange, farm.fm, "fm", "FarmStatus", &fm_ok);
            Kv rp;
            if (farm.rp.port > 0) rp = query_one(exchange, farm.rp, "rp", "FsmQuery", &rp_ok);

            out << "== " << farm.label << " ==\n";
            if (!fm_ok) {
                out << "  manager: unreachable\n";
            } else {
                out << "  manager: pass " << kv_get(fm, "pass") << ", " << kv_get(fm, "phase")
                    << ", run " << kv_get(fm, "active_run") << ", done "
                    << kv_get(fm, "runs_done") << ", failed " << kv_get(fm, "runs_failed")
                    << "\n";
            }
            if (farm.rp.port > 0) {
                if (!rp_ok) {
                    out << "  processing: unreachable\n";
                } else {
                    out << "  processing: " << kv_get(rp, "fsm") << " state "
                        << kv_get(rp, "state", "-") << " (" << kv_get(rp, "status")
                        << ", dwell " << kv_get(rp, "dwell_ms", "0") << " ms)\n";
                }
            }
            for (const auto& node : farm.nodes) {
                bool node_ok = false;
                Kv st = query_one(exchange, node, "core", "LpfStatus", &node_ok);
                out << "  node " << node.host << ":" << node.port << " "
                    << (node_ok ? ("up, queue " + kv_get(st, "queue_depth") +
                                   (kv_get(st, "degraded") == "1" ? ", degraded" : ""))
                                : "unreachable")
                    << "\n";
            }
        }
        out << std::flush;
        if (!out) return kTransportError;
        if (max_rounds == 0 || round + 1 < max_rounds)
            std::this_thread::sleep_for(std::chrono::milliseconds(refresh_ms));
    }
    return kOk;
}

}  // namespace opcli
