#include "cli/activate.hpp"

#include <chrono>
#include <set>
#include <sstream>
#include <thread>

#include "lpf/lpf.hpp"
#include "lpf/sync_rpc.hpp"

namespace opcli {

using lpf::ActivationReport;
using lpf::ConfigTree;

lpf::ActivationReport run_activation(const ConfigTree& tree, int timeout_ms) {
    lpf::Lpf::Options opt;
    opt.name = "config-master";
    opt.port = 0;
    lpf::Lpf master(std::move(opt));
    auto service = std::make_unique<lpf::ActivationService>();
    auto* service_ptr = service.get();
    master.register_module({"activation", lpf::ModuleKind::Active, {}, true},
                           std::move(service));

    lpf::Message kick;
    kick.verb = "ActivateTree";
    kick.body = {{"tree", lpf::config_to_json(tree.root)}};
    kick.destination = lpf::local_module("activation");
    master.send(kick);

    auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    while (std::chrono::steady_clock::now() < deadline) {
        master.run_once();
        if (auto report = service_ptr->take_report()) return *report;
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    ActivationReport timed_out;
    timed_out.overall = "FAILED";
    return timed_out;
}

ReapOutcome run_reap(const ConfigTree& tree, const std::string& scope, int bare_port,
                     int timeout_ms, bool force) {
    // scope selects the hosts (and optionally the service filter)
    std::string service_filter;
    const lpf::ConfigNode* scope_node = &tree.root;
    if (scope != "ALL" && scope != tree.root.name) {
        for (const auto& svc : tree.root.children) {
            if (svc.kind == lpf::ConfigNode::Kind::Service && svc.name == scope) {
                scope_node = &svc;
                service_filter = scope;
                break;
            }
        }
    }

    std::set<std::string> hosts;
    for (const auto& [path, node] : lpf::collect_lpfs(*scope_node)) hosts.insert(node->host);

    ReapOutcome outcome;
    for (const auto& host : hosts) {
        ReapOutcome::HostResult hr;
        hr.host = host;
        lpf::Message q;
        q.id = lpf::fresh_client_id();
        q.verb = "LocalLpfReaper";
        if (!service_filter.empty()) q.body["service"] = service_filter;
        if (force) q.body["force"] = "1";
        q.destination = lpf::endpoint(host, bare_port, "local-lpf-map");
        q.source.module = "cli";
        auto r = lpf::sync_rpc(host, bare_port, std::move(q), timeout_ms);
        if (r.ok) {
            hr.reachable = true;
            hr.targeted = static_cast<int>(lpf::kv_get_int(r.answer.body, "targeted"));
        }
        outcome.hosts.push_back(hr);
    }
    return outcome;
}

std::string ReapOutcome::render() const {
    std::ostringstream out;
    for (const auto& h : hosts) {
        out << h.host << ": ";
        if (h.reachable) out << "reaped " << h.targeted << " lpf(s)";
        else out << "barelpf unreachable";
        out << "\n";
    }
    return out.str();
}

}  // namespace opcli
