#include "cli/client.hpp"

#include <json.hpp>
#include <sstream>

#include "lpf/activation.hpp"
#include "lpf/naming.hpp"
#include "lpf/sync_rpc.hpp"

namespace opcli {

using lpf::HostPort;
using lpf::Kv;
using lpf::Message;

Exchange default_exchange() {
    return [](const HostPort& target, Message query, int timeout_ms, int quiet_ms,
              std::string* err) {
        return lpf::sync_collect(target.host, target.port, std::move(query), timeout_ms,
                                 quiet_ms, err);
    };
}

std::string render_answers(const std::vector<Message>& answers) {
    std::ostringstream out;
    for (const auto& a : answers) {
        out << a.verb;
        for (const auto& [k, v] : a.body) out << "\n  " << k << " = " << v;
        out << "\n";
    }
    return out.str();
}

namespace {

std::optional<HostPort> resolve_target(const Command& c, const CliOptions& opt,
                                       std::string* err) {
    if (!opt.target.empty()) {
        auto hp = lpf::parse_host_port(opt.target);
        if (!hp) {
            *err = "bad --target '" + opt.target + "'";
            return std::nullopt;
        }
        return hp;
    }
    if (c.target_rule == "service") {
        if (opt.broker.empty()) {
            *err = "command '" + c.name + "' needs --target or --broker for naming lookup";
            return std::nullopt;
        }
        auto hp = lpf::parse_host_port(opt.broker);
        if (!hp) {
            *err = "bad --broker '" + opt.broker + "'";
            return std::nullopt;
        }
        auto lr = lpf::ns::lookup(hp->host, hp->port, opt.domain, c.default_module,
                                  opt.timeout_ms);
        if (!lr.ok) {
            *err = "naming lookup failed: " + lr.error;
            return std::nullopt;
        }
        if (!lr.found) {
            *err = "service '" + c.default_module + "' not registered in domain " + opt.domain;
            return std::nullopt;
        }
        return HostPort{lr.host, lr.port};
    }
    *err = "command '" + c.name + "' needs --target host:port";
    return std::nullopt;
}

}  // namespace

CommandResult send_command(const CommandInterface& interface, const std::string& command,
                           const std::vector<std::string>& args, const CliOptions& opt,
                           const Exchange& exchange) {
    CommandResult res;
    const Command* c = interface.find(command);
    if (c == nullptr) {
        res.exit_code = kCommandError;
        res.rendered = "unknown command '" + command + "'\n" + interface.render_help();
        return res;
    }
    if (args.size() < c->args.size()) {
        res.exit_code = kCommandError;
        res.rendered = "usage: " + interface.usage(command);
        return res;
    }
    if (c->target_rule == "bare") {
        int bare = opt.bare_port > 0 ? opt.bare_port : lpf::bare_port_from({});
        auto d = discover(opt.hosts, bare, opt.timeout_ms, exchange);
        res.rendered = d.render();
        return res;
    }

    std::string err;
    auto target = resolve_target(*c, opt, &err);
    if (!target) {
        res.exit_code = kCommandError;
        res.rendered = err;
        return res;
    }

    Message q;
    q.id = lpf::fresh_client_id();
    q.body = c->body ? c->body(args) : Kv{};
    std::string module = c->default_module;
    std::string verb = c->verb;
    if (c->name == "send") {  // raw debug form: send <module> <verb> [k=v...]
        module = args[0];
        verb = args[1];
    }
    if (c->name == "fsm-query" && !args.empty()) module = args[0];
    q.verb = verb;
    q.destination = lpf::endpoint(target->host, target->port, module);
    q.source.module = "cli";

    auto answers = exchange(*target, std::move(q), opt.timeout_ms, opt.quiet_ms, &err);
    if (answers.empty()) {
        res.exit_code = kTransportError;
        res.rendered = "no answer from " + target->host + ":" + std::to_string(target->port) +
                       (err.empty() ? "" : ": " + err);
        return res;
    }
    res.answers = answers;
    res.rendered = render_answers(answers);
    return res;
}

DiscoveryResult discover(const std::vector<std::string>& hosts, int bare_port, int timeout_ms,
                         const Exchange& exchange) {
    DiscoveryResult result;
    for (const auto& host : hosts) {
        DiscoveryResult::HostEntry entry;
        entry.host = host;
        Message q;
        q.id = lpf::fresh_client_id();
        q.verb = "LpfMapQuery";
        q.destination = lpf::endpoint(host, bare_port, "local-lpf-map");
        q.source.module = "cli";
        std::string err;
        auto answers = exchange({host, bare_port}, std::move(q), timeout_ms, 100, &err);
        if (answers.empty()) {
            result.hosts.push_back(std::move(entry));
            continue;
        }
        entry.reachable = true;
        auto lpfs_json = lpf::kv_get(answers[0].body, "lpfs", "[]");
        auto arr = nlohmann::json::parse(lpfs_json, nullptr, false);
        if (arr.is_array()) {
            for (const auto& j : arr) {
                DiscoveredLpf d;
                d.name = j.value("name", "");
                d.port = j.value("port", 0);
                d.service = j.value("service", "");
                Message st;
                st.id = lpf::fresh_client_id();
                st.verb = "LpfStatus";
                st.destination = lpf::endpoint(host, d.port, "core");
                st.source.module = "cli";
                std::string serr;
                auto st_answers = exchange({host, d.port}, std::move(st), timeout_ms, 100, &serr);
                if (!st_answers.empty()) d.status = st_answers[0].body;
                entry.lpfs.push_back(std::move(d));
            }
        }
        result.hosts.push_back(std::move(entry));
    }
    return result;
}

std::string DiscoveryResult::render() const {
    std::ostringstream out;
    for (const auto& h : hosts) {
        out << h.host << ": " << (h.reachable ? "up" : "unreachable") << "\n";
        for (const auto& l : h.lpfs) {
            out << "  " << l.name << " :" << l.port;
            if (!l.service.empty()) out << " [" << l.service << "]";
            if (!l.status.empty()) {
                out << " modules=" << lpf::kv_get(l.status, "modules") << " uptime="
                    << lpf::kv_get(l.status, "uptime_s") << "s";
            } else {
                out << " (no status)";
            }
            out << "\n";
        }
    }
    return out.str();
}

}  // namespace opcli
