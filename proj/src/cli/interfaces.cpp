#include "cli/interfaces.hpp"

#include <sstream>

namespace opcli {

using lpf::Kv;

std::string CommandInterface::usage(const std::string& command) const {
    const Command* c = find(command);
    if (c == nullptr) return "unknown command '" + command + "'";
    std::ostringstream out;
    out << c->name;
    for (const auto& a : c->args) out << " <" << a << ">";
    for (const auto& a : c->optional_args) out << " [" << a << "]";
    out << "  - " << c->help;
    return out.str();
}

std::string CommandInterface::render_help() const {
    std::ostringstream out;
    out << "interface " << name << ":\n";
    for (const auto& [n, c] : commands) out << "  " << usage(n) << "\n";
    return out.str();
}

namespace {

Kv no_body(const std::vector<std::string>&) { return {}; }

Command cmd(std::string name, std::string help, std::string verb, std::string module,
            std::string rule, std::vector<std::string> args = {},
            std::vector<std::string> optional = {},
            std::function<Kv(const std::vector<std::string>&)> body = no_body) {
    Command c;
    c.name = std::move(name);
    c.help = std::move(help);
    c.verb = std::move(verb);
    c.default_module = std::move(module);
    c.target_rule = std::move(rule);
    c.args = std::move(args);
    c.optional_args = std::move(optional);
    c.body = std::move(body);
    return c;
}

}  // namespace

CommandInterface make_user_interface() {
    CommandInterface ui;
    ui.name = "User";
    auto add = [&](Command c) { ui.commands[c.name] = std::move(c); };
    add(cmd("farm-status", "current farm phase and run statistics", "FarmStatus", "fm",
            "service"));
    add(cmd("start-run", "kick the scheduler; with run id and force=1, reprocess", "StartRun",
            "fm", "service", {}, {"run_id", "force"},
            [](const std::vector<std::string>& a) {
                Kv b;
                if (a.size() > 0) b["run_id"] = a[0];
                if (a.size() > 1) b["force"] = a[1];
                return b;
            }));
    add(cmd("abort-run", "abort the run in progress", "AbortRun", "fm", "service"));
    add(cmd("lpf-status", "status of one LPF", "LpfStatus", "core", "explicit"));
    add(cmd("discover", "list LPFs per host via the BareLPFs", "", "", "bare"));
    return ui;
}

CommandInterface make_farm_interface() {
    CommandInterface fi;
    fi.name = "Farm";
    auto add = [&](Command c) { fi.commands[c.name] = std::move(c); };
    add(cmd("spawn", "spawn an LPF through the host's BareLPF", "SpawnLpf", "local-lpf-map",
            "explicit", {"name", "port"}, {"service"},
            [](const std::vector<std::string>& a) {
                Kv b{{"name", a[0]}, {"port", a[1]}};
                if (a.size() > 2) b["service"] = a[2];
                return b;
            }));
    add(cmd("reap-host", "stop LPFs on the target's host (optionally one service)",
            "LocalLpfReaper", "local-lpf-map", "explicit", {}, {"service"},
            [](const std::vector<std::string>& a) {
                Kv b;
                if (!a.empty()) b["service"] = a[0];
                return b;
            }));
    add(cmd("lpf-map", "list the LPFs tracked by the target BareLPF", "LpfMapQuery",
            "local-lpf-map", "explicit"));
    add(cmd("stage", "stage a run's XTC", "StageRun", "staging", "service",
            {"run_id", "events_total"}, {},
            [](const std::vector<std::string>& a) {
                return Kv{{"run_id", a[0]}, {"events_total", a[1]}};
            }));
    add(cmd("ns-lookup", "resolve a service in a naming domain", "NsLookup", "ns-broker",
            "explicit", {"domain", "name"}, {},
            [](const std::vector<std::string>& a) {
                return Kv{{"domain", a[0]}, {"name", a[1]}};
            }));
    return fi;
}

CommandInterface make_debug_interface() {
    CommandInterface di;
    di.name = "Debug";
    auto add = [&](Command c) { di.commands[c.name] = std::move(c); };
    // send any kind of message to any module
    add(cmd("send", "send an arbitrary verb to any module: send <module> <verb> [k=v ...]", "",
            "", "explicit", {"module", "verb"}, {"k=v..."},
            [](const std::vector<std::string>& a) {
                Kv b;
                for (size_t i = 2; i < a.size(); i++) {
                    auto eq = a[i].find('=');
                    if (eq != std::string::npos)
                        b[a[i].substr(0, eq)] = a[i].substr(eq + 1);
                }
                return b;
            }));
    add(cmd("ping", "liveness probe", "Ping", "core", "explicit"));
    add(cmd("lpf-status", "status of one LPF", "LpfStatus", "core", "explicit"));
    add(cmd("ns-dump", "dump a naming replica's records", "NsDump", "ns-replica", "explicit"));
    add(cmd("fsm-query", "query an FSM host's state and trace", "FsmQuery", "rp", "explicit",
            {}, {"module"}));
    return di;
}

std::vector<std::string> interface_names() { return {"User", "Farm", "Debug"}; }

std::optional<CommandInterface> make_interface(const std::string& name) {
    if (name == "User") return make_user_interface();
    if (name == "Farm") return make_farm_interface();
    if (name == "Debug") return make_debug_interface();
    return std::nullopt;
}

}  // namespace opcli
