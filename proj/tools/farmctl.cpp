// Operator command line: single-shot commands, the integrated shell, the
// terminal farm monitor, discovery, and whole-system activation/reaping.

#include <CLI11.hpp>
#include <csignal>
#include <fstream>
#include <iostream>

#include "cli/activate.hpp"
#include "cli/client.hpp"
#include "cli/monitor.hpp"
#include "cli/shell.hpp"
#include "lpf/activation.hpp"

namespace {

std::string slurp(const std::string& path, std::string* err) {
    std::ifstream in(path);
    if (!in) {
        *err = "cannot open " + path;
        return "";
    }
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

int main(int argc, char** argv) {
    std::signal(SIGPIPE, SIG_IGN);

    CLI::App app{"farmcs operator interface"};
    app.require_subcommand(1);
    app.fallthrough();

    opcli::CliOptions opt;
    std::string interface_name = "User";
    double timeout_s = 3.0;
    app.add_option("--target", opt.target, "explicit LPF endpoint host:port");
    app.add_option("--broker", opt.broker, "naming broker host:port");
    app.add_option("--domain", opt.domain, "naming domain");
    app.add_option("--hosts", opt.hosts, "hosts for discovery")->delimiter(',');
    app.add_option("--bare-port", opt.bare_port, "BareLPF port (default: BARELPF_PORT or 34500)");
    app.add_option("--timeout", timeout_s, "seconds to wait for answers");
    app.add_option("--interface", interface_name, "command interface (User|Farm|Debug)");

    // discover
    auto* sc_discover = app.add_subcommand("discover", "list LPFs per host via the BareLPFs");

    // send (raw debug)
    auto* sc_send = app.add_subcommand("send", "send any verb to any module of any LPF");
    std::string send_target, send_module, send_verb;
    std::vector<std::string> send_kv;
    sc_send->add_option("target", send_target, "host:port")->required();
    sc_send->add_option("module", send_module)->required();
    sc_send->add_option("verb", send_verb)->required();
    sc_send->add_option("kv", send_kv, "body entries key=value");

    // shell
    auto* sc_shell = app.add_subcommand("shell", "interactive shell over the same command set");

    // monitor
    auto* sc_monitor = app.add_subcommand("monitor", "live status blocks for a set of farms");
    std::vector<std::string> farm_specs;
    double refresh_s = 2.0;
    int rounds = 0;
    sc_monitor->add_option("--farm", farm_specs, "label,fm=h:p[,rp=h:p][,node=h:p...]")
        ->required();
    sc_monitor->add_option("--refresh", refresh_s, "refresh period in seconds");
    sc_monitor->add_option("--rounds", rounds, "stop after N rounds (0: run until interrupted)");

    // activate / reap
    auto* sc_activate = app.add_subcommand("activate", "activate a configuration");
    std::string config_path;
    sc_activate->add_option("config", config_path, "configuration file")->required();
    auto* sc_reap = app.add_subcommand("reap", "deactivate: ALL, a System or a Service name");
    std::string reap_scope = "ALL";
    std::string reap_config;
    bool reap_force = false;
    sc_reap->add_option("scope", reap_scope, "ALL | system | service");
    sc_reap->add_option("--config", reap_config, "configuration file")->required();
    sc_reap->add_flag("--force", reap_force, "kill instead of asking LPFs to stop");

    // sugar for the most used farm commands
    auto* sc_status = app.add_subcommand("farm-status", "current farm phase and statistics");
    auto* sc_start = app.add_subcommand("start-run", "kick the scheduler / force a rerun");
    int64_t start_run_id = 0;
    bool start_force = false;
    sc_start->add_option("--run-id", start_run_id);
    sc_start->add_flag("--force", start_force);

    // generic single-shot entry over the loaded interface
    auto* sc_run = app.add_subcommand("run", "run an interface command: run <command> [args...]");
    std::vector<std::string> run_args;
    sc_run->add_option("argv", run_args, "command and its arguments");

    CLI11_PARSE(app, argc, argv);
    opt.timeout_ms = static_cast<int>(timeout_s * 1000);
    if (opt.bare_port <= 0) opt.bare_port = lpf::bare_port_from({});

    auto iface = opcli::make_interface(interface_name);
    if (!iface) {
        std::cerr << "unknown interface '" << interface_name << "'\n";
        return opcli::kCommandError;
    }

    if (sc_discover->parsed()) {
        auto d = opcli::discover(opt.hosts, opt.bare_port, opt.timeout_ms);
        std::cout << d.render();
        return opcli::kOk;
    }
    if (sc_send->parsed()) {
        opt.target = send_target;
        auto dbg = opcli::make_debug_interface();
        std::vector<std::string> args{send_module, send_verb};
        args.insert(args.end(), send_kv.begin(), send_kv.end());
        auto res = opcli::send_command(dbg, "send", args, opt);
        std::cout << res.rendered;
        return res.exit_code;
    }
    if (sc_shell->parsed()) {
        return opcli::shell_session(std::cin, std::cout, opt, interface_name);
    }
    if (sc_monitor->parsed()) {
        std::vector<opcli::FarmTarget> farms;
        for (const auto& spec : farm_specs) {
            auto t = opcli::parse_farm_target(spec);
            if (!t) {
                std::cerr << "bad --farm '" << spec << "'\n";
                return opcli::kCommandError;
            }
            farms.push_back(*t);
        }
        return opcli::monitor(farms, static_cast<int>(refresh_s * 1000), rounds, std::cout);
    }
    if (sc_activate->parsed()) {
        std::string err;
        std::string text = slurp(config_path, &err);
        if (!err.empty()) {
            std::cerr << err << "\n";
            return opcli::kCommandError;
        }
        lpf::ConfigTree tree;
        try {
            tree = lpf::parse_config(text);
            lpf::validate_config(tree, opt.bare_port);
        } catch (const std::exception& ex) {
            std::cerr << "configuration rejected: " << ex.what() << "\n";
            return opcli::kCommandError;
        }
        auto report = opcli::run_activation(tree);
        std::cout << report.render();
        return report.success() ? opcli::kOk : opcli::kCommandError;
    }
    if (sc_reap->parsed()) {
        std::string err;
        std::string text = slurp(reap_config, &err);
        if (!err.empty()) {
            std::cerr << err << "\n";
            return opcli::kCommandError;
        }
        lpf::ConfigTree tree;
        try {
            tree = lpf::parse_config(text);
        } catch (const std::exception& ex) {
            std::cerr << "configuration rejected: " << ex.what() << "\n";
            return opcli::kCommandError;
        }
        int bare = tree.root.get_int("barelpf_port", opt.bare_port) > 0
                       ? static_cast<int>(tree.root.get_int("barelpf_port", opt.bare_port))
                       : opt.bare_port;
        auto outcome = opcli::run_reap(tree, reap_scope, bare, opt.timeout_ms, reap_force);
        std::cout << outcome.render();
        return opcli::kOk;
    }
    if (sc_status->parsed()) {
        auto ui = opcli::make_user_interface();
        auto res = opcli::send_command(ui, "farm-status", {}, opt);
        std::cout << res.rendered;
        return res.exit_code;
    }
    if (sc_start->parsed()) {
        auto ui = opcli::make_user_interface();
        std::vector<std::string> args;
        if (start_run_id > 0) {
            args.push_back(std::to_string(start_run_id));
            args.push_back(start_force ? "1" : "0");
        }
        auto res = opcli::send_command(ui, "start-run", args, opt);
        std::cout << res.rendered;
        return res.exit_code;
    }
    if (sc_run->parsed()) {
        if (run_args.empty()) {
            std::cerr << iface->render_help();
            return opcli::kCommandError;
        }
        std::string command = run_args.front();
        std::vector<std::string> args(run_args.begin() + 1, run_args.end());
        auto res = opcli::send_command(*iface, command, args, opt);
        std::cout << res.rendered;
        return res.exit_code;
    }
    return opcli::kCommandError;
}
