// LPF daemon: one event-loop agent. Spawned by a BareLPF (or by hand),
// then configured over the wire through the activation protocol. Exits on
// StopLocalLpf.

#include <CLI11.hpp>
#include <csignal>

#include "farm/factories.hpp"
#include "lpf/activation.hpp"
#include "lpf/lpf.hpp"

int main(int argc, char** argv) {
    CLI::App app{"LPF daemon"};
    std::string name = "lpf";
    std::string host = "127.0.0.1";
    int port = 0;
    std::string service;
    std::string log_file;
    app.add_option("--name", name, "LPF name");
    app.add_option("--host", host, "bind host");
    app.add_option("--port", port, "listen port")->required();
    app.add_option("--service", service, "service marker");
    app.add_option("--log-file", log_file, "local log file");
    CLI11_PARSE(app, argc, argv);

    std::signal(SIGPIPE, SIG_IGN);

    lpf::Lpf::Options opt;
    opt.name = name;
    opt.host = host;
    opt.port = port;
    opt.service_marker = service;
    if (!log_file.empty()) opt.config["log_file"] = log_file;

    lpf::Lpf node(std::move(opt));
    lpf::register_core_factories(node);
    farm::register_farm_factories(node);
    node.register_module({"activation", lpf::ModuleKind::Active, node.config(), true},
                         std::make_unique<lpf::ActivationService>());
    try {
        node.start();
    } catch (const std::exception& ex) {
        std::fprintf(stderr, "lpfd: %s\n", ex.what());
        return 2;
    }
    node.run();
    return 0;
}
