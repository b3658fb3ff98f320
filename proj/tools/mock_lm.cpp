// Stand-in Logging Manager: one per run. Reads the run's synthetic XTC and
// serves contiguous event ranges to the farm nodes over the standard wire
// protocol (verb LmFetch -> LmRange). Runs until killed by the run
// processing machine.

#include <CLI11.hpp>
#include <csignal>

#include "farm/lm.hpp"
#include "lpf/lpf.hpp"

int main(int argc, char** argv) {
    CLI::App app{"mock logging manager"};
    std::string xtc;
    std::string host = "127.0.0.1";
    int port = 0;
    int nodes = 1;
    app.add_option("--xtc", xtc, "synthetic XTC file")->required();
    app.add_option("--host", host, "bind host");
    app.add_option("--port", port, "listen port")->required();
    app.add_option("--nodes", nodes, "number of node chunks");
    CLI11_PARSE(app, argc, argv);

    std::signal(SIGPIPE, SIG_IGN);

    lpf::Lpf::Options opt;
    opt.name = "lm";
    opt.host = host;
    opt.port = port;
    opt.service_marker = "lm";

    lpf::Lpf node(std::move(opt));
    try {
        node.register_module({"lm", lpf::ModuleKind::Passive,
                              {{"xtc", xtc}, {"nodes", std::to_string(nodes)}}},
                             std::make_unique<farm::LmModule>());
        node.start();
    } catch (const std::exception& ex) {
        std::fprintf(stderr, "mock_lm: %s\n", ex.what());
        return 2;
    }
    std::printf("LM ready on %s:%d\n", host.c_str(), port);
    node.run();
    return 0;
}
