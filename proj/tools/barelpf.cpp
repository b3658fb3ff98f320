// BareLPF: the per-host bootstrap agent. Listens on a fixed, reserved port
// and does exactly one thing: spawn LPF daemons on request. It keeps the
// local LPF map, serves the discovery protocol and carries out reaping,
// surviving deactivation itself.

#include <CLI11.hpp>
#include <csignal>
#include <filesystem>

#include "lpf/activation.hpp"
#include "lpf/lpf.hpp"

int main(int argc, char** argv) {
    CLI::App app{"BareLPF bootstrap agent"};
    std::string host = "127.0.0.1";
    int port = 0;
    std::string lpfd_path;
    app.add_option("--host", host, "bind host");
    app.add_option("--port", port, "fixed port (default: BARELPF_PORT env or 34500)");
    app.add_option("--lpfd", lpfd_path, "path to the lpfd executable");
    CLI11_PARSE(app, argc, argv);

    std::signal(SIGPIPE, SIG_IGN);

    if (port <= 0) port = lpf::bare_port_from({});
    if (lpfd_path.empty()) {
        // default: lpfd sits next to this executable
        std::error_code ec;
        auto self = std::filesystem::canonical("/proc/self/exe", ec);
        lpfd_path = ec ? "lpfd" : (self.parent_path() / "lpfd").string();
    }

    lpf::Lpf::Options opt;
    opt.name = "barelpf";
    opt.host = host;
    opt.port = port;
    opt.service_marker = "bare";
    opt.config["lpfd_path"] = lpfd_path;

    lpf::Lpf bare(std::move(opt));
    bare.register_module({"local-lpf-map", lpf::ModuleKind::Active, bare.config(), true},
                         std::make_unique<lpf::SpawnerModule>());
    try {
        bare.start();
    } catch (const std::exception& ex) {
        std::fprintf(stderr, "barelpf: %s\n", ex.what());
        return 2;
    }
    bare.run();
    return 0;
}
