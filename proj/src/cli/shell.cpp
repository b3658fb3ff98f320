#include "cli/shell.hpp"

#include <istream>
#include <ostream>
#include <sstream>

namespace opcli {

namespace {

std::vector<std::string> tokenize(const std::string& line) {
    std::vector<std::string> toks;
    std::istringstream is(line);
    std::string t;
    while (is >> t) toks.push_back(t);
    return toks;
}

}  // namespace

int shell_session(std::istream& in, std::ostream& out, CliOptions opt,
                  const std::string& initial_interface, const Exchange& exchange) {
    auto iface = make_interface(initial_interface);
    if (!iface) {
        out << "unknown interface '" << initial_interface << "'\n";
        return kCommandError;
    }
    out << "farmcs shell, interface " << iface->name << " (help | interface <name> | quit)\n";
    std::string line;
    while (out << "> " << std::flush, std::getline(in, line)) {
        auto toks = tokenize(line);
        if (toks.empty()) continue;
        const std::string& head = toks[0];
        if (head == "quit" || head == "exit") return kOk;
        if (head == "help") {
            out << iface->render_help();
            continue;
        }
        if (head == "interface") {
            if (toks.size() != 2) {
                out << "usage: interface <";
                for (const auto& n : interface_names()) out << n << "|";
                out << ">\n";
                continue;
            }
            auto next = make_interface(toks[1]);
            if (!next) {
                out << "unknown interface '" << toks[1] << "'\n";
                continue;
            }
            iface = next;
            out << "interface " << iface->name << " loaded\n";
            continue;
        }
        // target override per command: @host:port as the first token
        CliOptions per = opt;
        std::vector<std::string> args(toks.begin() + 1, toks.end());
        if (!args.empty() && args[0].size() > 1 && args[0][0] == '@') {
            per.target = args[0].substr(1);
            args.erase(args.begin());
        }
        auto res = send_command(*iface, head, args, per, exchange);
        out << res.rendered;
        if (res.rendered.empty() || res.rendered.back() != '\n') out << "\n";
    }
    return kOk;  // EOF ends the session cleanly
}

}  // namespace opcli
