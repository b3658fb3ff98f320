#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lpf/message.hpp"

namespace opcli {

/// One operator command: positional argument schema plus the verb message it
/// prepares. Target resolution is handled by the client layer according to
/// the command's rule.
struct Command {
    std::string name;
    std::string help;
    std::vector<std::string> args;           // required positionals
    std::vector<std::string> optional_args;  // optional positionals
    std::string default_module;              // destination module when resolved
    /// "explicit": needs --target (or embeds its own endpoint args)
    /// "service":  resolve default_module via naming (--broker/--domain)
    /// "bare":     per-host BareLPF fan-out (--hosts)
    /// "local":    handled entirely client-side
    std::string target_rule = "explicit";
    /// Builds the message body from the positional args.
    std::function<lpf::Kv(const std::vector<std::string>&)> body;
    std::string verb;
};

/// A swappable set of commands; interfaces can be changed at run time in the
/// command executable and the shell.
class CommandInterface {
public:
    std::string name;
    std::map<std::string, Command> commands;

    const Command* find(const std::string& command) const {
        auto it = commands.find(command);
        return it == commands.end() ? nullptr : &it->second;
    }
    std::vector<std::string> command_names() const {
        std::vector<std::string> out;
        for (const auto& [n, c] : commands) out.push_back(n);
        return out;
    }
    std::string usage(const std::string& command) const;
    std::string render_help() const;
};

/// The highest level commands.
CommandInterface make_user_interface();
/// Farm administration: activation, reaping, staging.
CommandInterface make_farm_interface();
/// Raw access to any module of any LPF.
CommandInterface make_debug_interface();

std::vector<std::string> interface_names();
std::optional<CommandInterface> make_interface(const std::string& name);

}  // namespace opcli
