#pragma once

#include <iosfwd>
#include <string>

#include "cli/client.hpp"

namespace opcli {

/// Integrated shell: the same command set and renderers as single-shot
/// mode, plus the builtins help, interface <name> and quit. Scriptable via
/// piped input; per-command errors never terminate the session.
int shell_session(std::istream& in, std::ostream& out, CliOptions opt,
                  const std::string& initial_interface = "User",
                  const Exchange& exchange = default_exchange());

}  // namespace opcli
