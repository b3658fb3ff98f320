#pragma once

#include <stdexcept>
#include <string>

namespace lpf {

enum class Errc {
    DuplicateName,
    InitFailure,
    UnknownModule,
    NamingUnavailable,
    InvalidPeriod,
    OversizeMessage,
    MalformedFrame,
    BindFailure,
    RemoteUnreachable,
    UnknownHandle,
    InvalidTransition,
    ExecFailure,
    SyntaxError,
    ValidationError,
    UnknownPath,
    PortInUse,
    SpawnFailure,
    ActivationTimeout,
    ChildFailure,
    ConfigRejected,
    ValidationRequired,
    AllReplicasDown,
    NotFound,
    StoreCorrupt,
    AlreadyStaged,
    StagingAreaFull,
    UnknownCommand,
    BadArgs,
    NoTarget,
    Timeout,
    Internal,
};

const char* errc_name(Errc c);

class LpfError : public std::runtime_error {
public:
    LpfError(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    Errc code() const { return code_; }

private:
    Errc code_;
};

}  // namespace lpf
