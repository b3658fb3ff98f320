#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lpf/message.hpp"

namespace lpf {

class Lpf;

enum class ModuleKind { Active, Passive };

struct ModuleSpec {
    std::string name;
    ModuleKind kind = ModuleKind::Passive;
    Kv config;
    bool internal = false;  // core plumbing; traced as POLL instead of RUN
};

/// The framework-instantiable unit. Hooks are only ever called from the
/// owning LPF's loop, never concurrently.
class Module {
public:
    virtual ~Module() = default;

    /// Invoked exactly once after registration, before any Do/Run.
    virtual void init(Lpf&, const Kv& /*config*/) {}

    /// Handle one message; returned messages are enqueued for dispatch.
    virtual std::vector<Message> do_message(Lpf&, const Message&) { return {}; }

    /// Called once per loop iteration for active modules only.
    virtual std::vector<Message> run(Lpf&) { return {}; }

    /// Clean removal from the system.
    virtual void kill(Lpf&) {}

    /// True for wire-facing modules whose run() yields messages that
    /// originated elsewhere; their source addressing is never restamped.
    virtual bool emits_foreign() const { return false; }
};

using ModuleFactory = std::function<std::unique_ptr<Module>()>;

}  // namespace lpf
