#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lpf/clock.hpp"
#include "lpf/errors.hpp"
#include "lpf/module.hpp"

namespace lpf {

class Lpf;

// ------------------------------------------------------------ definitions

struct StateDef {
    std::string impl;                                // state-implementation name
    std::string on_entry;                            // method invoked on entering
    std::string on_exit;                             // method invoked on leaving
    std::map<std::string, std::string> transitions;  // transition name -> method
    std::optional<int> timeout_s;                    // absent: no dwell alarm

    bool operator==(const StateDef&) const = default;
};

/// Parsed FSM description: pure bindings, no logic. States keep their file
/// order for pretty-printing; equality is structural.
struct FsmDefinition {
    std::string name;
    std::string begin;
    std::vector<std::pair<std::string, StateDef>> states;

    const StateDef* state(const std::string& state_name) const;
    bool structurally_equal(const FsmDefinition& other) const;
};

class FsmParseError : public LpfError {
public:
    FsmParseError(int line, const std::string& what)
        : LpfError(Errc::SyntaxError, "line " + std::to_string(line) + ": " + what),
          line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

/// Parse the description language: one clause per line, `#` comments.
/// Clause forms: FSM:, begin:, state:..isA:, state:..onTransition:..do:,
/// state:..onEntry:, state:..onExit:, state:..timeout:.
FsmDefinition parse_fsm(const std::string& text);

std::string pretty_print(const FsmDefinition& def);

// ------------------------------------------------------- state implementations

class FsmContext;

struct MethodResult {
    std::string next_state;       // transition methods must name the next state
    std::string auto_transition;  // entry hooks may chain an immediate step
    std::vector<Message> out;     // messages to emit from this hook
};

/// Base for state implementations: methods are looked up by the name bound
/// in the definition.
class StateImpl {
public:
    virtual ~StateImpl() = default;

    bool has_method(const std::string& method) const { return methods_.count(method) > 0; }
    MethodResult invoke(const std::string& method, FsmContext& ctx);

protected:
    using Fn = std::function<MethodResult(FsmContext&)>;
    void bind(const std::string& method, Fn fn) { methods_[method] = std::move(fn); }

private:
    std::map<std::string, Fn> methods_;
};

class StateRegistry {
public:
    using Factory = std::function<std::unique_ptr<StateImpl>()>;

    void add(const std::string& impl_name, Factory f) { factories_[impl_name] = std::move(f); }
    bool has(const std::string& impl_name) const { return factories_.count(impl_name) > 0; }
    std::unique_ptr<StateImpl> make(const std::string& impl_name) const;

    /// Process-wide registry used by fsm-host modules; farm state packs
    /// install themselves here at startup.
    static StateRegistry& global();

private:
    std::map<std::string, Factory> factories_;
};

/// Everything a state method may touch during one hook invocation.
class FsmContext {
public:
    Lpf* lpf = nullptr;  // null in engine-only tests
    Kv* run_config = nullptr;
    Kv* scratch = nullptr;          // shared between states of one instance
    const Kv* payload = nullptr;    // triggering message body (may be null)
    std::string fsm_name;
    std::string state_name;
    std::string transition;
};

/// Returns all problems, not just the first: unknown implementations,
/// undefined begin state, undefined static transition targets (resolved
/// dynamically at run time, so only declared names are checkable),
/// non-positive timeouts.
std::vector<std::string> validate_fsm(const FsmDefinition& def, const StateRegistry& registry);

// ---------------------------------------------------------------- instance

enum class FsmStatus { Ready, Running, Finished, Faulted };
const char* fsm_status_name(FsmStatus s);

struct FsmTraceRec {
    std::string kind;  // entry | exit | action
    std::string state;
    std::string transition;  // action records only
    std::string method;
    int64_t wall_ms = 0;
};

/// A running instantiation: fresh state objects, its own trace and timeout
/// clock. No memory is shared with previous instances of the same
/// definition.
class FsmInstance {
public:
    enum class UndefinedPolicy { Fault, Ignore };

    struct StepOutcome {
        bool ok = false;
        std::string error;
        std::vector<Message> out;
    };

    /// Throws LpfError{ValidationRequired} if the definition does not
    /// validate against the registry.
    FsmInstance(FsmDefinition def, const StateRegistry& registry, Kv run_config);

    /// The implicit start transition: enters begin (on_entry honored).
    StepOutcome start(Lpf* lpf, Millis now, int64_t wall_ms);

    StepOutcome step(const std::string& transition, const Kv& payload, Lpf* lpf, Millis now,
                     int64_t wall_ms);

    /// One WARNING per overdue state entry, not per check.
    std::optional<std::string> check_timeout(Millis now);

    const std::string& current_state() const { return current_; }
    FsmStatus status() const { return status_; }
    Millis entered_at() const { return entered_at_; }
    Millis dwell(Millis now) const { return now - entered_at_; }
    const std::vector<FsmTraceRec>& trace() const { return trace_; }
    std::vector<std::string> normalized_trace() const;
    const FsmDefinition& definition() const { return def_; }
    Kv& run_config() { return run_config_; }
    Kv& scratch() { return scratch_; }
    void set_undefined_policy(UndefinedPolicy p) { undefined_policy_ = p; }

private:
    StepOutcome run_step(const std::string& transition, const Kv* payload, Lpf* lpf, Millis now,
                         int64_t wall_ms, bool starting);
    MethodResult invoke_hook(const std::string& state, const std::string& method,
                             const std::string& transition, const Kv* payload, Lpf* lpf,
                             StepOutcome& outcome);
    void enter(const std::string& state, Millis now);
    void finish_check();

    FsmDefinition def_;
    Kv run_config_;
    Kv scratch_;
    std::map<std::string, std::unique_ptr<StateImpl>> impls_;  // per state name
    std::string current_;
    Millis entered_at_{0};
    bool timeout_fired_ = false;
    FsmStatus status_ = FsmStatus::Ready;
    std::vector<FsmTraceRec> trace_;
    UndefinedPolicy undefined_policy_ = UndefinedPolicy::Fault;
};

// -------------------------------------------------------------- host module

/// Plugs an FSM into an LPF: loads definitions (FsmLoad), instantiates and
/// starts fresh instances (FsmStart), feeds transitions from messages
/// (FsmTransition, or any verb matching a transition of the current state)
/// and surfaces state via FsmQuery. Per-state timeouts alarm through the
/// hosting LPF; a __timeout__ transition, when defined, is fired as well.
class FsmHostModule : public Module {
public:
    void init(Lpf& lpf, const Kv& config) override;
    std::vector<Message> do_message(Lpf& lpf, const Message& m) override;
    std::vector<Message> run(Lpf& lpf) override;

    FsmInstance* instance() { return instance_.get(); }
    const std::optional<FsmDefinition>& definition() const { return definition_; }

protected:
    /// Drive one transition and collect emitted messages; alarms on faults.
    std::vector<Message> host_step(Lpf& lpf, const std::string& transition, const Kv& payload);
    std::vector<Message> host_start(Lpf& lpf, Kv run_config);
    virtual const StateRegistry& registry() const { return StateRegistry::global(); }
    /// Messages no host rule matched; subclasses may consume them.
    virtual std::vector<Message> on_unmatched(Lpf&, const Message&) { return {}; }

    std::string name_;
    std::optional<FsmDefinition> definition_;
    std::unique_ptr<FsmInstance> instance_;
    FsmInstance::UndefinedPolicy policy_ = FsmInstance::UndefinedPolicy::Fault;
};

}  // namespace lpf
