#pragma once

#include <atomic>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "lpf/alarm.hpp"
#include "lpf/clock.hpp"
#include "lpf/message.hpp"
#include "lpf/module.hpp"
#include "lpf/trace.hpp"

namespace lpf {

class MpxServer;
class NetLink;
class ProcessSupervisor;

enum class Scope { Local, Global };

enum class UndeliverablePolicy { DiscardSilent, DiscardAlarm, ActivateOnDemand };

struct HostPort {
    std::string host;
    int port = 0;
    bool operator==(const HostPort&) const = default;
};

std::optional<HostPort> parse_host_port(const std::string& text);

struct ActivationResult {
    bool is_proxy = false;
    std::string module_name;
};

struct CronEntry {
    std::string schedule_id;
    Millis period{0};
    Millis next_due{0};
    Message tmpl;
};

/// One cooperative event-loop context. Hosts modules, dispatches messages,
/// schedules cron firings and owns the network front-end. Single-threaded:
/// all hooks run from the loop, one at a time. Multiple Lpf instances may
/// coexist in one process (each driven by its own thread or interleaved
/// run_once calls); they share nothing but messages.
class Lpf {
public:
    struct Options {
        std::string name = "lpf";
        std::string host = "127.0.0.1";
        int port = 0;  // 0: no network listener
        std::string service_marker;
        Kv config;  // LpfConfig keys
        std::shared_ptr<Clock> clock;
    };

    explicit Lpf(Options opt);
    ~Lpf();

    Lpf(const Lpf&) = delete;
    Lpf& operator=(const Lpf&) = delete;

    /// Bind the network listener (when port > 0). Throws LpfError{BindFailure}.
    void start();

    // -- module registry ------------------------------------------------
    void register_factory(const std::string& name, ModuleKind kind, ModuleFactory f);
    bool has_factory(const std::string& name) const;

    /// Load a module instance. Init runs exactly once, before any Do/Run.
    /// Throws DuplicateName / InitFailure.
    std::string register_module(const ModuleSpec& spec, std::unique_ptr<Module> impl);

    /// Instantiate from the factory registry. Global scope consults naming:
    /// if the service already runs elsewhere in the domain a transparent
    /// proxy is loaded in its place. instance_name defaults to the factory
    /// name; global services register under the instance name.
    ActivationResult activate_module(const std::string& name, Kv config, Scope scope,
                                     const std::string& instance_name = "");

    void unload_module(const std::string& name);
    Module* find_module(const std::string& name);
    std::vector<std::string> module_names(bool include_internal = false) const;

    // -- messaging ------------------------------------------------------
    /// Stamp (id, source defaults) and enqueue for the next dispatch phase.
    /// Loop-internal; never call from another thread.
    void send(Message m);

    /// Thread-safe external injection: drained into the queue at the start
    /// of the next iteration. The only cross-thread entry point besides
    /// request_stop().
    void post(Message m);

    std::string next_message_id();
    size_t queue_depth() const { return queue_.size(); }

    // -- scheduling -----------------------------------------------------
    std::string schedule_cron(Millis period, Message tmpl);
    bool cancel_cron(const std::string& schedule_id);

    // -- alarms ---------------------------------------------------------
    void raise_alarm(AlarmLevel level, const std::string& origin_module, const std::string& text);
    const std::deque<Alarm>& recent_alarms() const { return alarms_; }
    void clear_alarms() { alarms_.clear(); }
    bool degraded() const { return degraded_; }

    // -- loop -----------------------------------------------------------
    IterationTrace run_once();
    void run();  // loop until request_stop(), then shut down modules
    void request_stop() { stop_.store(true); }
    bool stop_requested() const { return stop_.load(); }
    void shutdown();  // kill modules (reverse order), unregister services

    // -- naming (bounded synchronous client side) ------------------------
    std::optional<HostPort> broker_for(const std::string& domain) const;
    std::string default_domain() const;
    bool ns_register_self(const std::string& domain, const std::string& service,
                          std::string* err = nullptr);
    bool ns_unregister(const std::string& domain, const std::string& service);
    std::optional<HostPort> ns_lookup(const std::string& domain, const std::string& service,
                                      std::string* err = nullptr);

    // -- introspection ----------------------------------------------------
    const Options& options() const { return opt_; }
    Clock& clock() { return *clock_; }
    std::shared_ptr<Clock> clock_ptr() { return clock_; }
    Kv& config() { return opt_.config; }
    std::string config_get(const std::string& key, const std::string& def = "") const;
    int64_t config_get_int(const std::string& key, int64_t def = 0) const;
    Kv status() const;
    const IterationTrace& last_trace() const { return last_trace_; }
    uint64_t iterations() const { return iterations_; }
    HostPort self() const { return {opt_.host, opt_.port}; }

    MpxServer* mpx() { return mpx_; }
    NetLink* netlink() { return netlink_; }
    ProcessSupervisor* supervisor() { return supervisor_; }

    UndeliverablePolicy undeliverable_policy() const { return policy_; }

private:
    struct Entry {
        ModuleSpec spec;
        std::unique_ptr<Module> impl;
        int fault_streak = 0;
    };

    struct FactoryEntry {
        ModuleKind kind;
        ModuleFactory make;
    };

    Entry* find_entry(const std::string& name);
    void stamp_source(Message& m, const std::string& origin_module);
    void dispatch_one(Message m, IterationTrace& tr);
    void deliver_local(Entry& e, const Message& m, IterationTrace& tr);
    bool forward_remote(Message m, IterationTrace& tr);
    void drop(const Message& m, const std::string& cause, bool alarm, IterationTrace& tr);
    /// Runs a hook with fault isolation and the liveness guard. Returns false
    /// if the hook raised (fault already accounted).
    bool guarded(Entry& e, const char* hook, const std::function<void()>& fn);
    void append_log(const Alarm& a);

    Options opt_;
    std::shared_ptr<Clock> clock_;
    std::vector<Entry> modules_;
    std::map<std::string, FactoryEntry> factories_;
    std::deque<Message> queue_;
    std::mutex inbox_mu_;
    std::vector<Message> inbox_;
    std::vector<CronEntry> cron_;
    std::deque<Alarm> alarms_;
    std::vector<std::pair<std::string, std::string>> registered_services_;  // (domain, service)
    IterationTrace last_trace_;
    std::atomic<bool> stop_{false};
    bool degraded_ = false;
    bool in_alarm_forward_ = false;
    bool shut_down_ = false;
    uint64_t iterations_ = 0;
    uint64_t id_seq_ = 0;
    uint64_t cron_seq_ = 0;
    std::string session_;
    Millis started_at_{0};
    UndeliverablePolicy policy_ = UndeliverablePolicy::DiscardAlarm;
    int hook_budget_ms_ = 500;
    int idle_sleep_ms_ = 20;

    MpxServer* mpx_ = nullptr;
    NetLink* netlink_ = nullptr;
    ProcessSupervisor* supervisor_ = nullptr;
};

/// Registers the factories every standard LPF ships with (naming replica and
/// broker, fsm host, echo). Farm-level factories live in the farm library.
void register_core_factories(Lpf& lpf);

}  // namespace lpf
