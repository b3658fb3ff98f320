#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "lpf/config.hpp"
#include "lpf/module.hpp"

namespace lpf {

class Lpf;

inline constexpr int kDefaultBarePort = 34500;

/// BareLPF fixed port: config key, then the environment override, then the
/// reserved default.
int bare_port_from(const Kv& config);

struct ActivationOutcome {
    std::string outcome;  // SUCCESS | FAILED | IGNORED_FAILURE | RECOVERED
    int64_t ms = 0;
    std::string cause;
};

/// Per-Lpf outcomes of one activation, keyed by config path. Covers every
/// Lpf node in the activated subtree exactly once.
struct ActivationReport {
    std::string overall;  // SUCCESS | FAILED
    std::map<std::string, ActivationOutcome> lpfs;

    bool success() const { return overall == "SUCCESS"; }
    std::string to_json() const;
    static std::optional<ActivationReport> from_json(const std::string& text);
    std::string render() const;  // human-readable table
};

/// The recursive activation protocol. Loaded on every LPF as module
/// "activation".
///
/// - AnswerRequestConfig {subtree}: apply LpfConfig keys, load the modules,
///   then spawn and configure each child Lpf through its host's BareLPF.
///   Answers ConfigReport once every child reported or timed out.
/// - ActivateTree {tree}: Configuration-Master entry point; the children are
///   every top-level Lpf of the tree, each tagged with its Service.
///
/// Child failures honor the child's on_child_failure key: FAIL propagates,
/// IGNORE records and continues, RECOVER retries once (respawn + reconfigure)
/// then falls back per recover_fallback.
class ActivationService final : public Module {
public:
    void init(Lpf& lpf, const Kv& config) override;
    std::vector<Message> do_message(Lpf& lpf, const Message& m) override;
    std::vector<Message> run(Lpf& lpf) override;

    /// Completed master report, when this service drove an ActivateTree.
    /// Thread-safe; consumes the stored report.
    std::optional<ActivationReport> take_report();
    bool busy() const { return job_ != nullptr; }

private:
    struct Child {
        ConfigNode subtree;
        std::string path;
        std::string spawn_corr;
        std::string config_corr;
        int64_t deadline_ms = 0;
        int64_t t0_ms = 0;
        int64_t retry_at_ms = 0;  // deferred RECOVER respawn
        int attempts = 0;
        bool terminal = false;
        ActivationOutcome outcome;
        std::map<std::string, ActivationOutcome> nested;  // from the child's report
    };

    struct Job {
        Message request;       // original query (empty id when master-local)
        bool master = false;   // ActivateTree entry
        std::string self_path;
        int64_t deadline_ms = 0;
        int64_t t0_ms = 0;
        bool self_failed = false;
        std::string self_cause;
        std::vector<Child> children;
    };

    void start_job(Lpf& lpf, const Message& request, ConfigNode subtree, bool master);
    void spawn_child(Lpf& lpf, Child& c);
    void child_failed(Lpf& lpf, Child& c, const std::string& cause);
    void finish_child(Lpf& lpf, Child& c, const std::string& outcome, const std::string& cause);
    std::optional<Message> maybe_finish(Lpf& lpf);
    Child* by_corr(const std::string& correlation_id, bool spawn_phase);

    std::string name_;
    std::unique_ptr<Job> job_;
    std::mutex report_mu_;
    std::optional<ActivationReport> report_;
};

/// BareLPF side: tracks the LPFs spawned on this host (the local LPF map)
/// and serves SpawnLpf, LpfMapQuery and LocalLpfReaper. Survives
/// deactivation; reaping stops the local LPFs, never the BareLPF itself.
class SpawnerModule final : public Module {
public:
    void init(Lpf& lpf, const Kv& config) override;
    std::vector<Message> do_message(Lpf& lpf, const Message& m) override;
    std::vector<Message> run(Lpf& lpf) override;

private:
    struct Entry {
        std::string lpf_name;
        int port = 0;
        std::string service;
        std::string handle;
        int64_t pid = 0;
        bool ready = false;
    };

    struct Pending {
        Message request;
        std::string lpf_name;
        int port = 0;
        int64_t deadline_ms = 0;
    };

    std::string lpfd_path_;
    int ready_timeout_ms_ = 5000;
    std::map<std::string, Entry> entries_;  // by lpf name
    std::vector<Pending> pending_;
};

}  // namespace lpf
