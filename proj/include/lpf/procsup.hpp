#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lpf/clock.hpp"
#include "lpf/module.hpp"

namespace lpf {

class Lpf;

enum class ProcState { Starting, Running, Suspended, Exited, Signaled, Lost };
const char* proc_state_name(ProcState s);

enum class ProcSignal { Kill, Suspend, Continue };
enum class ProcChannel { Stdout, Stderr };

struct ProcessLimits {
    int max_runtime_s = 0;  // 0: unlimited
    int max_output_lines = 10000;
};

struct ProcStatus {
    std::string handle_id;
    int64_t pid = 0;
    ProcState state = ProcState::Starting;
    std::optional<int> exit_code;
    int64_t runtime_ms = 0;
    size_t stdout_lines = 0;
    size_t stderr_lines = 0;
    std::string cause;  // failure detail (exec error, runtime budget, ...)
};

struct FetchResult {
    std::vector<std::string> lines;
    size_t next_line = 0;       // absolute index to resume from
    size_t dropped_before = 0;  // lines lost to the buffer cap before next_line
};

struct ProcTransition {
    std::string handle_id;
    ProcState state;
    std::optional<int> exit_code;
    std::string cause;
};

/// Runs external executables without ever blocking the hosting loop: fork
/// and exec with captured output, per-iteration non-blocking reaping, signal
/// control and runtime budgets. One supervisor per LPF, loaded as an
/// internal active module ("sysproc"); also usable directly as an API.
///
/// Message surface: Start, QueryStatus, FetchOutput, Signal; every state
/// change is reported to the starting module as a ProcEvent.
class ProcessSupervisor final : public Module {
public:
    ~ProcessSupervisor() override;

    void init(Lpf& lpf, const Kv& config) override;
    std::vector<Message> do_message(Lpf& lpf, const Message& m) override;
    std::vector<Message> run(Lpf& lpf) override;
    void kill(Lpf& lpf) override;

    /// Launch; never throws for exec problems (handle lands in Lost with a
    /// cause). Throws only for empty argv.
    std::string start(Lpf& lpf, const std::vector<std::string>& argv, const Kv& env,
                      ProcessLimits limits, Address notify = {});

    ProcStatus query(Lpf& lpf, const std::string& handle_id) const;  // throws UnknownHandle
    FetchResult fetch(Lpf& lpf, const std::string& handle_id, ProcChannel ch,
                      size_t from_line) const;
    void signal(Lpf& lpf, const std::string& handle_id, ProcSignal sig);  // throws

    /// Non-blocking sweep: reap exits, drain output, enforce runtime budgets.
    std::vector<ProcTransition> poll_children(Lpf& lpf);

    size_t live_children() const;
    void collect_fds(std::vector<int>& out) const;
    bool handle_known(const std::string& handle_id) const { return procs_.count(handle_id) > 0; }

private:
    struct LineBuffer {
        std::deque<std::string> lines;
        size_t first_index = 0;  // absolute index of lines.front()
        std::string partial;
        size_t cap = 10000;

        void push_bytes(const char* data, size_t n);
        void finish();  // flush a trailing unterminated line
        size_t total() const { return first_index + lines.size(); }

    private:
        void push_line(std::string line);
    };

    struct Proc {
        std::string handle_id;
        std::vector<std::string> argv;
        pid_t pid = -1;
        ProcState state = ProcState::Starting;
        std::optional<int> exit_code;
        std::string cause;
        int out_fd = -1, err_fd = -1, status_fd = -1;
        bool out_eof = false, err_eof = false;
        bool reaped = false;
        LineBuffer out_buf, err_buf;
        Millis started_at{0};
        Millis ended_at{0};
        int max_runtime_s = 0;
        Address notify;
    };

    void transition(Lpf& lpf, Proc& p, ProcState to, std::vector<ProcTransition>& out);
    void drain(Proc& p);
    const Proc* find(const std::string& handle_id) const;
    Proc* find(const std::string& handle_id);

    std::map<std::string, Proc> procs_;
    uint64_t seq_ = 0;
};

}  // namespace lpf
