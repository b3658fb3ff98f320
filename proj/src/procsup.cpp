#include "lpf/procsup.hpp"

#include <cerrno>
#include <csignal>
#include <cstring>
#include <fcntl.h>
#include <json.hpp>
#include <sys/wait.h>
#include <unistd.h>

#include "lpf/errors.hpp"
#include "lpf/lpf.hpp"

namespace lpf {

using nlohmann::json;

const char* proc_state_name(ProcState s) {
    switch (s) {
        case ProcState::Starting: return "STARTING";
        case ProcState::Running: return "RUNNING";
        case ProcState::Suspended: return "SUSPENDED";
        case ProcState::Exited: return "EXITED";
        case ProcState::Signaled: return "SIGNALED";
        case ProcState::Lost: return "LOST";
    }
    return "?";
}

namespace {

bool is_terminal(ProcState s) {
    return s == ProcState::Exited || s == ProcState::Signaled || s == ProcState::Lost;
}

void set_cloexec_nonblock(int fd) {
    fcntl(fd, F_SETFD, FD_CLOEXEC);
    int flags = fcntl(fd, F_GETFL, 0);
    fcntl(fd, F_SETFL, flags | O_NONBLOCK);
}

}  // namespace

void ProcessSupervisor::LineBuffer::push_line(std::string line) {
    lines.push_back(std::move(line));
    while (lines.size() > cap) {
        lines.pop_front();
        first_index++;
    }
}

void ProcessSupervisor::LineBuffer::push_bytes(const char* data, size_t n) {
    for (size_t i = 0; i < n; i++) {
        if (data[i] == '\n') {
            push_line(std::move(partial));
            partial.clear();
        } else {
            partial.push_back(data[i]);
        }
    }
}

void ProcessSupervisor::LineBuffer::finish() {
    if (!partial.empty()) {
        push_line(std::move(partial));
        partial.clear();
    }
}

ProcessSupervisor::~ProcessSupervisor() {
    // last-resort cleanup so no zombies outlive the supervisor
    for (auto& [id, p] : procs_) {
        if (p.pid > 0 && !p.reaped) {
            ::kill(p.pid, SIGKILL);
            int st = 0;
            waitpid(p.pid, &st, 0);
        }
        if (p.out_fd >= 0) close(p.out_fd);
        if (p.err_fd >= 0) close(p.err_fd);
        if (p.status_fd >= 0) close(p.status_fd);
    }
}

void ProcessSupervisor::init(Lpf&, const Kv&) {}

void ProcessSupervisor::kill(Lpf&) {
    for (auto& [id, p] : procs_) {
        if (p.pid > 0 && !p.reaped) {
            ::kill(p.pid, SIGKILL);
            int st = 0;
            waitpid(p.pid, &st, 0);
            p.reaped = true;
        }
        if (p.out_fd >= 0) close(p.out_fd);
        if (p.err_fd >= 0) close(p.err_fd);
        if (p.status_fd >= 0) close(p.status_fd);
        p.out_fd = p.err_fd = p.status_fd = -1;
    }
}

std::string ProcessSupervisor::start(Lpf& lpf, const std::vector<std::string>& argv,
                                     const Kv& env, ProcessLimits limits, Address notify) {
    if (argv.empty() || argv[0].empty())
        throw LpfError(Errc::ExecFailure, "empty command");

    Proc p;
    p.handle_id = "proc-" + std::to_string(++seq_);
    p.argv = argv;
    p.max_runtime_s = limits.max_runtime_s;
    p.out_buf.cap = static_cast<size_t>(limits.max_output_lines);
    p.err_buf.cap = static_cast<size_t>(limits.max_output_lines);
    p.started_at = lpf.clock().now();
    p.notify = notify;

    int out_pipe[2], err_pipe[2], status_pipe[2];
    if (pipe(out_pipe) != 0 || pipe(err_pipe) != 0 || pipe(status_pipe) != 0)
        throw LpfError(Errc::ExecFailure, std::string("pipe: ") + std::strerror(errno));

    pid_t pid = fork();
    if (pid < 0) {
        for (int fd : {out_pipe[0], out_pipe[1], err_pipe[0], err_pipe[1], status_pipe[0],
                       status_pipe[1]})
            close(fd);
        throw LpfError(Errc::ExecFailure, std::string("fork: ") + std::strerror(errno));
    }
    if (pid == 0) {
        // child
        dup2(out_pipe[1], STDOUT_FILENO);
        dup2(err_pipe[1], STDERR_FILENO);
        close(out_pipe[0]);
        close(out_pipe[1]);
        close(err_pipe[0]);
        close(err_pipe[1]);
        close(status_pipe[0]);
        fcntl(status_pipe[1], F_SETFD, FD_CLOEXEC);

        std::vector<char*> cargv;
        for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
        cargv.push_back(nullptr);
        for (const auto& [k, v] : env) setenv(k.c_str(), v.c_str(), 1);
        execvp(cargv[0], cargv.data());
        int e = errno;  // exec failed: report through the CLOEXEC pipe
        ssize_t ignored = write(status_pipe[1], &e, sizeof(e));
        (void)ignored;
        _exit(127);
    }

    close(out_pipe[1]);
    close(err_pipe[1]);
    close(status_pipe[1]);
    set_cloexec_nonblock(out_pipe[0]);
    set_cloexec_nonblock(err_pipe[0]);
    set_cloexec_nonblock(status_pipe[0]);
    p.pid = pid;
    p.out_fd = out_pipe[0];
    p.err_fd = err_pipe[0];
    p.status_fd = status_pipe[0];
    p.state = ProcState::Starting;
    std::string id = p.handle_id;
    procs_.emplace(id, std::move(p));
    return id;
}

const ProcessSupervisor::Proc* ProcessSupervisor::find(const std::string& handle_id) const {
    auto it = procs_.find(handle_id);
    return it == procs_.end() ? nullptr : &it->second;
}

ProcessSupervisor::Proc* ProcessSupervisor::find(const std::string& handle_id) {
    auto it = procs_.find(handle_id);
    return it == procs_.end() ? nullptr : &it->second;
}

ProcStatus ProcessSupervisor::query(Lpf& lpf, const std::string& handle_id) const {
    const Proc* p = find(handle_id);
    if (p == nullptr) throw LpfError(Errc::UnknownHandle, handle_id);
    ProcStatus s;
    s.handle_id = p->handle_id;
    s.pid = p->pid;
    s.state = p->state;
    s.exit_code = p->exit_code;
    Millis end = is_terminal(p->state) ? p->ended_at : lpf.clock().now();
    s.runtime_ms = (end - p->started_at).count();
    s.stdout_lines = p->out_buf.total();
    s.stderr_lines = p->err_buf.total();
    s.cause = p->cause;
    return s;
}

FetchResult ProcessSupervisor::fetch(Lpf&, const std::string& handle_id, ProcChannel ch,
                                     size_t from_line) const {
    const Proc* p = find(handle_id);
    if (p == nullptr) throw LpfError(Errc::UnknownHandle, handle_id);
    const LineBuffer& buf = ch == ProcChannel::Stdout ? p->out_buf : p->err_buf;
    FetchResult r;
    size_t begin = from_line;
    if (begin < buf.first_index) {
        r.dropped_before = buf.first_index - begin;
        r.lines.push_back("[... " + std::to_string(r.dropped_before) + " lines dropped ...]");
        begin = buf.first_index;
    }
    for (size_t i = begin; i < buf.total(); i++) r.lines.push_back(buf.lines[i - buf.first_index]);
    r.next_line = buf.total();
    return r;
}

void ProcessSupervisor::signal(Lpf&, const std::string& handle_id, ProcSignal sig) {
    Proc* p = find(handle_id);
    if (p == nullptr) throw LpfError(Errc::UnknownHandle, handle_id);
    bool live = p->state == ProcState::Running || p->state == ProcState::Suspended ||
                p->state == ProcState::Starting;
    if (!live)
        throw LpfError(Errc::InvalidTransition,
                       handle_id + " is " + proc_state_name(p->state));
    switch (sig) {
        case ProcSignal::Kill: ::kill(p->pid, SIGKILL); break;
        case ProcSignal::Suspend: ::kill(p->pid, SIGSTOP); break;
        case ProcSignal::Continue:
            if (p->state != ProcState::Suspended)
                throw LpfError(Errc::InvalidTransition, handle_id + " is not suspended");
            ::kill(p->pid, SIGCONT);
            break;
    }
}

void ProcessSupervisor::drain(Proc& p) {
    char buf[8192];
    while (p.out_fd >= 0) {
        ssize_t r = read(p.out_fd, buf, sizeof(buf));
        if (r > 0) {
            p.out_buf.push_bytes(buf, static_cast<size_t>(r));
            continue;
        }
        if (r == 0) {
            close(p.out_fd);
            p.out_fd = -1;
            p.out_eof = true;
            p.out_buf.finish();
        }
        break;
    }
    while (p.err_fd >= 0) {
        ssize_t r = read(p.err_fd, buf, sizeof(buf));
        if (r > 0) {
            p.err_buf.push_bytes(buf, static_cast<size_t>(r));
            continue;
        }
        if (r == 0) {
            close(p.err_fd);
            p.err_fd = -1;
            p.err_eof = true;
            p.err_buf.finish();
        }
        break;
    }
}

void ProcessSupervisor::transition(Lpf& lpf, Proc& p, ProcState to,
                                   std::vector<ProcTransition>& out) {
    if (p.state == to) return;
    p.state = to;
    if (is_terminal(to)) p.ended_at = lpf.clock().now();
    ProcTransition t{p.handle_id, to, p.exit_code, p.cause};
    out.push_back(t);
}

std::vector<ProcTransition> ProcessSupervisor::poll_children(Lpf& lpf) {
    std::vector<ProcTransition> out;
    for (auto& [id, p] : procs_) {
        if (is_terminal(p.state) && p.out_fd < 0 && p.err_fd < 0) continue;
        drain(p);

        // exec-status pipe: a byte means exec failed in the child
        if (p.status_fd >= 0) {
            int e = 0;
            ssize_t r = read(p.status_fd, &e, sizeof(e));
            if (r > 0) {
                close(p.status_fd);
                p.status_fd = -1;
                p.cause = std::string("exec failed: ") + std::strerror(e);
                int st = 0;
                if (waitpid(p.pid, &st, 0) == p.pid) p.reaped = true;
                drain(p);
                transition(lpf, p, ProcState::Lost, out);
                lpf.raise_alarm(AlarmLevel::Error, "sysproc",
                                p.argv[0] + ": " + p.cause + " (" + id + ")");
                continue;
            }
            if (r == 0) {
                // pipe closed without data: exec succeeded
                close(p.status_fd);
                p.status_fd = -1;
                if (p.state == ProcState::Starting) transition(lpf, p, ProcState::Running, out);
            }
        }

        if (!p.reaped && p.pid > 0) {
            int st = 0;
            pid_t w = waitpid(p.pid, &st, WNOHANG | WUNTRACED | WCONTINUED);
            if (w == p.pid) {
                if (WIFEXITED(st)) {
                    p.reaped = true;
                    p.exit_code = WEXITSTATUS(st);
                    drain(p);
                    if (p.state == ProcState::Starting) p.state = ProcState::Running;
                    transition(lpf, p, ProcState::Exited, out);
                } else if (WIFSIGNALED(st)) {
                    p.reaped = true;
                    if (p.cause.empty())
                        p.cause = std::string("signal ") + std::to_string(WTERMSIG(st));
                    drain(p);
                    transition(lpf, p, ProcState::Signaled, out);
                } else if (WIFSTOPPED(st)) {
                    transition(lpf, p, ProcState::Suspended, out);
                } else if (WIFCONTINUED(st)) {
                    transition(lpf, p, ProcState::Running, out);
                }
            } else if (w < 0 && errno == ECHILD) {
                p.reaped = true;
                p.cause = "child vanished";
                transition(lpf, p, ProcState::Lost, out);
                lpf.raise_alarm(AlarmLevel::Warning, "sysproc", id + ": child vanished");
            }
        }

        // runtime budget
        if (!is_terminal(p.state) && p.max_runtime_s > 0 && p.pid > 0 && !p.reaped) {
            auto elapsed = lpf.clock().now() - p.started_at;
            if (elapsed.count() > int64_t(p.max_runtime_s) * 1000) {
                p.cause = "runtime budget exceeded (" + std::to_string(p.max_runtime_s) + " s)";
                lpf.raise_alarm(AlarmLevel::Warning, "sysproc", id + ": " + p.cause);
                ::kill(p.pid, SIGKILL);
                p.max_runtime_s = 0;  // kill once
            }
        }
    }
    return out;
}

void ProcessSupervisor::collect_fds(std::vector<int>& out) const {
    for (const auto& [id, p] : procs_) {
        if (p.out_fd >= 0) out.push_back(p.out_fd);
        if (p.err_fd >= 0) out.push_back(p.err_fd);
        if (p.status_fd >= 0) out.push_back(p.status_fd);
    }
}

size_t ProcessSupervisor::live_children() const {
    size_t n = 0;
    for (const auto& [id, p] : procs_)
        if (!p.reaped && p.pid > 0 && !is_terminal(p.state)) n++;
    return n;
}

std::vector<Message> ProcessSupervisor::run(Lpf& lpf) {
    std::vector<Message> out;
    for (const auto& t : poll_children(lpf)) {
        Proc* p = find(t.handle_id);
        if (p == nullptr || p->notify.module.empty()) continue;
        Message ev;
        ev.verb = "ProcEvent";
        ev.destination = p->notify;
        ev.body = {{"handle", t.handle_id}, {"state", proc_state_name(t.state)}};
        if (t.exit_code) ev.body["exit_code"] = std::to_string(*t.exit_code);
        if (!t.cause.empty()) ev.body["cause"] = t.cause;
        out.push_back(std::move(ev));
    }
    return out;
}

std::vector<Message> ProcessSupervisor::do_message(Lpf& lpf, const Message& m) {
    if (m.verb == "Start") {
        json argv = json::parse(kv_get(m.body, "argv", "[]"), nullptr, false);
        std::vector<std::string> args;
        if (argv.is_array())
            for (const auto& a : argv)
                if (a.is_string()) args.push_back(a.get<std::string>());
        Kv env;
        json envj = json::parse(kv_get(m.body, "env", "{}"), nullptr, false);
        if (envj.is_object())
            for (auto& [k, v] : envj.items())
                if (v.is_string()) env[k] = v.get<std::string>();
        ProcessLimits limits;
        limits.max_runtime_s = static_cast<int>(kv_get_int(m.body, "max_runtime_s", 0));
        limits.max_output_lines = static_cast<int>(kv_get_int(m.body, "max_output_lines", 10000));
        try {
            Address notify = m.source;
            std::string id = start(lpf, args, env, limits, notify);
            return {m.answer("StartAnswer", {{"ok", "1"}, {"handle", id}})};
        } catch (const LpfError& ex) {
            return {m.answer("StartAnswer", {{"ok", "0"}, {"error", ex.what()}})};
        }
    }
    if (m.verb == "QueryStatus") {
        try {
            ProcStatus s = query(lpf, kv_get(m.body, "handle"));
            Kv body{{"ok", "1"},
                    {"state", proc_state_name(s.state)},
                    {"runtime_ms", std::to_string(s.runtime_ms)},
                    {"stdout_lines", std::to_string(s.stdout_lines)},
                    {"stderr_lines", std::to_string(s.stderr_lines)}};
            if (s.exit_code) body["exit_code"] = std::to_string(*s.exit_code);
            if (!s.cause.empty()) body["cause"] = s.cause;
            return {m.answer("QueryStatusAnswer", std::move(body))};
        } catch (const LpfError& ex) {
            return {m.answer("QueryStatusAnswer", {{"ok", "0"}, {"error", ex.what()}})};
        }
    }
    if (m.verb == "FetchOutput") {
        try {
            ProcChannel ch =
                kv_get(m.body, "channel", "STDOUT") == "STDERR" ? ProcChannel::Stderr
                                                                : ProcChannel::Stdout;
            FetchResult r = fetch(lpf, kv_get(m.body, "handle"),
                                  ch, static_cast<size_t>(kv_get_int(m.body, "from_line", 0)));
            json lines = json::array();
            for (const auto& l : r.lines) lines.push_back(l);
            return {m.answer("FetchOutputAnswer",
                             {{"ok", "1"},
                              {"lines", lines.dump()},
                              {"next_line", std::to_string(r.next_line)},
                              {"dropped", std::to_string(r.dropped_before)}})};
        } catch (const LpfError& ex) {
            return {m.answer("FetchOutputAnswer", {{"ok", "0"}, {"error", ex.what()}})};
        }
    }
    if (m.verb == "Signal") {
        std::string sig = kv_get(m.body, "sig");
        try {
            ProcSignal s = sig == "KILL"      ? ProcSignal::Kill
                           : sig == "SUSPEND" ? ProcSignal::Suspend
                           : sig == "CONTINUE"
                               ? ProcSignal::Continue
                               : throw LpfError(Errc::InvalidTransition, "unknown signal " + sig);
            signal(lpf, kv_get(m.body, "handle"), s);
            return {m.answer("SignalAnswer", {{"ok", "1"}})};
        } catch (const LpfError& ex) {
            return {m.answer("SignalAnswer", {{"ok", "0"}, {"error", ex.what()}})};
        }
    }
    return {};
}

}  // namespace lpf
