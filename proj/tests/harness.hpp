#pragma once

// Shared multi-LPF test scaffolding: each LPF runs its loop on its own
// thread and is driven exclusively through messages, mirroring a multi-host
// deployment on localhost.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <csignal>
#include <sys/wait.h>
#include <thread>
#include <unistd.h>
#include <vector>

#include "lpf/lpf.hpp"
#include "lpf/net.hpp"
#include "lpf/sync_rpc.hpp"
#include "lpf/wire.hpp"

namespace harness {

inline constexpr const char* kHost = "127.0.0.1";

class LpfRunner {
public:
    explicit LpfRunner(lpf::Lpf::Options opt) : lpf_(std::make_unique<lpf::Lpf>(std::move(opt))) {
        lpf::register_core_factories(*lpf_);
    }

    ~LpfRunner() { stop(); }

    lpf::Lpf& get() { return *lpf_; }
    int port() const { return lpf_->options().port; }

    void start() {
        lpf_->start();  // bind on the caller's thread so errors surface here
        running_ = true;
        thread_ = std::thread([this] { lpf_->run(); });
    }

    void stop() {
        if (!running_) return;
        lpf_->request_stop();
        thread_.join();
        running_ = false;
    }

    bool running() const { return running_; }

private:
    std::unique_ptr<lpf::Lpf> lpf_;
    std::thread thread_;
    bool running_ = false;
};

inline lpf::Lpf::Options options(const std::string& name, int port, lpf::Kv config = {}) {
    lpf::Lpf::Options opt;
    opt.name = name;
    opt.host = kHost;
    opt.port = port;
    opt.config = std::move(config);
    return opt;
}

inline std::filesystem::path temp_dir(const std::string& tag) {
    auto base = std::filesystem::temp_directory_path() /
                ("farmcs-" + tag + "-" + std::to_string(::getpid()) + "-" +
                 std::to_string(std::chrono::steady_clock::now().time_since_epoch().count() %
                                1000000));
    std::filesystem::create_directories(base);
    return base;
}

/// Poll until pred() or the deadline; returns pred's final value.
inline bool wait_until(const std::function<bool()>& pred, int timeout_ms, int poll_ms = 10) {
    auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    while (std::chrono::steady_clock::now() < deadline) {
        if (pred()) return true;
        std::this_thread::sleep_for(std::chrono::milliseconds(poll_ms));
    }
    return pred();
}

/// Fire one verb at an LPF and wait for its answer.
inline lpf::RpcResult ask(int port, const std::string& module, const std::string& verb,
                          lpf::Kv body = {}, int timeout_ms = 3000) {
    lpf::Message q;
    q.verb = verb;
    q.body = std::move(body);
    q.destination = lpf::endpoint(kHost, port, module);
    return lpf::sync_rpc(kHost, port, std::move(q), timeout_ms);
}

/// Child tool process (barelpf, lpfd, mocks) in its own process group so
/// teardown can reap the whole family.
class ToolProc {
public:
    explicit ToolProc(std::vector<std::string> argv) {
        pid_ = fork();
        if (pid_ == 0) {
            setpgid(0, 0);
            std::vector<char*> cargv;
            for (auto& a : argv) cargv.push_back(a.data());
            cargv.push_back(nullptr);
            execv(cargv[0], cargv.data());
            _exit(127);
        }
    }

    ~ToolProc() { terminate(); }

    void terminate() {
        if (pid_ <= 0) return;
        ::kill(-pid_, SIGKILL);
        int status = 0;
        ::waitpid(pid_, &status, 0);
        pid_ = -1;
    }

    pid_t pid() const { return pid_; }
    bool alive() const {
        if (pid_ <= 0) return false;
        return ::kill(pid_, 0) == 0;
    }

private:
    pid_t pid_ = -1;
};

/// True when something accepts connections at host:port.
inline bool port_listening(int port) {
    std::string err;
    int fd = lpf::net::connect_tcp(kHost, port, 200, &err);
    if (fd < 0) return false;
    lpf::net::close_fd(fd);
    return true;
}

/// One-way message: connect, frame, send, close. For verbs with no answer.
inline bool fire(int port, const std::string& module, const std::string& verb,
                 lpf::Kv body = {}) {
    lpf::Message m;
    m.id = lpf::fresh_client_id();
    m.verb = verb;
    m.body = std::move(body);
    m.destination = lpf::endpoint(kHost, port, module);
    std::string err;
    int fd = lpf::net::connect_tcp(kHost, port, 1000, &err);
    if (fd < 0) return false;
    auto frame = lpf::encode_message(m);
    bool ok = lpf::net::write_all(fd, frame.data(), frame.size(), 1000);
    std::this_thread::sleep_for(std::chrono::milliseconds(50));  // let the server read
    lpf::net::close_fd(fd);
    return ok;
}

/// Message log shared between a test and a module; outlives the module so
/// inspection after LPF shutdown is safe.
struct MsgLog {
    std::mutex mu;
    std::vector<lpf::Message> messages;
    std::atomic<int> count{0};

    void add(const lpf::Message& m) {
        std::lock_guard<std::mutex> lock(mu);
        messages.push_back(m);
        count.fetch_add(1);
    }
    std::vector<lpf::Message> snapshot() {
        std::lock_guard<std::mutex> lock(mu);
        return messages;
    }
};

/// Echoes every message back (verb EchoAnswer) and records what it saw.
class RecordingEcho final : public lpf::Module {
public:
    explicit RecordingEcho(std::shared_ptr<MsgLog> log) : log_(std::move(log)) {}
    std::vector<lpf::Message> do_message(lpf::Lpf&, const lpf::Message& m) override {
        log_->add(m);
        return {m.answer("EchoAnswer", m.body)};
    }

private:
    std::shared_ptr<MsgLog> log_;
};

/// Silently records everything it receives.
class RecordingSink final : public lpf::Module {
public:
    explicit RecordingSink(std::shared_ptr<MsgLog> log) : log_(std::move(log)) {}
    std::vector<lpf::Message> do_message(lpf::Lpf&, const lpf::Message& m) override {
        log_->add(m);
        return {};
    }

private:
    std::shared_ptr<MsgLog> log_;
};

}  // namespace harness
