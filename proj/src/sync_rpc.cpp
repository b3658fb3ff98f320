#include "lpf/sync_rpc.hpp"

#include <atomic>
#include <chrono>
#include <random>

#include "lpf/net.hpp"
#include "lpf/wire.hpp"

namespace lpf {

std::string fresh_client_id() {
    static std::atomic<uint64_t> seq{0};
    static const uint64_t nonce = [] {
        std::random_device rd;
        return (static_cast<uint64_t>(rd()) << 32) ^ rd();
    }();
    char buf[64];
    std::snprintf(buf, sizeof(buf), "cli-%08llx-%llu",
                  static_cast<unsigned long long>(nonce & 0xffffffffu),
                  static_cast<unsigned long long>(++seq));
    return buf;
}

RpcResult sync_rpc(const std::string& host, int port, Message query, int timeout_ms) {
    RpcResult res;
    if (query.id.empty()) query.id = fresh_client_id();
    std::string err;
    int fd = net::connect_tcp(host, port, timeout_ms, &err);
    if (fd < 0) {
        res.error = "connect: " + err;
        return res;
    }
    std::vector<uint8_t> frame;
    try {
        frame = encode_message(query);
    } catch (const std::exception& ex) {
        net::close_fd(fd);
        res.error = ex.what();
        return res;
    }
    if (!net::write_all(fd, frame.data(), frame.size(), timeout_ms)) {
        net::close_fd(fd);
        res.error = "send failed";
        return res;
    }
    FrameReader reader;
    auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    while (std::chrono::steady_clock::now() < deadline) {
        auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                        deadline - std::chrono::steady_clock::now())
                        .count();
        if (!net::wait_readable(fd, static_cast<int>(std::max<int64_t>(1, left)))) continue;
        uint8_t buf[16384];
        long r = net::read_some(fd, buf, sizeof(buf));
        if (r < 0) {
            res.error = "peer closed";
            net::close_fd(fd);
            return res;
        }
        if (r == 0) continue;
        for (auto& m : reader.feed(buf, static_cast<size_t>(r))) {
            if (m.correlation_id == query.id) {
                res.ok = true;
                res.answer = std::move(m);
                net::close_fd(fd);
                return res;
            }
        }
        if (reader.poisoned()) break;
    }
    net::close_fd(fd);
    res.error = "timeout waiting for answer to " + query.verb;
    return res;
}

std::vector<Message> sync_collect(const std::string& host, int port, Message query,
                                  int timeout_ms, int quiet_ms, std::string* err) {
    std::vector<Message> answers;
    if (query.id.empty()) query.id = fresh_client_id();
    std::string cerr_text;
    int fd = net::connect_tcp(host, port, timeout_ms, &cerr_text);
    if (fd < 0) {
        if (err) *err = "connect: " + cerr_text;
        return answers;
    }
    std::vector<uint8_t> frame = encode_message(query);
    if (!net::write_all(fd, frame.data(), frame.size(), timeout_ms)) {
        if (err) *err = "send failed";
        net::close_fd(fd);
        return answers;
    }
    FrameReader reader;
    auto hard_deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    auto quiet_deadline = hard_deadline;
    bool got_any = false;
    while (std::chrono::steady_clock::now() < (got_any ? quiet_deadline : hard_deadline)) {
        net::wait_readable(fd, 10);
        uint8_t buf[16384];
        long r = net::read_some(fd, buf, sizeof(buf));
        if (r < 0) break;
        if (r > 0) {
            for (auto& m : reader.feed(buf, static_cast<size_t>(r))) {
                if (m.correlation_id == query.id) {
                    answers.push_back(std::move(m));
                    got_any = true;
                    quiet_deadline = std::chrono::steady_clock::now() +
                                     std::chrono::milliseconds(quiet_ms);
                }
            }
        }
    }
    if (answers.empty() && err) *err = "timeout waiting for answers to " + query.verb;
    net::close_fd(fd);
    return answers;
}

}  // namespace lpf
