#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lpf/module.hpp"
#include "lpf/wire.hpp"

namespace lpf {

class Lpf;

/// Outbound connection cache between LPFs. Connections open lazily on first
/// send and are reused; answers arriving on them are fed back into the loop.
class NetLink final : public Module {
public:
    void init(Lpf& lpf, const Kv& config) override;
    std::vector<Message> run(Lpf& lpf) override;
    void kill(Lpf& lpf) override;
    bool emits_foreign() const override { return true; }

    /// Stamp the forwarding hop and queue one frame to (host, port).
    /// Fails fast when the peer cannot be connected or its buffer is full.
    bool send_remote(Lpf& lpf, Message m, std::string* err = nullptr);

    bool has_link(const std::string& host, int port) const;
    void collect_fds(std::vector<int>& out) const;
    void drop_link(const std::string& host, int port);
    bool pending_output() const;

private:
    struct Link {
        int fd = -1;
        FrameReader reader;
        std::vector<uint8_t> outbuf;
    };

    Link* ensure_link(Lpf& lpf, const std::string& host, int port, std::string* err);
    static std::string key(const std::string& host, int port);

    std::map<std::string, Link> links_;
    size_t outbuf_cap_ = 4u << 20;
    int connect_timeout_ms_ = 1000;
};

/// Transparent stand-in for a remote service: presents the module interface
/// so callers cannot tell it from the local implementation. Forwards to the
/// resolved location; on delivery failure re-resolves once via naming (the
/// service may have moved) before reporting the peer unreachable.
class ProxyModule final : public Module {
public:
    ProxyModule(std::string service, std::string domain, std::string host, int port)
        : service_(std::move(service)), domain_(std::move(domain)), host_(std::move(host)),
          port_(port) {}

    std::vector<Message> do_message(Lpf& lpf, const Message& m) override;

    std::string resolved_host() const { return host_; }
    int resolved_port() const { return port_; }

private:
    std::string service_;
    std::string domain_;
    std::string host_;
    int port_;
};

}  // namespace lpf
