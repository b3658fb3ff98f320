#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "lpf/module.hpp"
#include "lpf/wire.hpp"

namespace lpf {

class Lpf;

/// Multiplexed server front-end: accepts client connections, collects their
/// frames by cyclic polling, and acts as the virtual proxy answers travel
/// back through. One instance per listening LPF, loaded as an internal
/// active module.
class MpxServer final : public Module {
public:
    struct ClientSlot {
        int fd = -1;
        uint64_t slot_id = 0;
        FrameReader reader;
        std::vector<uint8_t> outbuf;
        bool closing = false;  // removed once outbuf drains
    };

    void init(Lpf& lpf, const Kv& config) override;
    std::vector<Message> run(Lpf& lpf) override;
    void kill(Lpf& lpf) override;
    bool emits_foreign() const override { return true; }

    /// True if an un-consumed reply route exists for this correlation id.
    bool has_route(const std::string& correlation_id) const;

    /// A second answer to an already-consumed route (or one whose client is
    /// gone) is the stale-route path: dropped with a WARNING.
    bool route_consumed(const std::string& correlation_id) const;

    /// Queue the answer frame to the originating client; consumes the route.
    bool route_answer(Lpf& lpf, const Message& answer);

    size_t client_count() const { return slots_.size(); }
    void collect_fds(std::vector<int>& out) const;
    bool pending_output() const;
    int listen_port() const { return port_; }

private:
    void close_slot(Lpf& lpf, uint64_t slot_id, const std::string& why);
    void flush_slot(ClientSlot& slot);

    int listen_fd_ = -1;
    int port_ = 0;
    uint64_t next_slot_ = 1;
    int frames_per_client_ = 32;  // fairness bound per poll
    std::map<uint64_t, ClientSlot> slots_;
    std::map<std::string, uint64_t> routes_;  // message id -> slot
    std::deque<std::string> consumed_;        // recently consumed route ids
    std::set<std::string> consumed_set_;
};

}  // namespace lpf
