#include "lpf/mpx.hpp"

#include "lpf/errors.hpp"
#include "lpf/lpf.hpp"
#include "lpf/net.hpp"

namespace lpf {

void MpxServer::init(Lpf& lpf, const Kv& config) {
    port_ = lpf.options().port;
    frames_per_client_ = static_cast<int>(kv_get_int(config, "frames_per_client", 32));
    std::string err;
    listen_fd_ = net::listen_tcp(lpf.options().host, port_, &err);
    if (listen_fd_ < 0)
        throw LpfError(Errc::BindFailure,
                       lpf.options().host + ":" + std::to_string(port_) + ": " + err);
}

void MpxServer::kill(Lpf&) {
    for (auto& [id, slot] : slots_) net::close_fd(slot.fd);
    slots_.clear();
    routes_.clear();
    net::close_fd(listen_fd_);
    listen_fd_ = -1;
}

bool MpxServer::has_route(const std::string& correlation_id) const {
    return routes_.count(correlation_id) > 0;
}

bool MpxServer::route_consumed(const std::string& correlation_id) const {
    return consumed_set_.count(correlation_id) > 0;
}

bool MpxServer::route_answer(Lpf& lpf, const Message& answer) {
    auto rit = routes_.find(answer.correlation_id);
    if (rit == routes_.end()) return false;
    uint64_t slot_id = rit->second;
    routes_.erase(rit);
    consumed_.push_back(answer.correlation_id);
    consumed_set_.insert(answer.correlation_id);
    if (consumed_.size() > 1024) {
        consumed_set_.erase(consumed_.front());
        consumed_.pop_front();
    }
    auto sit = slots_.find(slot_id);
    if (sit == slots_.end()) return false;  // client gone: stale route
    Message out = answer;
    if (out.id.empty()) out.id = lpf.next_message_id();
    auto frame = encode_message(out);
    sit->second.outbuf.insert(sit->second.outbuf.end(), frame.begin(), frame.end());
    flush_slot(sit->second);
    return true;
}

void MpxServer::collect_fds(std::vector<int>& out) const {
    if (listen_fd_ >= 0) out.push_back(listen_fd_);
    for (const auto& [id, slot] : slots_) out.push_back(slot.fd);
}

bool MpxServer::pending_output() const {
    for (const auto& [id, slot] : slots_)
        if (!slot.outbuf.empty()) return true;
    return false;
}

void MpxServer::flush_slot(ClientSlot& slot) {
    while (!slot.outbuf.empty()) {
        long w = net::write_some(slot.fd, slot.outbuf.data(), slot.outbuf.size());
        if (w <= 0) break;
        slot.outbuf.erase(slot.outbuf.begin(), slot.outbuf.begin() + w);
    }
}

void MpxServer::close_slot(Lpf& lpf, uint64_t slot_id, const std::string& why) {
    auto it = slots_.find(slot_id);
    if (it == slots_.end()) return;
    if (!why.empty())
        lpf.raise_alarm(AlarmLevel::Warning, "mpx",
                        "closing client " + std::to_string(slot_id) + ": " + why);
    net::close_fd(it->second.fd);
    slots_.erase(it);
    for (auto rit = routes_.begin(); rit != routes_.end();) {
        if (rit->second == slot_id) rit = routes_.erase(rit);
        else ++rit;
    }
}

std::vector<Message> MpxServer::run(Lpf& lpf) {
    std::vector<Message> collected;
    if (listen_fd_ < 0) return collected;

    for (int i = 0; i < 64; i++) {
        int fd = net::accept_client(listen_fd_);
        if (fd < 0) break;
        ClientSlot slot;
        slot.fd = fd;
        slot.slot_id = next_slot_++;
        slots_.emplace(slot.slot_id, std::move(slot));
    }

    std::vector<uint64_t> to_close;
    for (auto& [slot_id, slot] : slots_) {
        // bounded read per client per poll keeps one flooding client from
        // starving the rest
        int frames = 0;
        bool closed = false;
        while (frames < frames_per_client_) {
            uint8_t buf[16384];
            long r = net::read_some(slot.fd, buf, sizeof(buf));
            if (r == 0) break;
            if (r < 0) {
                closed = true;
                break;
            }
            auto msgs = slot.reader.feed(buf, static_cast<size_t>(r));
            for (auto& m : msgs) {
                if (!m.id.empty()) routes_[m.id] = slot_id;
                collected.push_back(std::move(m));
                frames++;
            }
            if (static_cast<size_t>(r) < sizeof(buf)) break;
        }
        flush_slot(slot);
        if (closed && slot.outbuf.empty()) {
            to_close.push_back(slot_id);
        } else if (slot.reader.poisoned() || slot.reader.malformed_total() >= 3) {
            lpf.raise_alarm(AlarmLevel::Warning, "mpx", "malformed frames from client");
            to_close.push_back(slot_id);
        } else if (slot.closing && slot.outbuf.empty()) {
            to_close.push_back(slot_id);
        }
    }
    for (uint64_t id : to_close) close_slot(lpf, id, "");
    return collected;
}

}  // namespace lpf
