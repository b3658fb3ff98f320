#include "lpf/netlink.hpp"

#include "lpf/lpf.hpp"
#include "lpf/net.hpp"

namespace lpf {

std::string NetLink::key(const std::string& host, int port) {
    return host + ":" + std::to_string(port);
}

void NetLink::init(Lpf&, const Kv& config) {
    outbuf_cap_ = static_cast<size_t>(kv_get_int(config, "outbuf_cap", 4 << 20));
    connect_timeout_ms_ = static_cast<int>(kv_get_int(config, "connect_timeout_ms", 1000));
}

void NetLink::kill(Lpf&) {
    for (auto& [k, link] : links_) net::close_fd(link.fd);
    links_.clear();
}

bool NetLink::has_link(const std::string& host, int port) const {
    return links_.count(key(host, port)) > 0;
}

void NetLink::drop_link(const std::string& host, int port) {
    auto it = links_.find(key(host, port));
    if (it == links_.end()) return;
    net::close_fd(it->second.fd);
    links_.erase(it);
}

NetLink::Link* NetLink::ensure_link(Lpf&, const std::string& host, int port, std::string* err) {
    auto k = key(host, port);
    auto it = links_.find(k);
    if (it != links_.end()) return &it->second;
    int fd = net::connect_tcp(host, port, connect_timeout_ms_, err);
    if (fd < 0) return nullptr;
    Link link;
    link.fd = fd;
    auto [nit, ok] = links_.emplace(k, std::move(link));
    return &nit->second;
}

bool NetLink::send_remote(Lpf& lpf, Message m, std::string* err) {
    if (!m.destination.has_endpoint()) {
        if (err) *err = "destination has no endpoint";
        return false;
    }
    m.hop_count += 1;  // one forwarding step
    if (m.id.empty()) m.id = lpf.next_message_id();
    if (m.source.host.empty() && lpf.options().port > 0) {
        m.source.host = lpf.options().host;
        m.source.port = lpf.options().port;
    }
    std::string cerr_text;
    Link* link = ensure_link(lpf, m.destination.host, m.destination.port, &cerr_text);
    if (link == nullptr) {
        if (err) *err = "connect " + key(m.destination.host, m.destination.port) + ": " + cerr_text;
        return false;
    }
    auto frame = encode_message(m);
    if (link->outbuf.size() + frame.size() > outbuf_cap_) {
        if (err) *err = "outbound buffer full for " + key(m.destination.host, m.destination.port);
        return false;
    }
    link->outbuf.insert(link->outbuf.end(), frame.begin(), frame.end());
    while (!link->outbuf.empty()) {
        long w = net::write_some(link->fd, link->outbuf.data(), link->outbuf.size());
        if (w < 0) {
            drop_link(m.destination.host, m.destination.port);
            if (err) *err = "peer closed " + key(m.destination.host, m.destination.port);
            return false;
        }
        if (w == 0) break;  // flushed later from run()
        link->outbuf.erase(link->outbuf.begin(), link->outbuf.begin() + w);
    }
    return true;
}

std::vector<Message> NetLink::run(Lpf& lpf) {
    std::vector<Message> inbound;
    std::vector<std::string> dead;
    for (auto& [k, link] : links_) {
        while (true) {
            uint8_t buf[16384];
            long r = net::read_some(link.fd, buf, sizeof(buf));
            if (r == 0) break;
            if (r < 0) {
                if (!link.outbuf.empty())
                    lpf.raise_alarm(AlarmLevel::Error, "netlink",
                                    "link " + k + " closed with " +
                                        std::to_string(link.outbuf.size()) + " bytes pending");
                dead.push_back(k);
                break;
            }
            auto msgs = link.reader.feed(buf, static_cast<size_t>(r));
            for (auto& m : msgs) inbound.push_back(std::move(m));
            if (static_cast<size_t>(r) < sizeof(buf)) break;
        }
        if (!link.outbuf.empty()) {
            long w = net::write_some(link.fd, link.outbuf.data(), link.outbuf.size());
            if (w > 0) link.outbuf.erase(link.outbuf.begin(), link.outbuf.begin() + w);
            else if (w < 0) dead.push_back(k);
        }
    }
    for (const auto& k : dead) {
        auto it = links_.find(k);
        if (it != links_.end()) {
            net::close_fd(it->second.fd);
            links_.erase(it);
        }
    }
    return inbound;
}

void NetLink::collect_fds(std::vector<int>& out) const {
    for (const auto& [k, link] : links_) out.push_back(link.fd);
}

bool NetLink::pending_output() const {
    for (const auto& [k, link] : links_)
        if (!link.outbuf.empty()) return true;
    return false;
}

std::vector<Message> ProxyModule::do_message(Lpf& lpf, const Message& m) {
    Message fwd = m;
    fwd.destination.domain = domain_;
    fwd.destination.service = service_;
    fwd.destination.module = service_;
    fwd.destination.host = host_;
    fwd.destination.port = port_;

    std::string err;
    if (lpf.netlink()->send_remote(lpf, fwd, &err)) return {};

    // the service may have moved: re-resolve once and retry
    std::string lerr;
    auto loc = lpf.ns_lookup(domain_, service_, &lerr);
    if (loc && !(loc->host == host_ && loc->port == port_)) {
        host_ = loc->host;
        port_ = loc->port;
        fwd.destination.host = host_;
        fwd.destination.port = port_;
        if (lpf.netlink()->send_remote(lpf, fwd, &err)) return {};
    }
    lpf.raise_alarm(AlarmLevel::Error, service_,
                    "remote unreachable via proxy (" + host_ + ":" + std::to_string(port_) +
                        "): " + err);
    return {};
}

}  // namespace lpf
