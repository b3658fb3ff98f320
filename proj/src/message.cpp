#include "lpf/message.hpp"

#include <cstdlib>
#include <sstream>

namespace lpf {

std::string Address::str() const {
    std::ostringstream os;
    os << domain;
    if (!service.empty()) os << "/" << service;
    if (has_endpoint()) os << "@" << host << ":" << port;
    if (!module.empty()) os << "#" << module;
    return os.str();
}

Address local_module(const std::string& module) {
    Address a;
    a.module = module;
    return a;
}

Address endpoint(const std::string& host, int port, const std::string& module,
                 const std::string& domain) {
    Address a;
    a.domain = domain;
    a.host = host;
    a.port = port;
    a.module = module;
    return a;
}

Address service_addr(const std::string& domain, const std::string& service) {
    Address a;
    a.domain = domain;
    a.service = service;
    a.module = service;
    return a;
}

Message Message::answer(const std::string& answer_verb, Kv answer_body) const {
    Message a;
    a.correlation_id = id;
    a.destination = source;
    a.verb = answer_verb;
    a.body = std::move(answer_body);
    return a;
}

std::string kv_get(const Kv& kv, const std::string& key, const std::string& def) {
    auto it = kv.find(key);
    return it == kv.end() ? def : it->second;
}

int64_t kv_get_int(const Kv& kv, const std::string& key, int64_t def) {
    auto it = kv.find(key);
    if (it == kv.end() || it->second.empty()) return def;
    char* end = nullptr;
    long long v = std::strtoll(it->second.c_str(), &end, 10);
    if (end == it->second.c_str()) return def;
    return static_cast<int64_t>(v);
}

}  // namespace lpf
