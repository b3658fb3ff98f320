#include "lpf/wire.hpp"

#include <json.hpp>

#include "lpf/errors.hpp"

namespace lpf {

using nlohmann::json;

namespace {

json address_to_json(const Address& a) {
    return json{{"domain", a.domain}, {"host", a.host},     {"module", a.module},
                {"port", a.port},     {"service", a.service}};
}

bool address_from_json(const json& j, Address& a) {
    if (!j.is_object()) return false;
    a.domain = j.value("domain", std::string(kLocalDomain));
    a.service = j.value("service", std::string());
    a.host = j.value("host", std::string());
    a.port = j.value("port", 0);
    a.module = j.value("module", std::string());
    return true;
}

}  // namespace

std::string encode_payload(const Message& m) {
    json j;
    j["body"] = m.body;
    j["correlation_id"] = m.correlation_id;
    j["destination"] = address_to_json(m.destination);
    j["hop_count"] = m.hop_count;
    j["id"] = m.id;
    j["source"] = address_to_json(m.source);
    j["verb"] = m.verb;
    // replace any ill-formed UTF-8 so a hostile body cannot break the frame
    return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

std::vector<uint8_t> encode_message(const Message& m) {
    std::string payload = encode_payload(m);
    if (payload.size() > kMaxFramePayload)
        throw LpfError(Errc::OversizeMessage,
                       "payload " + std::to_string(payload.size()) + " bytes exceeds 1 MiB");
    std::vector<uint8_t> frame;
    frame.reserve(payload.size() + 4);
    uint32_t len = static_cast<uint32_t>(payload.size());
    frame.push_back(static_cast<uint8_t>((len >> 24) & 0xff));
    frame.push_back(static_cast<uint8_t>((len >> 16) & 0xff));
    frame.push_back(static_cast<uint8_t>((len >> 8) & 0xff));
    frame.push_back(static_cast<uint8_t>(len & 0xff));
    frame.insert(frame.end(), payload.begin(), payload.end());
    return frame;
}

bool decode_payload(std::string_view text, Message& out, std::string* err) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        if (err) *err = "payload is not a JSON object";
        return false;
    }
    if (!j.contains("verb") || !j["verb"].is_string() || !j.contains("id") ||
        !j["id"].is_string()) {
        if (err) *err = "missing mandatory field id/verb";
        return false;
    }
    Message m;
    m.id = j["id"].get<std::string>();
    m.verb = j["verb"].get<std::string>();
    m.correlation_id = j.value("correlation_id", std::string());
    m.hop_count = j.value("hop_count", 0);
    if (j.contains("source") && !address_from_json(j["source"], m.source)) {
        if (err) *err = "bad source address";
        return false;
    }
    if (j.contains("destination") && !address_from_json(j["destination"], m.destination)) {
        if (err) *err = "bad destination address";
        return false;
    }
    if (j.contains("body")) {
        if (!j["body"].is_object()) {
            if (err) *err = "body is not an object";
            return false;
        }
        for (auto& [k, v] : j["body"].items()) {
            if (!v.is_string()) {
                if (err) *err = "body value for '" + k + "' is not a string";
                return false;
            }
            m.body[k] = v.get<std::string>();
        }
    }
    out = std::move(m);
    return true;
}

StreamDecode decode_stream(const uint8_t* data, size_t len) {
    StreamDecode r;
    size_t pos = 0;
    while (len - pos >= 4) {
        uint32_t plen = (uint32_t(data[pos]) << 24) | (uint32_t(data[pos + 1]) << 16) |
                        (uint32_t(data[pos + 2]) << 8) | uint32_t(data[pos + 3]);
        if (plen > kMaxFramePayload) {
            // unknown real boundary: stop here, the connection must go
            r.malformed++;
            r.poisoned = true;
            r.consumed = pos;
            return r;
        }
        if (len - pos - 4 < plen) break;  // partial frame, wait for more bytes
        std::string_view payload(reinterpret_cast<const char*>(data + pos + 4), plen);
        Message m;
        std::string err;
        if (decode_payload(payload, m, &err)) {
            r.messages.push_back(std::move(m));
        } else {
            r.malformed++;
        }
        pos += 4 + plen;
    }
    r.consumed = pos;
    return r;
}

std::vector<Message> FrameReader::feed(const uint8_t* data, size_t n) {
    if (poisoned_) return {};
    buf_.insert(buf_.end(), data, data + n);
    StreamDecode d = decode_stream(buf_.data(), buf_.size());
    malformed_ += d.malformed;
    poisoned_ = poisoned_ || d.poisoned;
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<long>(d.consumed));
    return std::move(d.messages);
}

const char* errc_name(Errc c) {
    switch (c) {
        case Errc::DuplicateName: return "DuplicateName";
        case Errc::InitFailure: return "InitFailure";
        case Errc::UnknownModule: return "UnknownModule";
        case Errc::NamingUnavailable: return "NamingUnavailable";
        case Errc::InvalidPeriod: return "InvalidPeriod";
        case Errc::OversizeMessage: return "OversizeMessage";
        case Errc::MalformedFrame: return "MalformedFrame";
        case Errc::BindFailure: return "BindFailure";
        case Errc::RemoteUnreachable: return "RemoteUnreachable";
        case Errc::UnknownHandle: return "UnknownHandle";
        case Errc::InvalidTransition: return "InvalidTransition";
        case Errc::ExecFailure: return "ExecFailure";
        case Errc::SyntaxError: return "SyntaxError";
        case Errc::ValidationError: return "ValidationError";
        case Errc::UnknownPath: return "UnknownPath";
        case Errc::PortInUse: return "PortInUse";
        case Errc::SpawnFailure: return "SpawnFailure";
        case Errc::ActivationTimeout: return "ActivationTimeout";
        case Errc::ChildFailure: return "ChildFailure";
        case Errc::ConfigRejected: return "ConfigRejected";
        case Errc::ValidationRequired: return "ValidationRequired";
        case Errc::AllReplicasDown: return "AllReplicasDown";
        case Errc::NotFound: return "NotFound";
        case Errc::StoreCorrupt: return "StoreCorrupt";
        case Errc::AlreadyStaged: return "AlreadyStaged";
        case Errc::StagingAreaFull: return "StagingAreaFull";
        case Errc::UnknownCommand: return "UnknownCommand";
        case Errc::BadArgs: return "BadArgs";
        case Errc::NoTarget: return "NoTarget";
        case Errc::Timeout: return "Timeout";
        case Errc::Internal: return "Internal";
    }
    return "Unknown";
}

}  // namespace lpf
