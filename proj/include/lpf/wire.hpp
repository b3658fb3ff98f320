#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "lpf/message.hpp"

namespace lpf {

/// Inter-LPF wire protocol: 4-byte big-endian payload length, then a UTF-8
/// JSON document carrying the message fields by name
/// (id, correlation_id, source, destination, verb, body, hop_count).
/// This framing is the protocol contract and must stay bit-exact.
inline constexpr size_t kMaxFramePayload = 1u << 20;  // 1 MiB

/// JSON payload text for one message. Field order is fixed (alphabetical),
/// so the encoding is deterministic.
std::string encode_payload(const Message& m);

/// One complete frame. Throws LpfError{OversizeMessage} above the 1 MiB cap.
std::vector<uint8_t> encode_message(const Message& m);

/// Parse one payload. Returns false and fills err on malformed input.
bool decode_payload(std::string_view text, Message& out, std::string* err);

struct StreamDecode {
    std::vector<Message> messages;  // complete, well-formed frames in order
    size_t consumed = 0;            // bytes consumed; remainder starts here
    int malformed = 0;              // complete but undecodable frames skipped
    bool poisoned = false;          // length prefix over the cap: cannot resync
};

/// Extract every complete frame from the buffer. A partial trailing frame is
/// left unconsumed. A frame whose payload fails to parse is counted malformed
/// and skipped without disturbing later frames; an oversize length prefix
/// poisons the stream (no resync possible).
StreamDecode decode_stream(const uint8_t* data, size_t len);

/// Per-connection accumulator around decode_stream.
class FrameReader {
public:
    /// Appends raw bytes, returns messages completed by this chunk.
    std::vector<Message> feed(const uint8_t* data, size_t n);

    int malformed_total() const { return malformed_; }
    bool poisoned() const { return poisoned_; }
    size_t buffered() const { return buf_.size(); }

private:
    std::vector<uint8_t> buf_;
    int malformed_ = 0;
    bool poisoned_ = false;
};

}  // namespace lpf
