#include <doctest.h>

#include <random>
#include <string>

#include "lpf/errors.hpp"
#include "lpf/wire.hpp"

using namespace lpf;

namespace {

std::mt19937_64 rng(20240817);

std::string random_text(size_t max_len) {
    static const std::string pool =
        "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 _-./:{}[]\"'\\\n\t";
    std::uniform_int_distribution<size_t> len(0, max_len);
    std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
    std::string s;
    size_t n = len(rng);
    for (size_t i = 0; i < n; i++) s.push_back(pool[pick(rng)]);
    // sprinkle some multi-byte UTF-8
    if (n > 0 && n % 3 == 0) s += "\xc3\xa9\xe2\x82\xac";  // é€
    return s;
}

Message random_message() {
    Message m;
    m.id = "id-" + std::to_string(rng());
    if (rng() % 2) m.correlation_id = "corr-" + std::to_string(rng());
    m.verb = "Verb" + std::to_string(rng() % 1000);
    m.hop_count = static_cast<int>(rng() % 17);
    m.source = endpoint("10.0.0." + std::to_string(rng() % 256),
                        static_cast<int>(1 + rng() % 65535), random_text(8), "domA");
    m.destination.domain = "domB";
    m.destination.service = random_text(12);
    m.destination.module = random_text(12);
    std::uniform_int_distribution<int> nkeys(0, 12);
    int n = nkeys(rng);
    for (int i = 0; i < n; i++) m.body["k" + std::to_string(i)] = random_text(64);
    return m;
}

}  // namespace

TEST_CASE("minimal message round-trips") {
    Message m;
    m.id = "a-1";
    m.verb = "Ping";
    auto frame = encode_message(m);
    auto d = decode_stream(frame.data(), frame.size());
    REQUIRE(d.messages.size() == 1);
    CHECK(d.messages[0] == m);
    CHECK(d.consumed == frame.size());
    CHECK(d.malformed == 0);
}

TEST_CASE("randomized round-trip equality") {
    for (int i = 0; i < 1000; i++) {
        Message m = random_message();
        auto frame = encode_message(m);
        auto d = decode_stream(frame.data(), frame.size());
        REQUIRE(d.messages.size() == 1);
        CHECK(d.messages[0] == m);
    }
}

TEST_CASE("non-ascii body keys survive") {
    Message m;
    m.id = "x";
    m.verb = "T";
    m.body["note"] = "caffè 10€ Traun\xc3\x9f";
    m.body["π"] = "3.14159";
    auto frame = encode_message(m);
    auto d = decode_stream(frame.data(), frame.size());
    REQUIRE(d.messages.size() == 1);
    CHECK(d.messages[0] == m);
}

TEST_CASE("oversize payload rejected") {
    Message m;
    m.id = "big";
    m.verb = "Blob";
    m.body["blob"] = std::string(2u << 20, 'x');  // 2 MiB
    CHECK_THROWS_AS((void)encode_message(m), LpfError);
}

TEST_CASE("two frames plus stray bytes") {
    Message a, b;
    a.id = "a";
    a.verb = "A";
    b.id = "b";
    b.verb = "B";
    auto fa = encode_message(a);
    auto fb = encode_message(b);
    std::vector<uint8_t> buf;
    buf.insert(buf.end(), fa.begin(), fa.end());
    buf.insert(buf.end(), fb.begin(), fb.end());
    buf.push_back(0x00);
    buf.push_back(0x00);
    buf.push_back(0x01);  // 3 stray bytes: a partial length prefix
    auto d = decode_stream(buf.data(), buf.size());
    REQUIRE(d.messages.size() == 2);
    CHECK(d.messages[0].verb == "A");
    CHECK(d.messages[1].verb == "B");
    CHECK(buf.size() - d.consumed == 3);
}

TEST_CASE("empty buffer") {
    auto d = decode_stream(nullptr, 0);
    CHECK(d.messages.empty());
    CHECK(d.consumed == 0);
}

TEST_CASE("length prefix beyond buffer leaves whole buffer as remainder") {
    Message a;
    a.id = "a";
    a.verb = "A";
    auto fa = encode_message(a);
    // keep only a prefix: header plus half the payload
    std::vector<uint8_t> partial(fa.begin(), fa.begin() + 4 + (fa.size() - 4) / 2);
    auto d = decode_stream(partial.data(), partial.size());
    CHECK(d.messages.empty());
    CHECK(d.consumed == 0);
}

TEST_CASE("malformed frame skipped without losing later frames") {
    std::string junk = "this is not json";
    std::vector<uint8_t> buf;
    buf.push_back(0);
    buf.push_back(0);
    buf.push_back(0);
    buf.push_back(static_cast<uint8_t>(junk.size()));
    buf.insert(buf.end(), junk.begin(), junk.end());
    Message b;
    b.id = "b";
    b.verb = "B";
    auto fb = encode_message(b);
    buf.insert(buf.end(), fb.begin(), fb.end());
    auto d = decode_stream(buf.data(), buf.size());
    REQUIRE(d.messages.size() == 1);
    CHECK(d.messages[0].verb == "B");
    CHECK(d.malformed == 1);
}

TEST_CASE("oversize length prefix poisons the stream") {
    std::vector<uint8_t> buf{0xff, 0xff, 0xff, 0xff, 'x'};
    auto d = decode_stream(buf.data(), buf.size());
    CHECK(d.poisoned);
    CHECK(d.malformed == 1);
    CHECK(d.messages.empty());
}

TEST_CASE("frame reader accumulates across chunks") {
    Message m = random_message();
    auto frame = encode_message(m);
    FrameReader reader;
    std::vector<Message> got;
    for (size_t i = 0; i < frame.size(); i += 3) {
        size_t n = std::min<size_t>(3, frame.size() - i);
        for (auto& msg : reader.feed(frame.data() + i, n)) got.push_back(msg);
    }
    REQUIRE(got.size() == 1);
    CHECK(got[0] == m);
}
