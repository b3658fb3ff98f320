#include <thread>

#include "lpf/fsm.hpp"
#include "lpf/lpf.hpp"
#include "lpf/naming.hpp"

namespace lpf {

namespace {

/// Test/debug service: answers every verb with <verb>Answer echoing the body.
class EchoModule final : public Module {
public:
    std::vector<Message> do_message(Lpf&, const Message& m) override {
        Kv body = m.body;
        body["echo_verb"] = m.verb;
        return {m.answer(m.verb + "Answer", std::move(body))};
    }
};

/// Diagnostic module that wedges its LPF on purpose (simulates a stuck node
/// during activation drills).
class SleeperModule final : public Module {
public:
    void init(Lpf&, const Kv& config) override {
        int64_t secs = kv_get_int(config, "init_sleep_s", 0);
        if (secs > 0) std::this_thread::sleep_for(std::chrono::seconds(secs));
    }
};

}  // namespace

void register_core_factories(Lpf& lpf) {
    lpf.register_factory("ns-replica", ModuleKind::Passive,
                         [] { return std::make_unique<NsReplicaModule>(); });
    lpf.register_factory("ns-broker", ModuleKind::Active,
                         [] { return std::make_unique<NsBrokerModule>(); });
    lpf.register_factory("fsm-host", ModuleKind::Active,
                         [] { return std::make_unique<FsmHostModule>(); });
    lpf.register_factory("echo", ModuleKind::Passive,
                         [] { return std::make_unique<EchoModule>(); });
    lpf.register_factory("sleeper", ModuleKind::Passive,
                         [] { return std::make_unique<SleeperModule>(); });
}

}  // namespace lpf
