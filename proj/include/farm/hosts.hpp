#pragma once

#include <vector>

#include "lpf/fsm.hpp"

namespace farm {

/// Installs the np.* and rp.* state implementations (idempotent).
void register_farm_states(lpf::StateRegistry& registry);
void register_np_states(lpf::StateRegistry& registry);
void register_rp_states(lpf::StateRegistry& registry);

/// Node-side FSM host ("np"): runs the NodeProcessing machine for one node's
/// share of a run. Started by RunProcessing with verb NpStart carrying the
/// node's run-time configuration.
class NpHostModule final : public lpf::FsmHostModule {
public:
    void init(lpf::Lpf& lpf, const lpf::Kv& config) override;
    std::vector<lpf::Message> do_message(lpf::Lpf& lpf, const lpf::Message& m) override;
};

/// Server-side FSM host ("rp"): one RunProcessing instance per run, created
/// fresh on RpStart (no memory of previous runs). Adds two pieces of host
/// glue the states rely on:
///  - a non-blocking port probe (states request it through scratch keys) so
///    the machine can wait for the event distributor to accept connections;
///  - the node barrier: NodeResult messages are tallied here and turned into
///    allDone / nodeFailed transitions.
class RpHostModule final : public lpf::FsmHostModule {
public:
    void init(lpf::Lpf& lpf, const lpf::Kv& config) override;
    std::vector<lpf::Message> do_message(lpf::Lpf& lpf, const lpf::Message& m) override;
    std::vector<lpf::Message> run(lpf::Lpf& lpf) override;

protected:
    std::vector<lpf::Message> on_unmatched(lpf::Lpf& lpf, const lpf::Message& m) override;

private:
    std::vector<lpf::Kv> results_;
    int expected_nodes_ = 0;
    int failed_nodes_ = 0;
};

}  // namespace farm
