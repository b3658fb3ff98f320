#pragma once

#include <cstdint>
#include <string>

#include "lpf/module.hpp"

namespace farm {

/// Event distributor for one run: reads a synthetic XTC and hands out
/// contiguous event ranges, one chunk per LmFetch, over the standard wire
/// protocol. The run processing machine starts one per run and kills it at
/// the end.
class LmModule final : public lpf::Module {
public:
    void init(lpf::Lpf& lpf, const lpf::Kv& config) override;
    std::vector<lpf::Message> do_message(lpf::Lpf& lpf, const lpf::Message& m) override;

private:
    int64_t run_id_ = 0;
    int64_t events_total_ = 0;
    int64_t next_first_ = 0;
    int64_t chunk_ = 0;
};

}  // namespace farm
