#include "farm/lm.hpp"

#include "farm/staging.hpp"
#include "lpf/errors.hpp"
#include "lpf/lpf.hpp"

namespace farm {

void LmModule::init(lpf::Lpf&, const lpf::Kv& config) {
    std::string xtc = lpf::kv_get(config, "xtc");
    auto header = read_xtc_header(xtc);
    if (!header)
        throw lpf::LpfError(lpf::Errc::ValidationError, "cannot read XTC header from " + xtc);
    run_id_ = header->run_id;
    events_total_ = header->events;
    int64_t nodes = std::max<int64_t>(1, lpf::kv_get_int(config, "nodes", 1));
    chunk_ = (events_total_ + nodes - 1) / nodes;
    if (chunk_ <= 0) chunk_ = 1;
}

std::vector<lpf::Message> LmModule::do_message(lpf::Lpf&, const lpf::Message& m) {
    if (m.verb != "LmFetch") return {};
    int64_t first = next_first_;
    int64_t count = std::min(chunk_, events_total_ - first);
    if (count < 0) count = 0;
    next_first_ += count;
    return {m.answer("LmRange", {{"run_id", std::to_string(run_id_)},
                                 {"first", std::to_string(first)},
                                 {"count", std::to_string(count)}})};
}

}  // namespace farm
