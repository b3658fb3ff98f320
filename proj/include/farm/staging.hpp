#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "lpf/module.hpp"

namespace farm {

/// Synthetic XTC format: `XTC run=<id> events=<N>` then N lines
/// `EVT <seq> <payload-hex>`. The payload is a deterministic function of
/// (run_id, seq), so a staged file can be regenerated bit-identically.
std::string xtc_event_payload(int64_t run_id, int64_t seq);
std::filesystem::path write_xtc(const std::filesystem::path& staging_area, int64_t run_id,
                                int64_t events_total);

struct XtcHeader {
    int64_t run_id = 0;
    int64_t events = 0;
};
/// Parses the header line; nullopt when the file is missing or malformed.
std::optional<XtcHeader> read_xtc_header(const std::filesystem::path& xtc_path);

/// Staging service: materializes the per-run XTC into the staging area.
/// Verb StageRun {run_id, events_total}; errors AlreadyStaged and
/// StagingAreaFull (configurable quota_files).
class StagingModule final : public lpf::Module {
public:
    void init(lpf::Lpf& lpf, const lpf::Kv& config) override;
    std::vector<lpf::Message> do_message(lpf::Lpf& lpf, const lpf::Message& m) override;

    /// Direct API; returns the staged path. Throws AlreadyStaged /
    /// StagingAreaFull.
    std::filesystem::path stage(int64_t run_id, int64_t events_total);

private:
    std::filesystem::path area_;
    int quota_files_ = 0;  // 0: unlimited
};

}  // namespace farm
