#pragma once

#include <cstdint>
#include <string>

#include "lpf/module.hpp"

namespace farm {

/// The per-farm driver and the operator's main access point. Watches the
/// shared catalog, stages the next run, and hands eligible runs to the
/// RunProcessing host on the farm server:
///   PC farms process runs strictly in sequence; ER farms take any staged
///   run that has been calibrated.
/// Registered in the upper naming domain by activation; when a lower_domain
/// key is present it registers itself there as well (the broker between the
/// two layers).
///
/// Verbs: StartRun {run_id?, force?}, AbortRun, FarmStatus.
class FarmManagerModule final : public lpf::Module {
public:
    void init(lpf::Lpf& lpf, const lpf::Kv& config) override;
    std::vector<lpf::Message> do_message(lpf::Lpf& lpf, const lpf::Message& m) override;
    std::vector<lpf::Message> run(lpf::Lpf& lpf) override;
    void kill(lpf::Lpf& lpf) override;

private:
    enum class Phase { Idle, Listing, Staging, MarkStaged, MarkProcessing, Running };

    lpf::Message to_bk(lpf::Lpf& lpf, const std::string& verb, lpf::Kv body);
    lpf::Message to_staging(lpf::Lpf& lpf, lpf::Kv body);
    std::vector<lpf::Message> decide(lpf::Lpf& lpf, const std::string& records_json);
    lpf::Message rp_start(lpf::Lpf& lpf, const std::string& record_json);

    std::string name_;
    lpf::Kv cfg_;
    Phase phase_ = Phase::Idle;
    int64_t active_run_ = 0;
    std::string pending_corr_;
    std::string pending_record_;  // record json for the run being started
    int64_t last_poll_ms_ = 0;
    int64_t poll_interval_ms_ = 300;
    bool auto_schedule_ = true;
    bool force_next_ = false;
    int64_t forced_run_ = 0;
    int runs_done_ = 0;
    int runs_failed_ = 0;
    std::string last_outcome_;
    std::string second_domain_;
};

}  // namespace farm
