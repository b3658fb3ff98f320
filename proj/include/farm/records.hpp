#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "lpf/message.hpp"
#include "lpf/module.hpp"

namespace farm {

/// One processing pass of a run (PC or ER).
struct PassInfo {
    std::string status = "PENDING";  // PENDING | STAGED | PROCESSING | DONE | FAILED
    int64_t events_processed = 0;
    std::string fail_cause;
    lpf::Kv timestamps;  // phase -> unix ms

    bool operator==(const PassInfo&) const = default;
};

/// Bookkeeping entry for one data run: one record per run_id, both passes.
struct RunRecord {
    int64_t run_id = 0;
    std::string xtc_path;
    int64_t events_total = 0;
    bool calibrated = false;
    std::string log_dir;
    PassInfo pc;
    PassInfo er;

    bool operator==(const RunRecord&) const = default;

    PassInfo& pass(const std::string& pass_type) { return pass_type == "ER" ? er : pc; }
    const PassInfo& pass(const std::string& pass_type) const {
        return pass_type == "ER" ? er : pc;
    }

    /// Empty string when the record satisfies its invariants.
    std::string check() const;

    std::string to_json() const;
    static std::optional<RunRecord> from_json(const std::string& text);
};

uint32_t crc32(const void* data, size_t n);

/// Append-only journal plus a current-state snapshot. Every journal line is
/// checksummed; loading stops at the first corrupt line (prior entries are
/// preserved) and the store refuses writes until repaired.
class BookStore {
public:
    explicit BookStore(std::filesystem::path dir);

    /// Returns the number of records loaded, or -1 when the journal is
    /// corrupt (the store flags itself and keeps the valid prefix).
    int load();

    /// Validates and appends. Throws LpfError{StoreCorrupt} when the store
    /// is flagged, LpfError{ValidationError} when the record is inconsistent.
    void put(const RunRecord& rec, int64_t wall_ms);

    std::optional<RunRecord> get(int64_t run_id) const;
    const std::map<int64_t, RunRecord>& catalog() const { return runs_; }
    bool corrupt() const { return corrupt_; }
    std::filesystem::path journal_path() const { return dir_ / "journal.log"; }
    std::filesystem::path snapshot_path() const { return dir_ / "snapshot.json"; }

private:
    void write_snapshot() const;

    std::filesystem::path dir_;
    std::map<int64_t, RunRecord> runs_;
    bool corrupt_ = false;
};

/// Message surface over one shared BookStore. Verbs: BkPut {record},
/// BkGet {run_id}, BkList. The PC and ER farm managers share one instance.
class BookkeeperModule final : public lpf::Module {
public:
    void init(lpf::Lpf& lpf, const lpf::Kv& config) override;
    std::vector<lpf::Message> do_message(lpf::Lpf& lpf, const lpf::Message& m) override;

    BookStore* store() { return store_ ? store_.get() : nullptr; }

private:
    std::unique_ptr<BookStore> store_;
};

}  // namespace farm
