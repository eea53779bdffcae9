#ifndef TRACEAD_PROVENANCE_HPP
#define TRACEAD_PROVENANCE_HPP

#include "tracead/ad_engine.hpp"
#include "tracead/exec_span.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace tracead::prov {

namespace fs = std::filesystem;

/// An anomalous call with the calls of the same function around it.
/// The anomaly's ancestry/descendants frames travel with it so the call
/// stack can be drawn without the full trace.
struct ProvenanceRecord {
    std::uint32_t app = 0;
    std::uint32_t rank = 0;
    StepId step_id = 0;
    ExecSpan anomaly;
    std::vector<ExecSpan> context_before;
    std::vector<ExecSpan> context_after;
    std::vector<std::pair<FuncId, std::string>> call_path; // root .. anomaly
    std::map<FuncId, std::string> desc_names;              // functions of the descendant frames

    std::size_t span_count() const noexcept { return 1 + context_before.size() + context_after.size(); }
};

/// Static description of one run.
struct RunEnvironment {
    std::string run_id;
    Micros epoch_us = 0;
    std::vector<std::string> hosts;
    ADConfig config;
    std::map<std::string, std::string> metadata;

    friend bool operator==(const RunEnvironment& a, const RunEnvironment& b)
    {
        return a.run_id == b.run_id && a.epoch_us == b.epoch_us && a.hosts == b.hosts
            && a.config.alpha == b.config.alpha && a.config.k_context == b.config.k_context
            && a.config.n_min == b.config.n_min && a.config.flush_interval_s == b.config.flush_interval_s
            && a.metadata == b.metadata;
    }
};

using NameLookup = std::function<std::string(FuncId)>;
using LabelLookup = std::function<Label(SpanId)>;

/// Builds one record per anomaly from the labeled calls of one (app, rank)
/// step. Context windows are taken per function in entry-time order; context
/// lists hold the non-anomalous calls within k_context positions. Records
/// come out ordered by the anomaly's entry time. Descendant frame labels are
/// resolved with labels when given (unknown ids stay UNLABELED).
std::vector<ProvenanceRecord> build_records(std::span<const ExecSpan> spans, const ADConfig& cfg, StepId step,
    const NameLookup& names, const LabelLookup& labels = {});

std::string encode_record(const ProvenanceRecord& r);
ProvenanceRecord decode_record(std::string_view line);

struct StoreOptions {
    /// Extra attempts after a failed append before raising StorageError.
    int retries = 2;
    bool fsync = false;
};

/// Append-only writer for one (app, rank) store: a record file plus an index
/// of the byte offset where each step's records begin. Files are created on
/// the first non-empty write.
class RankStoreWriter {
public:
    RankStoreWriter(fs::path dir, RankKey key, StoreOptions options = {});

    /// Appends records not already stored (keyed by step and span id) in
    /// entry-time order; returns how many were written. Steps must not go
    /// backwards across calls (DataError), which keeps the index monotone.
    std::size_t write_records(std::span<const ProvenanceRecord> records);

    std::uint64_t bytes_written() const noexcept { return bytes_written_; }
    const fs::path& record_path() const noexcept { return record_path_; }

private:
    void open_existing();
    void append(const fs::path& path, const std::string& data);

    fs::path dir_;
    RankKey key_;
    StoreOptions options_;
    fs::path record_path_;
    fs::path index_path_;
    bool loaded_ = false;
    std::set<std::pair<StepId, SpanId>> written_;
    std::optional<StepId> last_indexed_step_;
    std::uint64_t file_size_ = 0;
    std::uint64_t bytes_written_ = 0;
};

struct QueryFilter {
    std::optional<std::uint32_t> app;
    std::optional<std::uint32_t> rank;
    std::optional<std::pair<StepId, StepId>> steps; ///< inclusive
    std::optional<std::pair<Micros, Micros>> time;  ///< anomaly [entry, exit] must intersect
    std::optional<FuncId> func_id;                  ///< anomaly's function
};

/// Read side of a provenance directory. Readers see every complete record
/// written before the call; a trailing partial line is ignored.
class ProvenanceStore {
public:
    explicit ProvenanceStore(fs::path dir);

    const fs::path& dir() const noexcept { return dir_; }

    /// Records matching every supplied predicate, ordered by entry time.
    std::vector<ProvenanceRecord> query(const QueryFilter& filter) const;

    /// Stores the environment once; throws DuplicateRun on a second write.
    void write_environment(const RunEnvironment& env) const;
    std::optional<RunEnvironment> read_environment(const std::string& run_id) const;

    /// Size of all record and index files.
    std::uint64_t total_bytes() const;
    std::vector<RankKey> ranks() const;

private:
    fs::path dir_;
};

fs::path record_file_name(RankKey key);
fs::path index_file_name(RankKey key);

} // namespace tracead::prov

#endif
