#ifndef TRACEAD_PIPELINE_HPP
#define TRACEAD_PIPELINE_HPP

#include "tracead/ad_engine.hpp"
#include "tracead/net.hpp"
#include "tracead/span_assembler.hpp"
#include "tracead/trace_stream.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace tracead {

namespace fs = std::filesystem;

struct StepBatch {
    StepWindow window;
    std::vector<ExecSpan> spans; ///< completed inside the window, in completion order
};

/// Reader + assembler for one trace source, cut into flush-interval steps.
///
/// Step s covers [s*F, (s+1)*F) of trace time; a span belongs to the step in
/// which its EXIT was read. Steps are returned contiguously from 0, empty
/// ones included. Spans still open at end of input are counted, not labeled.
class RankPipeline {
public:
    RankPipeline(TraceReader reader, AssemblerOptions assembler, Micros flush_us);

    /// The next step, or nullopt once the input is exhausted. An input
    /// without events yields no steps.
    std::optional<StepBatch> next_step();

    bool done() const noexcept { return done_; }
    const TraceReader& reader() const noexcept { return reader_; }
    const std::set<RankKey>& ranks() const noexcept { return ranks_; }
    std::uint64_t incomplete_spans() const noexcept { return incomplete_; }
    std::uint64_t mismatches() const noexcept { return assembler_.mismatches(); }
    std::string function_name(FuncId fid) const;

private:
    TraceReader reader_;
    SpanAssembler assembler_;
    Micros flush_us_;
    StepId step_ = 0;
    std::optional<TraceEvent> pending_;
    std::set<RankKey> ranks_;
    bool started_ = false;
    bool done_ = false;
    std::uint64_t incomplete_ = 0;
};

/// Per-span result row of a run.
struct LabeledSpan {
    std::uint32_t app = 0;
    std::uint32_t rank = 0;
    SpanId span_id = 0;
    std::uint32_t thread = 0;
    FuncId func_id = 0;
    std::optional<SpanId> parent_span;
    StepId step = 0;
    Micros entry_us = 0;
    Micros inclusive_us = 0;
    Micros exclusive_us = 0;
    Label label = Label::Unlabeled;
};

enum class RunMode { Central, Distributed };

struct RunOptions {
    ADConfig cfg;
    RunMode mode = RunMode::Central;
    std::uint32_t workers = 1;
    ReaderOptions reader;
    AssemblerOptions assembler;
    /// labels.jsonl, reports.jsonl, summary.json and prov/ are written here.
    std::optional<fs::path> out_dir;
    bool collect_labels = true;
    /// Use this parameter server instead of an in-process one.
    std::optional<net::Endpoint> param_server;
    /// Viz gateway receiving pushes from the in-process parameter server.
    std::optional<net::Endpoint> viz;
    double push_interval_s = 1.0;
    std::string run_id; ///< empty: the first source's META run id, else "run"
    /// Called by a worker before each of its steps (fault-injection harnesses).
    std::function<void(std::uint32_t worker, StepId step)> before_step;
};

struct RunResult {
    std::vector<LabeledSpan> labels;          ///< ordered by (app, rank, span_id)
    std::vector<AnomalyStepReport> reports;   ///< ordered by (app, rank, step)
    std::uint64_t raw_bytes = 0;
    std::uint64_t provenance_bytes = 0;
    std::uint64_t records_written = 0;
    std::uint64_t spans_stored = 0;
    std::uint64_t spans = 0;
    std::uint64_t anomalies = 0;
    std::uint64_t incomplete_spans = 0;
    std::uint64_t mismatches = 0;
    std::uint64_t dropped_out_of_order = 0;
    std::uint64_t skipped_malformed = 0;
    std::uint64_t unsent_updates = 0;
    std::vector<double> step_seconds;   ///< processing time of each (rank, step)
    std::vector<double> worker_seconds; ///< wall time until each worker finished
    double wall_seconds = 0.0;
};

/// Trace files in dir (*.trace), sorted by name.
std::vector<std::string> trace_sources(const fs::path& dir);

/// CENTRAL: one engine over every rank's spans, exact statistics.
/// DISTRIBUTED: workers threads, sources assigned round-robin, each rank
/// labeled against its local statistics merged with everyone else's from the
/// parameter server. Both modes write the same output formats.
RunResult run_offline(const std::vector<std::string>& sources, const RunOptions& options);

} // namespace tracead

#endif
