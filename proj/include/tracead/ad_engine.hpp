#ifndef TRACEAD_AD_ENGINE_HPP
#define TRACEAD_AD_ENGINE_HPP

#include "tracead/exec_span.hpp"
#include "tracead/run_stats.hpp"

#include <map>
#include <span>
#include <vector>

namespace tracead {

enum class RuntimeMetric { Inclusive, Exclusive };

struct ADConfig {
    double alpha = 6.0;
    std::uint32_t k_context = 5;
    /// Spans stay UNLABELED until the function has this many samples.
    std::uint64_t n_min = 10;
    double flush_interval_s = 1.0;
    RuntimeMetric metric = RuntimeMetric::Inclusive;

    /// Throws InvalidConfig unless alpha > 0 and flush_interval_s > 0.
    void validate() const;
    Micros flush_interval_us() const;
};

using StatsMap = std::map<FuncId, RunStats>;

struct StepWindow {
    StepId step_id = 0;
    Micros t_begin_us = 0;
    Micros t_end_us = 0;
};

struct AnomalyStepReport {
    std::uint32_t app = 0;
    std::uint32_t rank = 0;
    StepId step_id = 0;
    Micros t_begin_us = 0;
    Micros t_end_us = 0;
    std::uint64_t n_anomalies = 0;
    std::uint64_t n_spans = 0;
    /// Local statistics after the step, for the functions seen in it.
    StatsMap per_function;

    RankKey rank_key() const noexcept { return {app, rank}; }
};

double span_runtime(const ExecSpan& s, RuntimeMetric metric) noexcept;

/// sigma-rule: ANOMALY iff n >= n_min and runtime lies strictly outside
/// mean +- alpha * sigma; UNLABELED while n < n_min; NORMAL otherwise.
Label label_span(double runtime_us, const RunStats& s, const ADConfig& cfg) noexcept;

/// Adds each span's runtime to stats[func_id], in order.
void accumulate(std::span<const ExecSpan> spans, StatsMap& stats, RuntimeMetric metric);

/// Statistics used to label one function: local merged with the others'
/// contribution when present.
RunStats labeling_view(FuncId fid, const StatsMap& local, const StatsMap* others);

/// Labels spans in place; returns the number of anomalies.
std::size_t label_spans(std::span<ExecSpan> spans, const StatsMap& local, const StatsMap* others,
    const ADConfig& cfg);

struct StepResult {
    std::vector<ExecSpan> spans;
    AnomalyStepReport report;
};

/// One flush interval for one (app, rank): update local with every span's
/// runtime, then label against local merged with global_others (statistics
/// of everyone else, excluding this worker's own contribution).
StepResult process_step(std::vector<ExecSpan> spans, StatsMap& local, const StatsMap* global_others,
    const ADConfig& cfg, RankKey rank, const StepWindow& window);

/// Data reduction over the labeled calls of one function, ordered by entry
/// time: indices of every anomaly and of up to k_context calls on either
/// side of it, deduplicated and ascending. Empty when there is no anomaly.
std::vector<std::size_t> select_context_indices(std::span<const Label> labels, std::uint32_t k_context);
std::vector<ExecSpan> select_context(std::span<const ExecSpan> spans, const ADConfig& cfg);

/// Indices of spans grouped by function, each group ordered by entry time.
std::map<FuncId, std::vector<std::size_t>> group_by_function(std::span<const ExecSpan> spans);

} // namespace tracead

#endif
