#ifndef TRACEAD_METRICS_HPP
#define TRACEAD_METRICS_HPP

#include "tracead/pipeline.hpp"

#include <string>
#include <vector>

namespace tracead {

struct LabelAgreement {
    std::uint64_t compared = 0; ///< spans NORMAL or ANOMALY in both runs
    std::uint64_t agreeing = 0;
    std::uint64_t excluded = 0; ///< UNLABELED in either run
    double accuracy = 1.0;      ///< agreeing / compared; 1 when nothing is compared
};

/// Per-span binary label agreement. Both runs must cover the same
/// (app, rank, span_id) universe; throws UniverseMismatch otherwise.
LabelAgreement label_agreement(const std::vector<LabeledSpan>& oracle, const std::vector<LabeledSpan>& candidate);
double compare_labels(const std::vector<LabeledSpan>& oracle, const std::vector<LabeledSpan>& candidate);

/// Slowdown of the instrumented run in percent, positive when slower.
/// Throws NonPositiveBase unless t_base > 0.
double compute_overhead(double t_base, double t_instrumented);

/// raw / reduced. Throws DataError unless provenance_bytes > 0.
double reduction_report(std::uint64_t raw_bytes, std::uint64_t provenance_bytes);

struct BenchEntry {
    std::string config;
    double wall_seconds = 0.0;
    std::uint64_t raw_bytes = 0;
    std::uint64_t reduced_bytes = 0;
    double accuracy = 1.0;      ///< vs the CENTRAL run
    double overhead_pct = 0.0;  ///< vs replay without analysis
    double reduction = 0.0;     ///< 0 when nothing was stored
    double max_step_seconds = 0.0;
};

struct BenchReport {
    double baseline_seconds = 0.0;
    std::vector<BenchEntry> entries;
};

/// Time of decoding and assembling every source without analysis.
double replay_seconds(const std::vector<std::string>& sources, const RunOptions& options);

/// Runs CENTRAL then DISTRIBUTED(W) for each W; out_dir (when set in
/// options) receives one subdirectory per configuration.
BenchReport run_bench(const std::vector<std::string>& sources, const RunOptions& options,
    const std::vector<std::uint32_t>& worker_counts);

std::string bench_report_json(const BenchReport& report);

} // namespace tracead

#endif
