#ifndef TRACEAD_SYNTH_HPP
#define TRACEAD_SYNTH_HPP

#include "tracead/trace_event.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tracead::synth {

namespace fs = std::filesystem;

struct CallRule {
    FuncId child = 0;
    std::uint32_t repeat = 1;
};

/// One function of the call-tree grammar. A call spends a lognormal self time
/// (median_self_us, sigma_log) spread evenly over the gaps between its
/// children and message events.
struct FunctionSpec {
    FuncId fid = 0;
    std::string name;
    double median_self_us = 100.0;
    double sigma_log = 0.1;
    std::vector<CallRule> children;
    std::uint32_t messages = 0; ///< alternating SEND/RECV per call
    std::optional<double> anomaly_rate; ///< overrides SynthSpec::anomaly_rate
};

enum class AnomalyKind {
    Delay, ///< launch delay before the first child: inclusive time times multiplier
    Short, ///< self time divided by multiplier
};

struct SynthSpec {
    std::uint32_t n_apps = 1;
    std::uint32_t n_ranks = 4;
    std::uint32_t n_threads = 1;
    std::vector<FunctionSpec> functions;
    FuncId root = 0;
    double anomaly_rate = 0.01;
    double multiplier = 15.0;
    AnomalyKind anomaly_kind = AnomalyKind::Delay;
    /// Probability that a message goes to a uniformly drawn other rank
    /// rather than the next rank in a ring.
    double random_partner_rate = 0.5;
    std::uint32_t steps = 6;
    double flush_interval_s = 1.0;
    Micros idle_between_iterations_us = 10;
    std::uint64_t seed = 1;
    std::string run_id = "synth";

    /// Throws InvalidConfig on probabilities outside [0,1], multiplier <= 1,
    /// unknown functions or recursive grammars.
    void validate() const;
    const FunctionSpec& function(FuncId fid) const;
};

/// A two-level grammar: one long driver call per iteration with short
/// children, some of which exchange messages.
SynthSpec default_spec();

/// Ground truth for one injected anomaly. span is the span id the assembler
/// assigns (entry order within the (app, rank)).
struct GroundTruth {
    std::uint32_t app = 0;
    std::uint32_t rank = 0;
    SpanId span = 0;
    FuncId func_id = 0;
    std::uint32_t thread = 0;
    Micros entry_us = 0;

    friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

std::string encode_truth(const GroundTruth& t);
GroundTruth decode_truth(std::string_view line);

struct RankTrace {
    std::uint32_t app = 0;
    std::uint32_t rank = 0;
    std::string text; ///< META header plus one event per line
    std::vector<GroundTruth> truth;
    std::uint64_t spans = 0;
    std::uint64_t events = 0;
};

/// One (app, rank) trace; a pure function of (spec, app, rank).
RankTrace generate_rank(const SynthSpec& spec, std::uint32_t app, std::uint32_t rank);

struct SynthOutput {
    std::vector<fs::path> trace_files;
    fs::path truth_file;
    std::vector<GroundTruth> truth;
    std::uint64_t spans = 0;
    std::uint64_t events = 0;
    std::uint64_t bytes = 0;
};

/// Writes app{A}_rank{R}.trace per rank and truth.jsonl into out_dir.
SynthOutput generate(const SynthSpec& spec, const fs::path& out_dir);

std::vector<GroundTruth> read_truth(const fs::path& file);

fs::path trace_file_name(std::uint32_t app, std::uint32_t rank);

} // namespace tracead::synth

#endif
