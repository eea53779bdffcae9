#include "tracead/metrics.hpp"

#include "tracead/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <tuple>

namespace tracead {

namespace {

bool key_less(const LabeledSpan& a, const LabeledSpan& b)
{
    return std::tie(a.app, a.rank, a.span_id) < std::tie(b.app, b.rank, b.span_id);
}

bool key_equal(const LabeledSpan& a, const LabeledSpan& b)
{
    return a.app == b.app && a.rank == b.rank && a.span_id == b.span_id;
}

std::vector<const LabeledSpan*> sorted_view(const std::vector<LabeledSpan>& v)
{
    std::vector<const LabeledSpan*> out;
    out.reserve(v.size());
    for (const auto& l : v) {
        out.push_back(&l);
    }
    std::sort(out.begin(), out.end(), [](const LabeledSpan* a, const LabeledSpan* b) { return key_less(*a, *b); });
    return out;
}

} // namespace

LabelAgreement label_agreement(const std::vector<LabeledSpan>& oracle, const std::vector<LabeledSpan>& candidate)
{
    if (oracle.size() != candidate.size()) {
        throw UniverseMismatch("label sets differ in size: " + std::to_string(oracle.size()) + " vs "
            + std::to_string(candidate.size()));
    }
    const auto a = sorted_view(oracle);
    const auto b = sorted_view(candidate);
    LabelAgreement out;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!key_equal(*a[i], *b[i])) {
            throw UniverseMismatch("span app " + std::to_string(a[i]->app) + " rank " + std::to_string(a[i]->rank)
                + " id " + std::to_string(a[i]->span_id) + " is not in both label sets");
        }
        if (i > 0 && key_equal(*a[i], *a[i - 1])) {
            throw UniverseMismatch("duplicate span id " + std::to_string(a[i]->span_id));
        }
        if (a[i]->label == Label::Unlabeled || b[i]->label == Label::Unlabeled) {
            ++out.excluded;
            continue;
        }
        ++out.compared;
        out.agreeing += a[i]->label == b[i]->label ? 1 : 0;
    }
    if (out.compared > 0) {
        out.accuracy = static_cast<double>(out.agreeing) / static_cast<double>(out.compared);
    }
    return out;
}

double compare_labels(const std::vector<LabeledSpan>& oracle, const std::vector<LabeledSpan>& candidate)
{
    return label_agreement(oracle, candidate).accuracy;
}

double compute_overhead(double t_base, double t_instrumented)
{
    if (!(t_base > 0.0)) {
        throw NonPositiveBase("base time must be positive, got " + std::to_string(t_base));
    }
    return (t_instrumented - t_base) / t_base * 100.0;
}

double reduction_report(std::uint64_t raw_bytes, std::uint64_t provenance_bytes)
{
    if (provenance_bytes == 0) {
        throw DataError("reduction factor needs a non-empty provenance store");
    }
    return static_cast<double>(raw_bytes) / static_cast<double>(provenance_bytes);
}

double replay_seconds(const std::vector<std::string>& sources, const RunOptions& options)
{
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& src : sources) {
        RankPipeline p(TraceReader::open(src, options.reader), options.assembler, options.cfg.flush_interval_us());
        while (p.next_step()) {
        }
    }
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

BenchReport run_bench(const std::vector<std::string>& sources, const RunOptions& options,
    const std::vector<std::uint32_t>& worker_counts)
{
    BenchReport report;
    report.baseline_seconds = replay_seconds(sources, options);

    auto entry_of = [&](const std::string& name, const RunResult& r, const RunResult* oracle) {
        BenchEntry e;
        e.config = name;
        e.wall_seconds = r.wall_seconds;
        e.raw_bytes = r.raw_bytes;
        e.reduced_bytes = r.provenance_bytes;
        e.accuracy = oracle ? compare_labels(oracle->labels, r.labels) : 1.0;
        e.overhead_pct = report.baseline_seconds > 0.0 ? compute_overhead(report.baseline_seconds, r.wall_seconds) : 0.0;
        e.reduction = r.provenance_bytes > 0 ? reduction_report(r.raw_bytes, r.provenance_bytes) : 0.0;
        for (double s : r.step_seconds) {
            e.max_step_seconds = std::max(e.max_step_seconds, s);
        }
        return e;
    };

    RunOptions central = options;
    central.mode = RunMode::Central;
    central.collect_labels = true;
    if (options.out_dir) {
        central.out_dir = *options.out_dir / "central";
    }
    const RunResult oracle = run_offline(sources, central);
    report.entries.push_back(entry_of("central", oracle, nullptr));
    for (std::uint32_t w : worker_counts) {
        RunOptions dist = options;
        dist.mode = RunMode::Distributed;
        dist.workers = w;
        dist.collect_labels = true;
        const std::string name = "dist:" + std::to_string(w);
        if (options.out_dir) {
            dist.out_dir = *options.out_dir / ("dist" + std::to_string(w));
        }
        const RunResult r = run_offline(sources, dist);
        report.entries.push_back(entry_of(name, r, &oracle));
    }
    return report;
}

std::string bench_report_json(const BenchReport& report)
{
    nlohmann::json j;
    j["baseline_seconds"] = report.baseline_seconds;
    j["entries"] = nlohmann::json::array();
    for (const auto& e : report.entries) {
        j["entries"].push_back({{"config", e.config}, {"wall_seconds", e.wall_seconds}, {"raw_bytes", e.raw_bytes},
            {"reduced_bytes", e.reduced_bytes}, {"accuracy", e.accuracy}, {"overhead_pct", e.overhead_pct},
            {"reduction", e.reduction}, {"max_step_seconds", e.max_step_seconds}});
    }
    return j.dump(2);
}

} // namespace tracead
