// Acceptance run: one PASS/FAIL line per primary criterion, exit status 1 if any fails.

#include "support.hpp"

#include "tracead/metrics.hpp"
#include "tracead/param_server.hpp"
#include "tracead/pipeline.hpp"
#include "tracead/span_assembler.hpp"
#include "tracead/synth.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

using namespace tracead;
using testing::TempDir;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned tolerances and bounds.
constexpr double kStatsRelTol = 1e-9;
constexpr double kMergeSeconds = 10.0;
constexpr double kAgreementMin = 0.95;
constexpr double kAgreementSeconds = 300.0;
constexpr double kRecallMin = 0.99;
constexpr double kReductionMax = 0.1;
constexpr double kStepSecondsMax = 0.5;
constexpr double kStallSeconds = 10.0;
constexpr double kOverheadExpect = 16.67;
constexpr double kOverheadTol = 0.01;
constexpr std::uint64_t kSpansPerRankMin = 10000;

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail)
{
    std::cout << (ok ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
    failures += ok ? 0 : 1;
}

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<std::string> as_strings(const std::vector<fs::path>& v)
{
    std::vector<std::string> out;
    for (const auto& p : v) {
        out.push_back(p.string());
    }
    return out;
}

/// Batch-oracle comparison with relative tolerance; zero-variance oracles
/// require an exactly zero m2.
bool strict_match(const RunStats& s, const testing::Oracle& o, double tol, double& worst)
{
    if (s.n() != o.n || s.min() != o.min || s.max() != o.max) {
        worst = 1.0;
        return false;
    }
    const double e_mean = testing::rel_err(s.mean(), o.mean, 1e-300L);
    const double e_m2 = o.m2 == 0 ? (s.m2() == 0 ? 0.0 : 1.0) : testing::rel_err(s.m2(), o.m2);
    worst = std::max({worst, e_mean, e_m2});
    return e_mean <= tol && e_m2 <= tol;
}

std::vector<double> random_list(std::mt19937_64& rng, int kind)
{
    const auto n = static_cast<std::size_t>(std::exp(std::uniform_real_distribution<double>(0, std::log(1e5))(rng)));
    std::vector<double> xs(std::max<std::size_t>(n, 1));
    switch (kind) {
    case 0: {
        std::normal_distribution<double> d(std::uniform_real_distribution<double>(-1e3, 1e3)(rng), 10.0);
        for (auto& x : xs) {
            x = d(rng);
        }
        break;
    }
    case 1: {
        const double c = std::uniform_real_distribution<double>(-1e6, 1e6)(rng);
        std::fill(xs.begin(), xs.end(), c);
        break;
    }
    default: {
        std::normal_distribution<double> d(1e9, 1.0);
        for (auto& x : xs) {
            x = d(rng);
        }
        break;
    }
    }
    return xs;
}

void check_stats_oracles()
{
    std::mt19937_64 rng(20250101);
    const auto t0 = Clock::now();
    bool merge_ok = true;
    bool stream_ok = true;
    double merge_worst = 0;
    double stream_worst = 0;
    double stream_seconds = 0;
    std::size_t kinds[3] = {};
    constexpr int trials = 1000;
    for (int trial = 0; trial < trials; ++trial) {
        const int kind = trial % 3;
        ++kinds[kind];
        const auto xs = random_list(rng, kind);
        const auto oracle = testing::oracle_of(xs);

        const std::size_t parts = 1 + rng() % std::min<std::size_t>(64, xs.size());
        std::vector<std::size_t> cuts{0, xs.size()};
        while (cuts.size() < parts + 1) {
            cuts.push_back(rng() % (xs.size() + 1));
        }
        std::sort(cuts.begin(), cuts.end());
        std::vector<RunStats> pieces;
        for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
            pieces.push_back(stats_of(std::span<const double>(xs.data() + cuts[i], cuts[i + 1] - cuts[i])));
        }
        std::shuffle(pieces.begin(), pieces.end(), rng);
        RunStats folded;
        for (const auto& p : pieces) {
            folded = merge_stats(folded, p);
        }
        merge_ok = strict_match(folded, oracle, kStatsRelTol, merge_worst) && merge_ok;

        const auto ts = Clock::now();
        RunStats streamed;
        for (double x : xs) {
            streamed = update_stats(streamed, x);
        }
        stream_seconds += seconds_since(ts);
        stream_ok = strict_match(streamed, oracle, kStatsRelTol, stream_worst) && stream_ok;
    }
    const double merge_seconds = seconds_since(t0) - stream_seconds;
    report(merge_ok && merge_seconds < kMergeSeconds, "merge-oracle equivalence",
        fmt("%d partitioned lists (%zu random, %zu constant, %zu offset 1e9), worst rel err %.3g <= %.0e, %.2f s < %.0f s",
            trials, kinds[0], kinds[1], kinds[2], merge_worst, kStatsRelTol, merge_seconds, kMergeSeconds));
    report(stream_ok, "streaming-oracle equivalence",
        fmt("same %d lists, worst rel err %.3g <= %.0e", trials, stream_worst, kStatsRelTol));
}

struct Conservation {
    std::uint64_t traces = 0;
    std::uint64_t mismatches = 0;
    std::uint64_t incomplete = 0;
    std::uint64_t unbalanced_threads = 0;
    std::uint64_t threads = 0;
    std::uint64_t min_spans_per_rank = std::numeric_limits<std::uint64_t>::max();
};

void check_conservation(const std::vector<fs::path>& traces, Conservation& c)
{
    for (const auto& path : traces) {
        auto reader = TraceReader::open(path.string(), {});
        SpanAssembler a({MismatchPolicy::Discard, 0});
        std::map<std::uint32_t, Micros> exclusive;
        std::map<std::uint32_t, Micros> roots;
        std::uint64_t spans = 0;
        while (auto e = reader.next()) {
            if (auto s = a.push_event(*e)) {
                ++spans;
                exclusive[s->thread] += s->exclusive_us;
                if (!s->parent_span) {
                    roots[s->thread] += s->inclusive_us;
                }
            }
        }
        ++c.traces;
        c.mismatches += a.mismatches();
        c.incomplete += a.finalize().size();
        c.threads += exclusive.size();
        for (const auto& [t, ex] : exclusive) {
            c.unbalanced_threads += ex != roots[t];
        }
        c.min_spans_per_rank = std::min(c.min_spans_per_rank, spans);
    }
}

using SpanKey = std::tuple<std::uint32_t, std::uint32_t, SpanId>;

struct Detection {
    std::uint64_t injected = 0;
    std::uint64_t detected = 0;
    std::uint64_t negatives = 0;       ///< labeled spans neither injected nor enclosing an injected call
    std::uint64_t false_positives = 0;
    std::uint64_t propagated = 0;      ///< ANOMALY on calls enclosing an injected one
};

void score(const RunResult& r, const std::vector<synth::GroundTruth>& truth, Detection& d)
{
    std::set<SpanKey> injected;
    for (const auto& t : truth) {
        injected.emplace(t.app, t.rank, t.span);
    }
    std::map<SpanKey, const LabeledSpan*> by_key;
    for (const auto& l : r.labels) {
        by_key[{l.app, l.rank, l.span_id}] = &l;
    }
    std::set<SpanKey> enclosing;
    for (const auto& key : injected) {
        auto it = by_key.find(key);
        for (auto p = it == by_key.end() ? std::nullopt : it->second->parent_span; p;) {
            const SpanKey pk{std::get<0>(key), std::get<1>(key), *p};
            enclosing.insert(pk);
            auto pit = by_key.find(pk);
            p = pit == by_key.end() ? std::nullopt : pit->second->parent_span;
        }
    }
    d.injected += injected.size();
    for (const auto& l : r.labels) {
        const SpanKey key{l.app, l.rank, l.span_id};
        const bool anomalous = l.label == Label::Anomaly;
        if (injected.count(key)) {
            d.detected += anomalous;
        } else if (enclosing.count(key)) {
            d.propagated += anomalous;
        } else if (l.label != Label::Unlabeled) {
            ++d.negatives;
            d.false_positives += anomalous;
        }
    }
}

/// Fraction of calls of the clean corpus outside the band of their
/// function's batch statistics (long double oracle).
double clean_band_rate(const RunResult& clean, const std::map<SpanKey, Micros>& runtimes, double alpha)
{
    std::map<FuncId, std::vector<double>> by_fid;
    for (const auto& l : clean.labels) {
        by_fid[l.func_id].push_back(static_cast<double>(runtimes.at({l.app, l.rank, l.span_id})));
    }
    std::uint64_t outside = 0;
    std::uint64_t total = 0;
    for (const auto& [fid, xs] : by_fid) {
        const auto o = testing::oracle_of(xs);
        const long double sd = std::sqrt(o.m2 / o.n);
        for (double x : xs) {
            outside += x > o.mean + alpha * sd || x < o.mean - alpha * sd;
        }
        total += xs.size();
    }
    return total ? static_cast<double>(outside) / static_cast<double>(total) : 0.0;
}

synth::SynthSpec corpus_spec(std::uint32_t ranks, double rate)
{
    auto s = synth::default_spec();
    s.n_ranks = ranks;
    s.anomaly_rate = rate;
    s.steps = 7;
    return s;
}

void check_corpora()
{
    Conservation cons;
    Detection det;
    bool agree_ok = true;
    std::string agree_detail;
    double agree_seconds = 0;
    std::uint64_t provenance_bytes = 0;
    std::uint64_t raw_bytes = 0;
    std::uint64_t anomalies = 0;
    std::uint64_t stored = 0;
    std::uint32_t k = 0;
    bool bound_ok = true;

    for (std::uint32_t ranks : {10u, 20u, 50u, 100u}) {
        TempDir dir("accept");
        const auto corpus = synth::generate(corpus_spec(ranks, 0.01), dir / "traces");
        check_conservation(corpus.trace_files, cons);
        const auto src = as_strings(corpus.trace_files);

        RunOptions central;
        central.out_dir = dir / "central";
        k = central.cfg.k_context;
        const auto t0 = Clock::now();
        const auto c = run_offline(src, central);
        RunOptions dist;
        dist.mode = RunMode::Distributed;
        dist.workers = std::min<std::uint32_t>(ranks, 8);
        const auto d = run_offline(src, dist);
        agree_seconds += seconds_since(t0);

        const double acc = compare_labels(c.labels, d.labels);
        agree_ok = agree_ok && acc >= kAgreementMin;
        agree_detail += fmt("%s%u ranks W=%u %.5f", agree_detail.empty() ? "" : ", ", ranks, dist.workers, acc);

        score(c, corpus.truth, det);
        provenance_bytes += c.provenance_bytes;
        raw_bytes += c.raw_bytes;
        anomalies += c.anomalies;
        stored += c.spans_stored;
        bound_ok = bound_ok && c.spans_stored <= c.anomalies * (2 * k + 1) && c.spans_stored >= c.anomalies;
        cons.mismatches += c.mismatches + d.mismatches;
        cons.incomplete += c.incomplete_spans + d.incomplete_spans;
    }
    report(agree_ok && agree_seconds < kAgreementSeconds && cons.min_spans_per_rank >= kSpansPerRankMin,
        "distributed-vs-central agreement",
        fmt("%s (>= %.2f each), >= %llu spans/rank, %.1f s < %.0f s", agree_detail.c_str(), kAgreementMin,
            static_cast<unsigned long long>(cons.min_spans_per_rank), agree_seconds, kAgreementSeconds));

    // Clean reference: the same grammar and seed without injection.
    TempDir dir("accept");
    const auto clean = synth::generate(corpus_spec(10, 0.0), dir / "traces");
    check_conservation(clean.trace_files, cons);
    const auto clean_run = run_offline(as_strings(clean.trace_files), RunOptions{});
    std::map<SpanKey, Micros> runtimes;
    for (const auto& path : clean.trace_files) {
        auto reader = TraceReader::open(path.string(), {});
        SpanAssembler a;
        while (auto e = reader.next()) {
            if (auto s = a.push_event(*e)) {
                runtimes[{s->app, s->rank, s->span_id}] = s->inclusive_us;
            }
        }
    }
    Detection clean_det;
    score(clean_run, {}, clean_det);
    const double band_rate = clean_band_rate(clean_run, runtimes, ADConfig{}.alpha);
    const double clean_fp = clean_det.negatives
        ? static_cast<double>(clean_det.false_positives) / static_cast<double>(clean_det.negatives) : 0.0;
    const double fp = det.negatives ? static_cast<double>(det.false_positives) / static_cast<double>(det.negatives) : 0.0;
    const double recall = det.injected ? static_cast<double>(det.detected) / static_cast<double>(det.injected) : 0.0;
    const double fp_bound = std::max(band_rate, clean_fp);
    report(recall >= kRecallMin && det.injected > 0 && fp <= fp_bound, "injected-anomaly recall",
        fmt("CENTRAL detected %llu/%llu = %.5f >= %.2f; false-positive rate %.3g (%llu/%llu) <= clean reference %.3g "
            "(batch band %.3g, streaming %.3g); %llu enclosing calls also flagged",
            static_cast<unsigned long long>(det.detected), static_cast<unsigned long long>(det.injected), recall,
            kRecallMin, fp, static_cast<unsigned long long>(det.false_positives),
            static_cast<unsigned long long>(det.negatives), fp_bound, band_rate, clean_fp,
            static_cast<unsigned long long>(det.propagated)));

    const double ratio = raw_bytes ? static_cast<double>(provenance_bytes) / static_cast<double>(raw_bytes) : 1.0;
    report(ratio <= kReductionMax && bound_ok && anomalies > 0, "data reduction",
        fmt("provenance %llu B / raw %llu B = %.4f <= %.1f (%.1fx); stored %llu spans in [A=%llu, A(2k+1)=%llu]",
            static_cast<unsigned long long>(provenance_bytes), static_cast<unsigned long long>(raw_bytes), ratio,
            kReductionMax, ratio > 0 ? 1 / ratio : 0.0, static_cast<unsigned long long>(stored),
            static_cast<unsigned long long>(anomalies), static_cast<unsigned long long>(anomalies * (2 * k + 1))));

    // The latency corpus joins the conservation check.
    TempDir ldir("accept");
    auto lspec = corpus_spec(2, 0.01);
    lspec.steps = 2;
    lspec.flush_interval_s = 6.0;
    const auto lat = synth::generate(lspec, ldir / "traces");
    check_conservation(lat.trace_files, cons);
    RunOptions lopt;
    lopt.mode = RunMode::Distributed;
    lopt.workers = 2;
    lopt.cfg.flush_interval_s = lspec.flush_interval_s;
    const auto lr = run_offline(as_strings(lat.trace_files), lopt);
    double max_step = 0;
    std::uint64_t min_spans = std::numeric_limits<std::uint64_t>::max();
    std::uint64_t full_steps = 0;
    for (std::size_t i = 0; i < lr.reports.size(); ++i) {
        if (lr.reports[i].n_spans >= kSpansPerRankMin) {
            ++full_steps;
            min_spans = std::min(min_spans, lr.reports[i].n_spans);
        }
    }
    for (double s : lr.step_seconds) {
        max_step = std::max(max_step, s);
    }
    double worst_worker_per_step = 0;
    for (double s : lr.worker_seconds) {
        worst_worker_per_step = std::max(worst_worker_per_step, s / static_cast<double>(lspec.steps));
    }
    report(full_steps >= 2 && max_step <= kStepSecondsMax && worst_worker_per_step <= kStepSecondsMax,
        "per-step latency",
        fmt("%llu DISTRIBUTED steps of >= %llu spans: max label+update %.3f s, worker wall per step incl. decode %.3f s "
            "(<= %.1f s)",
            static_cast<unsigned long long>(full_steps), static_cast<unsigned long long>(min_spans), max_step,
            worst_worker_per_step, kStepSecondsMax));

    report(cons.mismatches == 0 && cons.incomplete == 0 && cons.unbalanced_threads == 0 && cons.threads > 0,
        "assembler conservation",
        fmt("%llu traces, %llu threads: %llu with sum exclusive != sum root inclusive, %llu stack mismatches, "
            "%llu incomplete spans",
            static_cast<unsigned long long>(cons.traces), static_cast<unsigned long long>(cons.threads),
            static_cast<unsigned long long>(cons.unbalanced_threads), static_cast<unsigned long long>(cons.mismatches),
            static_cast<unsigned long long>(cons.incomplete)));
}

void check_liveness()
{
    constexpr std::uint32_t workers = 8;
    TempDir dir("accept");
    auto spec = corpus_spec(workers, 0.01);
    spec.steps = 4;
    const auto corpus = synth::generate(spec, dir / "traces");

    ps::ParamServer server(ps::ServerOptions{});
    server.start();
    std::atomic<std::uint64_t> v_stall_begin{0};
    std::atomic<std::uint64_t> v_stall_end{0};
    std::atomic<double> stall_end_s{0};
    const auto t0 = Clock::now();
    RunOptions opt;
    opt.mode = RunMode::Distributed;
    opt.workers = workers;
    opt.param_server = server.endpoint();
    opt.before_step = [&](std::uint32_t w, StepId step) {
        if (w == 0 && step == 1) {
            v_stall_begin = server.version();
            std::this_thread::sleep_for(std::chrono::duration<double>(kStallSeconds));
            v_stall_end = server.version();
            stall_end_s = seconds_since(t0);
        }
    };

    // Sample the version while the run is in progress.
    std::atomic<bool> running{true};
    std::vector<std::uint64_t> samples;
    std::thread sampler([&] {
        while (running) {
            samples.push_back(server.version());
            std::this_thread::sleep_for(std::chrono::milliseconds(100));
        }
    });
    const auto r = run_offline(as_strings(corpus.trace_files), opt);
    running = false;
    sampler.join();
    server.stop();

    std::map<std::uint32_t, std::set<StepId>> steps;
    for (const auto& rep : r.reports) {
        steps[rep.rank].insert(rep.step_id);
    }
    const std::size_t expected_steps = steps.count(0) ? steps.at(0).size() : 0;
    bool others_complete = steps.size() == workers;
    double others_max = 0;
    for (std::uint32_t w = 1; w < workers; ++w) {
        others_complete = others_complete && steps[w].size() == expected_steps;
        others_max = std::max(others_max, r.worker_seconds[w]);
    }
    const bool finished_during_stall = others_max < stall_end_s;
    const std::uint64_t advanced = v_stall_end - v_stall_begin;
    const std::uint64_t others_updates = (workers - 1) * expected_steps;
    report(others_complete && finished_during_stall && advanced > 0 && r.unsent_updates == 0,
        "liveness without barriers",
        fmt("W=%u, worker 0 stalled %.0f s: other %u finished all %zu steps by %.2f s (stall ended %.2f s); version "
            "advanced %llu -> %llu during the stall (%llu of the others' %llu updates), %zu samples",
            workers, kStallSeconds, workers - 1, expected_steps, others_max, stall_end_s.load(),
            static_cast<unsigned long long>(v_stall_begin.load()), static_cast<unsigned long long>(v_stall_end.load()),
            static_cast<unsigned long long>(advanced), static_cast<unsigned long long>(others_updates),
            samples.size()));
}

void check_overhead()
{
    const double v = compute_overhead(100.0, 116.67);
    report(std::fabs(v - kOverheadExpect) <= kOverheadTol, "overhead sign convention",
        fmt("compute_overhead(100, 116.67) = %.4f, expected %.2f +- %.2f", v, kOverheadExpect, kOverheadTol));
}

} // namespace

int main()
{
    try {
        check_stats_oracles();
        check_corpora();
        check_liveness();
        check_overhead();
    } catch (const std::exception& e) {
        std::cout << "FAIL acceptance harness: " << e.what() << std::endl;
        return 1;
    }
    return failures == 0 ? 0 : 1;
}
