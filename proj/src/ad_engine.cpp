#include "tracead/ad_engine.hpp"

#include "tracead/error.hpp"

#include <algorithm>
#include <cmath>

namespace tracead {

void ADConfig::validate() const
{
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
        throw InvalidConfig("alpha must be positive");
    }
    if (!(flush_interval_s > 0.0) || !std::isfinite(flush_interval_s)) {
        throw InvalidConfig("flush interval must be positive");
    }
    if (flush_interval_us() == 0) {
        throw InvalidConfig("flush interval is below one microsecond");
    }
}

Micros ADConfig::flush_interval_us() const
{
    return static_cast<Micros>(std::llround(flush_interval_s * 1e6));
}

double span_runtime(const ExecSpan& s, RuntimeMetric metric) noexcept
{
    return static_cast<double>(metric == RuntimeMetric::Inclusive ? s.inclusive_us : s.exclusive_us);
}

Label label_span(double runtime_us, const RunStats& s, const ADConfig& cfg) noexcept
{
    if (s.n() < cfg.n_min || s.n() == 0) {
        return Label::Unlabeled;
    }
    const double band = cfg.alpha * s.stddev();
    const double mean = s.mean();
    if (runtime_us > mean + band || runtime_us < mean - band) {
        return Label::Anomaly;
    }
    return Label::Normal;
}

void accumulate(std::span<const ExecSpan> spans, StatsMap& stats, RuntimeMetric metric)
{
    for (const auto& s : spans) {
        stats[s.func_id].add(span_runtime(s, metric));
    }
}

RunStats labeling_view(FuncId fid, const StatsMap& local, const StatsMap* others)
{
    RunStats view;
    if (auto it = local.find(fid); it != local.end()) {
        view = it->second;
    }
    if (others != nullptr) {
        if (auto it = others->find(fid); it != others->end()) {
            view = merge_stats(view, it->second);
        }
    }
    return view;
}

std::size_t label_spans(std::span<ExecSpan> spans, const StatsMap& local, const StatsMap* others,
    const ADConfig& cfg)
{
    std::map<FuncId, RunStats> views;
    std::size_t anomalies = 0;
    for (auto& s : spans) {
        auto it = views.find(s.func_id);
        if (it == views.end()) {
            it = views.emplace(s.func_id, labeling_view(s.func_id, local, others)).first;
        }
        s.label = label_span(span_runtime(s, cfg.metric), it->second, cfg);
        if (s.label == Label::Anomaly) {
            ++anomalies;
        }
    }
    return anomalies;
}

StepResult process_step(std::vector<ExecSpan> spans, StatsMap& local, const StatsMap* global_others,
    const ADConfig& cfg, RankKey rank, const StepWindow& window)
{
    StepResult out;
    accumulate(spans, local, cfg.metric);
    auto& r = out.report;
    r.app = rank.app;
    r.rank = rank.rank;
    r.step_id = window.step_id;
    r.t_begin_us = window.t_begin_us;
    r.t_end_us = window.t_end_us;
    r.n_spans = spans.size();
    r.n_anomalies = label_spans(spans, local, global_others, cfg);
    for (const auto& s : spans) {
        if (!r.per_function.contains(s.func_id)) {
            r.per_function.emplace(s.func_id, local.at(s.func_id));
        }
    }
    out.spans = std::move(spans);
    return out;
}

std::vector<std::size_t> select_context_indices(std::span<const Label> labels, std::uint32_t k_context)
{
    std::vector<std::size_t> out;
    const std::size_t n = labels.size();
    const std::size_t k = k_context;
    // next index not yet emitted; windows are visited in ascending order
    std::size_t next = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] != Label::Anomaly) {
            continue;
        }
        std::size_t lo = i >= k ? i - k : 0;
        std::size_t hi = std::min(n - 1, i + k);
        for (std::size_t j = std::max(lo, next); j <= hi; ++j) {
            out.push_back(j);
        }
        next = std::max(next, hi + 1);
    }
    return out;
}

std::vector<ExecSpan> select_context(std::span<const ExecSpan> spans, const ADConfig& cfg)
{
    std::vector<Label> labels;
    labels.reserve(spans.size());
    for (const auto& s : spans) {
        labels.push_back(s.label);
    }
    std::vector<ExecSpan> out;
    for (std::size_t i : select_context_indices(labels, cfg.k_context)) {
        out.push_back(spans[i]);
    }
    return out;
}

std::map<FuncId, std::vector<std::size_t>> group_by_function(std::span<const ExecSpan> spans)
{
    std::map<FuncId, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < spans.size(); ++i) {
        groups[spans[i].func_id].push_back(i);
    }
    for (auto& [fid, idx] : groups) {
        std::stable_sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return spans[a].entry_us < spans[b].entry_us; });
    }
    return groups;
}

} // namespace tracead
