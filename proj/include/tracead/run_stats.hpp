#ifndef TRACEAD_RUN_STATS_HPP
#define TRACEAD_RUN_STATS_HPP

#include <cstdint>
#include <limits>
#include <span>

namespace tracead {

/// Mergeable streaming accumulator: count, mean, sum of squared deviations
/// from the mean (m2), min and max. Variance uses the population convention
/// m2 / n.
///
/// The mean is held as pivot + offset, where pivot is an observation and all
/// updates are done on x - pivot. For data far from zero (e.g. 1e9 + small
/// noise) the differences are exact, which keeps m2 accurate to ~1e-15
/// relative where a plain running mean loses ~1e-8.
///
/// An empty accumulator has n = 0, mean = m2 = 0 and min/max unset
/// (+inf / -inf).
class RunStats {
public:
    RunStats() = default;

    /// Builds from plain moments (pivot = mean).
    static RunStats from_moments(std::uint64_t n, double mean, double m2, double min, double max) noexcept;
    /// Builds from the exact pivot representation.
    static RunStats from_parts(std::uint64_t n, double pivot, double offset, double m2, double min,
        double max) noexcept;

    std::uint64_t n() const noexcept { return n_; }
    double mean() const noexcept { return pivot_ + offset_; }
    double m2() const noexcept { return m2_; }
    double min() const noexcept { return min_; }
    double max() const noexcept { return max_; }
    double pivot() const noexcept { return pivot_; }
    double offset() const noexcept { return offset_; }

    bool empty() const noexcept { return n_ == 0; }
    double variance() const noexcept { return n_ > 0 ? m2_ / static_cast<double>(n_) : 0.0; }
    double stddev() const noexcept;

    /// Adds one observation (Welford's single-pass update).
    void add(double x) noexcept;

    friend RunStats merge_stats(const RunStats& a, const RunStats& b) noexcept;
    friend RunStats unmerge_stats(const RunStats& total, const RunStats& part) noexcept;

    /// Compares the observable moments (n, mean, m2, min, max).
    friend bool operator==(const RunStats& a, const RunStats& b) noexcept
    {
        return a.n_ == b.n_ && a.mean() == b.mean() && a.m2_ == b.m2_ && a.min_ == b.min_ && a.max_ == b.max_;
    }

private:
    std::uint64_t n_ = 0;
    double pivot_ = 0.0;
    double offset_ = 0.0;
    double m2_ = 0.0;
    double min_ = std::numeric_limits<double>::infinity();
    double max_ = -std::numeric_limits<double>::infinity();
};

/// Returns s with x added.
RunStats update_stats(RunStats s, double x) noexcept;

/// Pairwise combination of two disjoint accumulators (Chan et al.):
/// with d = b.mean - a.mean, mean = a.mean + d * nb / n and
/// m2 = a.m2 + b.m2 + d^2 * na * nb / n.
/// Merging with an empty accumulator returns the other operand unchanged.
RunStats merge_stats(const RunStats& a, const RunStats& b) noexcept;

/// Inverse of merge_stats for n, mean and m2: the statistics of the
/// observations in total that are not in part (part must be a sub-multiset).
/// min/max of the result are total's, since the exact extremes are lost.
RunStats unmerge_stats(const RunStats& total, const RunStats& part) noexcept;

RunStats stats_of(std::span<const double> values) noexcept;

} // namespace tracead

#endif
