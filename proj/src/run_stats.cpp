#include "tracead/run_stats.hpp"

#include <algorithm>
#include <cmath>

namespace tracead {

RunStats RunStats::from_moments(std::uint64_t n, double mean, double m2, double min, double max) noexcept
{
    return from_parts(n, mean, 0.0, m2, min, max);
}

RunStats RunStats::from_parts(std::uint64_t n, double pivot, double offset, double m2, double min,
    double max) noexcept
{
    RunStats s;
    if (n == 0) {
        return s;
    }
    s.n_ = n;
    s.pivot_ = pivot;
    s.offset_ = offset;
    s.m2_ = m2;
    s.min_ = min;
    s.max_ = max;
    return s;
}

double RunStats::stddev() const noexcept
{
    return std::sqrt(variance());
}

void RunStats::add(double x) noexcept
{
    if (n_ == 0) {
        pivot_ = x;
    }
    ++n_;
    const double y = x - pivot_;
    const double delta = y - offset_;
    offset_ += delta / static_cast<double>(n_);
    m2_ += delta * (y - offset_);
    min_ = std::min(min_, x);
    max_ = std::max(max_, x);
}

RunStats update_stats(RunStats s, double x) noexcept
{
    s.add(x);
    return s;
}

RunStats merge_stats(const RunStats& a, const RunStats& b) noexcept
{
    if (b.n_ == 0) {
        return a;
    }
    if (a.n_ == 0) {
        return b;
    }
    RunStats out;
    out.n_ = a.n_ + b.n_;
    out.pivot_ = a.pivot_;
    const double na = static_cast<double>(a.n_);
    const double nb = static_cast<double>(b.n_);
    const double n = static_cast<double>(out.n_);
    // b's mean relative to a's pivot
    const double b_rel = (b.pivot_ - a.pivot_) + b.offset_;
    const double delta = b_rel - a.offset_;
    out.offset_ = a.offset_ + delta * (nb / n);
    out.m2_ = a.m2_ + b.m2_ + delta * delta * (na * nb / n);
    out.min_ = std::min(a.min_, b.min_);
    out.max_ = std::max(a.max_, b.max_);
    return out;
}

RunStats unmerge_stats(const RunStats& total, const RunStats& part) noexcept
{
    if (part.n_ == 0) {
        return total;
    }
    if (part.n_ >= total.n_) {
        return {};
    }
    RunStats out;
    out.n_ = total.n_ - part.n_;
    out.pivot_ = total.pivot_;
    const double n = static_cast<double>(total.n_);
    const double na = static_cast<double>(part.n_);
    const double nb = static_cast<double>(out.n_);
    const double part_rel = (part.pivot_ - total.pivot_) + part.offset_;
    // total.mean = part.mean + delta * nb / n  =>  delta = (total.mean - part.mean) * n / nb
    const double delta = (total.offset_ - part_rel) * (n / nb);
    out.offset_ = part_rel + delta;
    out.m2_ = std::max(0.0, total.m2_ - part.m2_ - delta * delta * (na * nb / n));
    out.min_ = total.min_;
    out.max_ = total.max_;
    const double lo = out.min_ - out.pivot_;
    const double hi = out.max_ - out.pivot_;
    if (lo <= hi) {
        out.offset_ = std::clamp(out.offset_, lo, hi);
    }
    return out;
}

RunStats stats_of(std::span<const double> values) noexcept
{
    RunStats s;
    for (double x : values) {
        s.add(x);
    }
    return s;
}

} // namespace tracead
