#ifndef TRACEAD_TESTS_SUPPORT_HPP
#define TRACEAD_TESTS_SUPPORT_HPP

#include "tracead/exec_span.hpp"
#include "tracead/run_stats.hpp"
#include "tracead/trace_event.hpp"
#include "tracead/trace_stream.hpp"

#include <cmath>
#include <filesystem>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace testing {

namespace fs = std::filesystem;

/// Fresh directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "t")
    {
        static std::mt19937_64 rng{std::random_device{}()};
        path_ = fs::temp_directory_path() / ("tracead_" + tag + "_" + std::to_string(rng()));
        fs::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const fs::path& path() const noexcept { return path_; }
    fs::path operator/(const std::string& s) const { return path_ / s; }

private:
    fs::path path_;
};

/// Two-pass batch statistics in long double, independent of RunStats.
struct Oracle {
    std::uint64_t n = 0;
    long double mean = 0;
    long double m2 = 0;
    double min = 0;
    double max = 0;
};

inline Oracle oracle_of(const std::vector<double>& xs)
{
    Oracle o;
    o.n = xs.size();
    if (xs.empty()) {
        return o;
    }
    long double sum = 0;
    o.min = xs[0];
    o.max = xs[0];
    for (double x : xs) {
        sum += x;
        o.min = std::min(o.min, x);
        o.max = std::max(o.max, x);
    }
    o.mean = sum / xs.size();
    // Corrected two-pass: removes the rounding of the first-pass sum.
    long double resid = 0;
    for (double x : xs) {
        resid += x - o.mean;
    }
    o.mean += resid / xs.size();
    for (double x : xs) {
        const long double d = x - o.mean;
        o.m2 += d * d;
    }
    return o;
}

/// |a - b| / max(|b|, floor); floor keeps zero-variance cases meaningful.
inline double rel_err(long double a, long double b, long double floor = 1e-300L)
{
    return static_cast<double>(std::fabs(a - b) / std::max(std::fabs(b), floor));
}

/// m2 error scaled by the data magnitude, so constant lists compare against 0.
inline bool stats_match(const tracead::RunStats& s, const Oracle& o, double tol)
{
    if (s.n() != o.n) {
        return false;
    }
    if (o.n == 0) {
        return s.empty();
    }
    const long double scale = std::max<long double>(std::fabs(o.mean), 1.0L);
    const long double m2_floor = scale * scale * o.n * 1e-12L;
    return rel_err(s.mean(), o.mean, 1e-300L) <= tol && rel_err(s.m2(), o.m2, m2_floor) <= tol
        && s.min() == o.min && s.max() == o.max;
}

inline tracead::TraceEvent entry(std::uint32_t thread, tracead::Micros ts, tracead::FuncId fid,
    const std::string& name, std::uint32_t rank = 0, std::uint32_t app = 0)
{
    return {app, rank, thread, ts, tracead::FuncPayload{fid, name, tracead::FuncKind::Entry}};
}

inline tracead::TraceEvent exit_ev(std::uint32_t thread, tracead::Micros ts, tracead::FuncId fid,
    const std::string& name, std::uint32_t rank = 0, std::uint32_t app = 0)
{
    return {app, rank, thread, ts, tracead::FuncPayload{fid, name, tracead::FuncKind::Exit}};
}

inline tracead::TraceEvent send_ev(std::uint32_t thread, tracead::Micros ts, std::uint32_t partner,
    std::uint32_t rank = 0, std::uint32_t app = 0)
{
    return {app, rank, thread, ts, tracead::CommPayload{tracead::CommKind::Send, partner, 7, 64}};
}

inline std::string lines_of(const std::vector<tracead::TraceEvent>& evs)
{
    std::string out;
    for (const auto& e : evs) {
        tracead::encode_event(e, out);
    }
    return out;
}

inline tracead::TraceReader reader_of(const std::string& text, tracead::ReaderOptions opt = {})
{
    return tracead::TraceReader(
        tracead::make_istream_source(std::make_unique<std::istringstream>(text)), opt, "<test>");
}

inline tracead::ExecSpan make_span(tracead::SpanId id, tracead::FuncId fid, tracead::Micros entry,
    tracead::Micros inclusive, tracead::Label label = tracead::Label::Normal)
{
    tracead::ExecSpan s;
    s.span_id = id;
    s.func_id = fid;
    s.func_name = "F" + std::to_string(fid);
    s.entry_us = entry;
    s.exit_us = entry + inclusive;
    s.inclusive_us = inclusive;
    s.exclusive_us = inclusive;
    s.label = label;
    return s;
}

} // namespace testing

#endif
