#ifndef TRACEAD_RECORDS_HPP
#define TRACEAD_RECORDS_HPP

// JSON encodings of the derived records (statistics, spans, step reports)
// in the same one-object-per-line grammar as the trace format.

#include "tracead/ad_engine.hpp"
#include "tracead/exec_span.hpp"
#include "tracead/run_stats.hpp"

#include <nlohmann/json.hpp>

namespace tracead::records {

using nlohmann::json;

/// {"n":..,"mean":..,"m2":..,"min":..,"max":..,"pivot":..,"off":..};
/// min/max are null for empty stats. pivot/off are optional on decode.
json stats_to_json(const RunStats& s);
RunStats stats_from_json(const json& j);

/// Compact span object. app/rank are implied by the enclosing record; fname
/// is omitted when equal to implied_name.
json span_to_json(const ExecSpan& s, std::string_view implied_name = {});
ExecSpan span_from_json(const json& j, std::uint32_t app, std::uint32_t rank, std::string_view implied_name = {});

/// [span_id, parent|null, fid, entry, exit|null, label]
json frame_to_json(const SpanFrame& f);
SpanFrame frame_from_json(const json& j);

/// Per-step summary without per-function statistics:
/// {"app":..,"rank":..,"step":..,"range":[t0,t1],"anom":n,"spans":n}
json step_report_to_json(const AnomalyStepReport& r);
AnomalyStepReport step_report_from_json(const json& j);

/// Field accessors that throw ProtocolError with the key name.
std::uint64_t get_u64(const json& j, const char* key);
std::int64_t get_i64(const json& j, const char* key);
double get_f64(const json& j, const char* key);
std::string get_str(const json& j, const char* key);

} // namespace tracead::records

#endif
