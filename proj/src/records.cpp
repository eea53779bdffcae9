#include "tracead/records.hpp"

#include "tracead/error.hpp"

#include <limits>

namespace tracead::records {

namespace {

const json& field(const json& j, const char* key)
{
    if (!j.is_object()) {
        throw ProtocolError(std::string("expected an object holding '") + key + "'");
    }
    auto it = j.find(key);
    if (it == j.end()) {
        throw ProtocolError(std::string("missing field '") + key + "'");
    }
    return *it;
}

double finite_or_null(const json& v, double fallback)
{
    if (v.is_null()) {
        return fallback;
    }
    if (!v.is_number()) {
        throw ProtocolError("expected a number");
    }
    return v.get<double>();
}

std::optional<std::uint64_t> opt_u64(const json& v)
{
    if (v.is_null()) {
        return std::nullopt;
    }
    if (!v.is_number_unsigned()) {
        throw ProtocolError("expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
}

} // namespace

std::uint64_t get_u64(const json& j, const char* key)
{
    const json& v = field(j, key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
        throw ProtocolError(std::string("field '") + key + "' is not a non-negative integer");
    }
    return v.get<std::uint64_t>();
}

std::int64_t get_i64(const json& j, const char* key)
{
    const json& v = field(j, key);
    if (!v.is_number_integer()) {
        throw ProtocolError(std::string("field '") + key + "' is not an integer");
    }
    return v.get<std::int64_t>();
}

double get_f64(const json& j, const char* key)
{
    const json& v = field(j, key);
    if (!v.is_number()) {
        throw ProtocolError(std::string("field '") + key + "' is not a number");
    }
    return v.get<double>();
}

std::string get_str(const json& j, const char* key)
{
    const json& v = field(j, key);
    if (!v.is_string()) {
        throw ProtocolError(std::string("field '") + key + "' is not a string");
    }
    return v.get<std::string>();
}

json stats_to_json(const RunStats& s)
{
    json j = json::object();
    j["n"] = s.n();
    j["mean"] = s.mean();
    j["m2"] = s.m2();
    if (s.empty()) {
        j["min"] = nullptr;
        j["max"] = nullptr;
    } else {
        j["min"] = s.min();
        j["max"] = s.max();
        j["pivot"] = s.pivot();
        j["off"] = s.offset();
    }
    return j;
}

RunStats stats_from_json(const json& j)
{
    const std::uint64_t n = get_u64(j, "n");
    if (n == 0) {
        return {};
    }
    const double mean = get_f64(j, "mean");
    const double m2 = get_f64(j, "m2");
    if (m2 < 0.0) {
        throw ProtocolError("negative m2");
    }
    const double mn = finite_or_null(field(j, "min"), mean);
    const double mx = finite_or_null(field(j, "max"), mean);
    auto pv = j.find("pivot");
    auto off = j.find("off");
    if (pv != j.end() && off != j.end() && pv->is_number() && off->is_number()) {
        return RunStats::from_parts(n, pv->get<double>(), off->get<double>(), m2, mn, mx);
    }
    return RunStats::from_moments(n, mean, m2, mn, mx);
}

json frame_to_json(const SpanFrame& f)
{
    json j = json::array();
    j.push_back(f.span_id);
    j.push_back(f.parent_span ? json(*f.parent_span) : json(nullptr));
    j.push_back(f.func_id);
    j.push_back(f.entry_us);
    j.push_back(f.exit_us ? json(*f.exit_us) : json(nullptr));
    j.push_back(std::string(1, label_code(f.label)));
    return j;
}

SpanFrame frame_from_json(const json& j)
{
    if (!j.is_array() || j.size() != 6) {
        throw ProtocolError("frame must be a 6-element array");
    }
    SpanFrame f;
    f.span_id = opt_u64(j[0]).value_or(0);
    f.parent_span = opt_u64(j[1]);
    f.func_id = static_cast<FuncId>(opt_u64(j[2]).value_or(0));
    f.entry_us = opt_u64(j[3]).value_or(0);
    f.exit_us = opt_u64(j[4]);
    if (!j[5].is_string()) {
        throw ProtocolError("frame label is not a string");
    }
    f.label = label_from_code(j[5].get<std::string>()).value_or(Label::Unlabeled);
    return f;
}

json span_to_json(const ExecSpan& s, std::string_view implied_name)
{
    json j = json::object();
    j["id"] = s.span_id;
    j["th"] = s.thread;
    j["fid"] = s.func_id;
    if (s.func_name != implied_name) {
        j["fname"] = s.func_name;
    }
    j["en"] = s.entry_us;
    j["ex"] = s.exit_us;
    j["exc"] = s.exclusive_us;
    j["nc"] = s.n_children;
    j["nm"] = s.n_messages;
    if (s.parent_span) {
        j["par"] = *s.parent_span;
    }
    j["lb"] = std::string(1, label_code(s.label));
    if (!s.comm.empty()) {
        json comm = json::array();
        for (const auto& c : s.comm) {
            comm.push_back(json::array({c.kind == CommKind::Send ? "S" : "R", c.partner_rank, c.tag, c.size_bytes,
                c.timestamp_us}));
        }
        j["comm"] = std::move(comm);
    }
    return j;
}

ExecSpan span_from_json(const json& j, std::uint32_t app, std::uint32_t rank, std::string_view implied_name)
{
    ExecSpan s;
    s.app = app;
    s.rank = rank;
    s.span_id = get_u64(j, "id");
    s.thread = static_cast<std::uint32_t>(get_u64(j, "th"));
    s.func_id = static_cast<FuncId>(get_u64(j, "fid"));
    if (auto it = j.find("fname"); it != j.end() && it->is_string()) {
        s.func_name = it->get<std::string>();
    } else {
        s.func_name = std::string(implied_name);
    }
    s.entry_us = get_u64(j, "en");
    s.exit_us = get_u64(j, "ex");
    if (s.exit_us < s.entry_us) {
        throw ProtocolError("span exits before it enters");
    }
    s.inclusive_us = s.exit_us - s.entry_us;
    s.exclusive_us = get_u64(j, "exc");
    s.n_children = static_cast<std::uint32_t>(get_u64(j, "nc"));
    s.n_messages = static_cast<std::uint32_t>(get_u64(j, "nm"));
    if (auto it = j.find("par"); it != j.end()) {
        s.parent_span = opt_u64(*it);
    }
    s.label = label_from_code(get_str(j, "lb")).value_or(Label::Unlabeled);
    if (auto it = j.find("comm"); it != j.end()) {
        for (const auto& c : *it) {
            if (!c.is_array() || c.size() != 5 || !c[0].is_string()) {
                throw ProtocolError("malformed comm entry");
            }
            CommRecord rec;
            rec.kind = c[0].get<std::string>() == "S" ? CommKind::Send : CommKind::Recv;
            rec.partner_rank = static_cast<std::uint32_t>(opt_u64(c[1]).value_or(0));
            rec.tag = c[2].get<std::int64_t>();
            rec.size_bytes = opt_u64(c[3]).value_or(0);
            rec.timestamp_us = opt_u64(c[4]).value_or(0);
            s.comm.push_back(rec);
        }
    }
    return s;
}

json step_report_to_json(const AnomalyStepReport& r)
{
    return json{{"app", r.app}, {"rank", r.rank}, {"step", r.step_id},
        {"range", json::array({r.t_begin_us, r.t_end_us})}, {"anom", r.n_anomalies}, {"spans", r.n_spans}};
}

AnomalyStepReport step_report_from_json(const json& j)
{
    AnomalyStepReport r;
    r.app = static_cast<std::uint32_t>(get_u64(j, "app"));
    r.rank = static_cast<std::uint32_t>(get_u64(j, "rank"));
    r.step_id = get_u64(j, "step");
    const json& range = field(j, "range");
    if (!range.is_array() || range.size() != 2 || !range[0].is_number_unsigned() || !range[1].is_number_unsigned()) {
        throw ProtocolError("field 'range' must be [t0,t1]");
    }
    r.t_begin_us = range[0].get<std::uint64_t>();
    r.t_end_us = range[1].get<std::uint64_t>();
    r.n_anomalies = get_u64(j, "anom");
    if (auto it = j.find("spans"); it != j.end() && it->is_number_unsigned()) {
        r.n_spans = it->get<std::uint64_t>();
    }
    return r;
}

} // namespace tracead::records
