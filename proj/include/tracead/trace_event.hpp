#ifndef TRACEAD_TRACE_EVENT_HPP
#define TRACEAD_TRACE_EVENT_HPP

// Event data model and the newline-delimited record encoding shared by the
// synthetic generator, file replay and the AD workers.
//
// One record per line, fields in this order:
//   {"type":"ENTRY","app":0,"rank":0,"thread":0,"ts":1000,"fid":7,"fname":"MD_NEWTON"}
//   {"type":"SEND","app":0,"rank":0,"thread":0,"ts":2000,"partner":3,"tag":42,"bytes":1024}
//   {"type":"META","run_id":"r1","epoch_us":0,"fmap":{"7":"MD_NEWTON"}}
// Unknown extra fields are ignored on decode.

#include <compare>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <variant>

namespace tracead {

using FuncId = std::uint32_t;
using SpanId = std::uint64_t;
using StepId = std::uint64_t;
using Micros = std::uint64_t;

enum class FuncKind : std::uint8_t { Entry, Exit };
enum class CommKind : std::uint8_t { Send, Recv };

struct FuncPayload {
    FuncId func_id = 0;
    std::string func_name;
    FuncKind kind = FuncKind::Entry;

    friend bool operator==(const FuncPayload&, const FuncPayload&) = default;
};

struct CommPayload {
    CommKind kind = CommKind::Send;
    std::uint32_t partner_rank = 0;
    std::int64_t tag = 0;
    std::uint64_t size_bytes = 0;

    friend bool operator==(const CommPayload&, const CommPayload&) = default;
};

/// (app, rank) pair; the unit handled by one AD worker.
struct RankKey {
    std::uint32_t app = 0;
    std::uint32_t rank = 0;

    friend auto operator<=>(const RankKey&, const RankKey&) = default;
};

/// (app, rank, thread); timestamps are ordered within one of these.
struct StreamKey {
    std::uint32_t app = 0;
    std::uint32_t rank = 0;
    std::uint32_t thread = 0;

    RankKey rank_key() const noexcept { return {app, rank}; }
    std::string to_string() const;

    friend auto operator<=>(const StreamKey&, const StreamKey&) = default;
};

struct TraceEvent {
    std::uint32_t app = 0;
    std::uint32_t rank = 0;
    std::uint32_t thread = 0;
    Micros timestamp_us = 0;
    std::variant<FuncPayload, CommPayload> payload;

    StreamKey stream() const noexcept { return {app, rank, thread}; }
    bool is_func() const noexcept { return std::holds_alternative<FuncPayload>(payload); }
    const FuncPayload& func() const { return std::get<FuncPayload>(payload); }
    const CommPayload& comm() const { return std::get<CommPayload>(payload); }

    friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

/// Run-level header record.
struct MetaRecord {
    std::string run_id;
    Micros epoch_us = 0;
    std::map<FuncId, std::string> fmap;

    friend bool operator==(const MetaRecord&, const MetaRecord&) = default;
};

using TraceRecord = std::variant<MetaRecord, TraceEvent>;

std::string_view to_string(FuncKind kind) noexcept;
std::string_view to_string(CommKind kind) noexcept;

/// Appends a JSON string literal (quotes included) to out.
void append_json_string(std::string& out, std::string_view s);

/// One newline-terminated record line.
std::string encode_event(const TraceEvent& e);
/// Appends the newline-terminated record line to out.
void encode_event(const TraceEvent& e, std::string& out);
std::string encode_meta(const MetaRecord& m); ///< newline-terminated

/// Decodes one line (trailing newline optional). Throws MalformedRecord.
/// META records are rejected here; use decode_record to accept them.
TraceEvent decode_event(std::string_view line, std::uint64_t position = 0);
TraceRecord decode_record(std::string_view line, std::uint64_t position = 0);

} // namespace tracead

#endif
