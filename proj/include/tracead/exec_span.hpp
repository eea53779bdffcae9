#ifndef TRACEAD_EXEC_SPAN_HPP
#define TRACEAD_EXEC_SPAN_HPP

#include "tracead/trace_event.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tracead {

enum class Label : std::uint8_t { Unlabeled, Normal, Anomaly };

std::string_view to_string(Label label) noexcept;
/// Single-letter code used by the record files ("N", "A", "U").
char label_code(Label label) noexcept;
std::optional<Label> label_from_code(std::string_view code) noexcept;

/// Communication event attributed to a span.
struct CommRecord {
    CommKind kind = CommKind::Send;
    std::uint32_t partner_rank = 0;
    std::int64_t tag = 0;
    std::uint64_t size_bytes = 0;
    Micros timestamp_us = 0;

    friend bool operator==(const CommRecord&, const CommRecord&) = default;
};

/// Lightweight view of a related call (ancestor or descendant).
/// exit_us is empty for ancestors that were still open.
struct SpanFrame {
    SpanId span_id = 0;
    std::optional<SpanId> parent_span;
    FuncId func_id = 0;
    Micros entry_us = 0;
    std::optional<Micros> exit_us;
    Label label = Label::Unlabeled;

    friend bool operator==(const SpanFrame&, const SpanFrame&) = default;
};

/// A completed function call.
///
/// span_id is assigned in ENTRY order per (app, rank) starting at 1; 0 is the
/// synthetic per-thread root that collects messages sent outside any call.
/// The (app, rank, span_id) triple is unique within a run.
struct ExecSpan {
    SpanId span_id = 0;
    std::uint32_t app = 0;
    std::uint32_t rank = 0;
    std::uint32_t thread = 0;
    FuncId func_id = 0;
    std::string func_name;
    Micros entry_us = 0;
    Micros exit_us = 0;
    Micros inclusive_us = 0;
    Micros exclusive_us = 0;
    std::uint32_t n_children = 0;
    std::uint32_t n_messages = 0;
    std::optional<SpanId> parent_span;
    std::vector<CommRecord> comm;
    Label label = Label::Unlabeled;

    // Call-stack context captured when the span completed.
    std::vector<SpanFrame> ancestry;    // root first; all still open at completion
    std::vector<SpanFrame> descendants; // completed calls nested inside, capped
    bool descendants_truncated = false;

    RankKey rank_key() const noexcept { return {app, rank}; }
    SpanFrame frame() const
    {
        return {span_id, parent_span, func_id, entry_us, exit_us, label};
    }

    friend bool operator==(const ExecSpan&, const ExecSpan&) = default;
};

} // namespace tracead

#endif
