#ifndef TRACEAD_SPAN_ASSEMBLER_HPP
#define TRACEAD_SPAN_ASSEMBLER_HPP

#include "tracead/exec_span.hpp"
#include "tracead/trace_event.hpp"

#include <map>
#include <optional>
#include <vector>

namespace tracead {

enum class MismatchPolicy {
    Discard, ///< drop the unmatched EXIT and count it
    Abort,   ///< throw StackMismatch
};

struct AssemblerOptions {
    MismatchPolicy mismatch = MismatchPolicy::Discard;
    /// Upper bound on descendant frames kept per span.
    std::size_t max_descendants = 64;
};

/// Rebuilds per-thread call stacks from ENTRY/EXIT events.
///
/// Messages attach to the innermost open call of their thread, or to the
/// thread's synthetic root (span id 0) when nothing is open. Matching is
/// strictly top-of-stack, so recursion is supported.
class SpanAssembler {
public:
    explicit SpanAssembler(AssemblerOptions options = {});

    /// Feeds one event; returns the span it completed, if any.
    /// Throws OrderingViolation if e is older than the last event of its thread.
    std::optional<ExecSpan> push_event(const TraceEvent& e);

    /// Returns still-open calls (innermost first per thread) and drains the state.
    /// Their exit_us is the last timestamp seen on the thread.
    std::vector<ExecSpan> finalize();

    std::uint64_t mismatches() const noexcept { return mismatches_; }
    std::uint64_t spans_emitted() const noexcept { return emitted_; }
    std::size_t depth(const StreamKey& key) const;
    /// Messages collected by the synthetic root of one thread.
    const std::vector<CommRecord>& root_messages(const StreamKey& key) const;
    std::uint64_t total_root_messages() const noexcept { return root_message_count_; }

private:
    struct OpenFrame {
        ExecSpan span;
        Micros children_inclusive = 0;
    };
    struct ThreadState {
        std::vector<OpenFrame> stack;
        std::vector<CommRecord> root_comm;
        Micros last_ts = 0;
        bool seen = false;
    };

    AssemblerOptions options_;
    std::map<StreamKey, ThreadState> threads_;
    std::map<RankKey, SpanId> next_id_;
    std::uint64_t mismatches_ = 0;
    std::uint64_t emitted_ = 0;
    std::uint64_t root_message_count_ = 0;
};

} // namespace tracead

#endif
