#include "tracead/span_assembler.hpp"

#include "tracead/error.hpp"

namespace tracead {

SpanAssembler::SpanAssembler(AssemblerOptions options) : options_(options) { }

std::optional<ExecSpan> SpanAssembler::push_event(const TraceEvent& e)
{
    const StreamKey key = e.stream();
    ThreadState& ts = threads_[key];
    if (ts.seen && e.timestamp_us < ts.last_ts) {
        throw OrderingViolation(key.to_string(), ts.last_ts, e.timestamp_us);
    }
    ts.seen = true;
    ts.last_ts = e.timestamp_us;

    if (const auto* c = std::get_if<CommPayload>(&e.payload)) {
        CommRecord rec{c->kind, c->partner_rank, c->tag, c->size_bytes, e.timestamp_us};
        if (ts.stack.empty()) {
            ts.root_comm.push_back(rec);
            ++root_message_count_;
        } else {
            ExecSpan& top = ts.stack.back().span;
            top.comm.push_back(rec);
            ++top.n_messages;
        }
        return std::nullopt;
    }

    const FuncPayload& f = std::get<FuncPayload>(e.payload);
    if (f.kind == FuncKind::Entry) {
        OpenFrame frame;
        ExecSpan& s = frame.span;
        s.span_id = ++next_id_[key.rank_key()];
        s.app = e.app;
        s.rank = e.rank;
        s.thread = e.thread;
        s.func_id = f.func_id;
        s.func_name = f.func_name;
        s.entry_us = e.timestamp_us;
        if (!ts.stack.empty()) {
            s.parent_span = ts.stack.back().span.span_id;
        }
        ts.stack.push_back(std::move(frame));
        return std::nullopt;
    }

    if (ts.stack.empty() || ts.stack.back().span.func_id != f.func_id) {
        std::optional<FuncId> expected;
        if (!ts.stack.empty()) {
            expected = ts.stack.back().span.func_id;
        }
        if (options_.mismatch == MismatchPolicy::Abort) {
            throw StackMismatch(expected, f.func_id);
        }
        ++mismatches_;
        return std::nullopt;
    }

    OpenFrame done = std::move(ts.stack.back());
    ts.stack.pop_back();
    ExecSpan& s = done.span;
    s.exit_us = e.timestamp_us;
    s.inclusive_us = s.exit_us - s.entry_us;
    s.exclusive_us = s.inclusive_us - done.children_inclusive;
    s.ancestry.reserve(ts.stack.size());
    for (const auto& open : ts.stack) {
        SpanFrame fr = open.span.frame();
        fr.exit_us.reset();
        s.ancestry.push_back(fr);
    }

    if (!ts.stack.empty()) {
        OpenFrame& parent = ts.stack.back();
        parent.children_inclusive += s.inclusive_us;
        ++parent.span.n_children;
        auto& desc = parent.span.descendants;
        if (desc.size() < options_.max_descendants) {
            desc.push_back(s.frame());
        } else {
            parent.span.descendants_truncated = true;
        }
        for (const auto& d : s.descendants) {
            if (desc.size() >= options_.max_descendants) {
                parent.span.descendants_truncated = true;
                break;
            }
            desc.push_back(d);
        }
        if (s.descendants_truncated) {
            parent.span.descendants_truncated = true;
        }
    }
    ++emitted_;
    return std::move(s);
}

std::vector<ExecSpan> SpanAssembler::finalize()
{
    std::vector<ExecSpan> open;
    for (auto& [key, ts] : threads_) {
        for (auto it = ts.stack.rbegin(); it != ts.stack.rend(); ++it) {
            ExecSpan s = std::move(it->span);
            s.exit_us = ts.last_ts;
            s.inclusive_us = s.exit_us - s.entry_us;
            s.exclusive_us = s.inclusive_us >= it->children_inclusive ? s.inclusive_us - it->children_inclusive : 0;
            s.label = Label::Unlabeled;
            open.push_back(std::move(s));
        }
    }
    threads_.clear();
    return open;
}

std::size_t SpanAssembler::depth(const StreamKey& key) const
{
    auto it = threads_.find(key);
    return it == threads_.end() ? 0 : it->second.stack.size();
}

const std::vector<CommRecord>& SpanAssembler::root_messages(const StreamKey& key) const
{
    static const std::vector<CommRecord> none;
    auto it = threads_.find(key);
    return it == threads_.end() ? none : it->second.root_comm;
}

} // namespace tracead
