#ifndef TRACEAD_TRACE_STREAM_HPP
#define TRACEAD_TRACE_STREAM_HPP

#include "tracead/trace_event.hpp"

#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <string>

namespace tracead {

enum class OrderingPolicy { Strict, Skip };
enum class MalformedPolicy { Abort, Skip };

struct ReaderOptions {
    OrderingPolicy ordering = OrderingPolicy::Strict;
    MalformedPolicy malformed = MalformedPolicy::Abort;
};

/// Source of record lines: a file, stdin, or a TCP stream endpoint.
class LineSource {
public:
    virtual ~LineSource() = default;
    /// Fills line (without newline); false at end of input.
    virtual bool next_line(std::string& line) = 0;
};

std::unique_ptr<LineSource> make_istream_source(std::unique_ptr<std::istream> in);

/// Ordered event iterator over one trace source. Single consumer.
///
/// META records are absorbed into meta(); blank lines are skipped. A timestamp
/// regression within one (app, rank, thread) stream raises OrderingViolation
/// under Strict and is dropped and counted under Skip. The func_id -> name
/// mapping must stay consistent for the whole source.
class TraceReader {
public:
    TraceReader(std::unique_ptr<LineSource> source, ReaderOptions options, std::string name = "<stream>");

    /// Opens a file path, "-" for stdin, or "tcp://host:port".
    static TraceReader open(const std::string& source, ReaderOptions options = {});

    std::optional<TraceEvent> next();

    const std::optional<MetaRecord>& meta() const noexcept { return meta_; }
    const std::string& name() const noexcept { return name_; }
    std::uint64_t lines_read() const noexcept { return line_no_; }
    std::uint64_t bytes_read() const noexcept { return bytes_; }
    std::uint64_t events_read() const noexcept { return events_; }
    std::uint64_t dropped_out_of_order() const noexcept { return dropped_; }
    std::uint64_t skipped_malformed() const noexcept { return skipped_; }
    const std::map<FuncId, std::string>& function_names() const noexcept { return names_; }

private:
    std::unique_ptr<LineSource> source_;
    ReaderOptions options_;
    std::string name_;
    std::string line_;
    std::optional<MetaRecord> meta_;
    std::map<StreamKey, Micros> last_ts_;
    std::map<FuncId, std::string> names_;
    std::uint64_t line_no_ = 0;
    std::uint64_t bytes_ = 0;
    std::uint64_t events_ = 0;
    std::uint64_t dropped_ = 0;
    std::uint64_t skipped_ = 0;
};

} // namespace tracead

#endif
