#include "tracead/trace_stream.hpp"

#include "tracead/error.hpp"
#include "tracead/net.hpp"

#include <fstream>
#include <iostream>

namespace tracead {

namespace {

class IstreamSource final : public LineSource {
public:
    explicit IstreamSource(std::unique_ptr<std::istream> in) : in_(std::move(in)) { }
    bool next_line(std::string& line) override { return static_cast<bool>(std::getline(*in_, line)); }

private:
    std::unique_ptr<std::istream> in_;
};

class StdinSource final : public LineSource {
public:
    bool next_line(std::string& line) override { return static_cast<bool>(std::getline(std::cin, line)); }
};

class SocketSource final : public LineSource {
public:
    explicit SocketSource(net::LineConnection conn) : conn_(std::move(conn)) { }

    bool next_line(std::string& line) override
    {
        auto l = conn_.recv_line();
        if (!l) {
            return false;
        }
        line = std::move(*l);
        return true;
    }

private:
    net::LineConnection conn_;
};

} // namespace

std::unique_ptr<LineSource> make_istream_source(std::unique_ptr<std::istream> in)
{
    return std::make_unique<IstreamSource>(std::move(in));
}

TraceReader::TraceReader(std::unique_ptr<LineSource> source, ReaderOptions options, std::string name)
    : source_(std::move(source))
    , options_(options)
    , name_(std::move(name))
{
}

TraceReader TraceReader::open(const std::string& source, ReaderOptions options)
{
    if (source == "-") {
        return TraceReader(std::make_unique<StdinSource>(), options, "<stdin>");
    }
    if (source.starts_with("tcp://")) {
        auto conn = net::LineConnection::connect(net::parse_endpoint(source), std::chrono::seconds(10));
        return TraceReader(std::make_unique<SocketSource>(std::move(conn)), options, source);
    }
    auto in = std::make_unique<std::ifstream>(source, std::ios::binary);
    if (!*in) {
        throw DataError("cannot open trace source " + source);
    }
    return TraceReader(make_istream_source(std::move(in)), options, source);
}

std::optional<TraceEvent> TraceReader::next()
{
    while (source_->next_line(line_)) {
        ++line_no_;
        bytes_ += line_.size() + 1;
        if (line_.empty() || line_ == "\r") {
            continue;
        }
        TraceRecord rec;
        try {
            rec = decode_record(line_, line_no_);
        } catch (const MalformedRecord&) {
            if (options_.malformed == MalformedPolicy::Skip) {
                ++skipped_;
                continue;
            }
            throw;
        }
        if (auto* m = std::get_if<MetaRecord>(&rec)) {
            for (const auto& [fid, fname] : m->fmap) {
                names_.emplace(fid, fname);
            }
            meta_ = std::move(*m);
            continue;
        }
        auto& e = std::get<TraceEvent>(rec);
        if (const auto* f = std::get_if<FuncPayload>(&e.payload)) {
            auto [it, inserted] = names_.try_emplace(f->func_id, f->func_name);
            if (!inserted && it->second != f->func_name) {
                MalformedRecord err(line_no_,
                    "fid " + std::to_string(f->func_id) + " renamed from '" + it->second + "' to '"
                        + f->func_name + "'");
                if (options_.malformed == MalformedPolicy::Skip) {
                    ++skipped_;
                    continue;
                }
                throw err;
            }
        }
        auto key = e.stream();
        auto [it, inserted] = last_ts_.try_emplace(key, e.timestamp_us);
        if (!inserted) {
            if (e.timestamp_us < it->second) {
                if (options_.ordering == OrderingPolicy::Skip) {
                    ++dropped_;
                    continue;
                }
                throw OrderingViolation(key.to_string(), it->second, e.timestamp_us);
            }
            it->second = e.timestamp_us;
        }
        ++events_;
        return std::move(e);
    }
    return std::nullopt;
}

} // namespace tracead
