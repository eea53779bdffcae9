#include "tracead/pipeline.hpp"

#include "tracead/error.hpp"
#include "tracead/param_server.hpp"
#include "tracead/provenance.hpp"
#include "tracead/records.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <deque>
#include <exception>
#include <fstream>
#include <memory>
#include <span>
#include <thread>
#include <unistd.h>
#include <unordered_map>

namespace tracead {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

} // namespace

RankPipeline::RankPipeline(TraceReader reader, AssemblerOptions assembler, Micros flush_us)
    : reader_(std::move(reader))
    , assembler_(assembler)
    , flush_us_(flush_us)
{
    if (flush_us_ == 0) {
        throw InvalidConfig("flush interval must be positive");
    }
}

std::string RankPipeline::function_name(FuncId fid) const
{
    const auto& names = reader_.function_names();
    auto it = names.find(fid);
    return it == names.end() ? std::string() : it->second;
}

std::optional<StepBatch> RankPipeline::next_step()
{
    if (done_) {
        return std::nullopt;
    }
    auto read = [this] {
        pending_ = reader_.next();
        if (pending_) {
            ranks_.insert(pending_->stream().rank_key());
        }
    };
    if (!started_) {
        started_ = true;
        read();
        if (!pending_) {
            done_ = true;
            return std::nullopt;
        }
    }
    StepBatch batch;
    batch.window = {step_, step_ * flush_us_, (step_ + 1) * flush_us_};
    for (;;) {
        if (!pending_) {
            incomplete_ += assembler_.finalize().size();
            done_ = true;
            ++step_;
            return batch;
        }
        if (pending_->timestamp_us >= batch.window.t_end_us) {
            ++step_;
            return batch;
        }
        if (auto span = assembler_.push_event(*pending_)) {
            batch.spans.push_back(std::move(*span));
        }
        read();
    }
}

std::vector<std::string> trace_sources(const fs::path& dir)
{
    std::vector<std::string> out;
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) {
        throw DataError("not a trace directory: " + dir.string());
    }
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".trace") {
            out.push_back(e.path().string());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

namespace {

struct RankState {
    StatsMap local;
    StatsMap others;
    StatsMap own; ///< this rank's contribution acknowledged by the server
    std::deque<ps::StatsUpdateMsg> unacked;
    std::unordered_map<SpanId, Label> prev_labels;
    std::unordered_map<SpanId, Label> cur_labels;
    std::unique_ptr<prov::RankStoreWriter> writer;
};

/// Results of one thread of execution; merged after the run.
struct Collector {
    std::vector<LabeledSpan> labels;
    std::vector<AnomalyStepReport> reports;
    std::uint64_t records_written = 0;
    std::uint64_t spans_stored = 0;
    std::uint64_t unstored_bytes = 0;
    std::uint64_t spans = 0;
    std::uint64_t anomalies = 0;
    std::uint64_t unsent = 0;
    std::vector<double> step_seconds;
};

class RunContext {
public:
    explicit RunContext(const RunOptions& options) : options_(options)
    {
        if (options_.out_dir) {
            prov_dir_ = *options_.out_dir / "prov";
        }
    }

    const RunOptions& options() const noexcept { return options_; }

    RankPipeline open(const std::string& source) const
    {
        return RankPipeline(
            TraceReader::open(source, options_.reader), options_.assembler, options_.cfg.flush_interval_us());
    }

    RankState& state(std::map<RankKey, RankState>& states, RankKey key) const
    {
        auto it = states.find(key);
        if (it == states.end()) {
            it = states.emplace(key, RankState{}).first;
            if (prov_dir_) {
                it->second.writer = std::make_unique<prov::RankStoreWriter>(*prov_dir_, key);
            }
        }
        return it->second;
    }

    /// Provenance, label rows and counters for one labeled (rank, step).
    void finish(RankState& st, const RankPipeline& pipe, StepId step, std::span<const ExecSpan> spans,
        Collector& c) const
    {
        st.prev_labels.swap(st.cur_labels);
        st.cur_labels.clear();
        std::uint64_t anomalies = 0;
        for (const auto& s : spans) {
            st.cur_labels.emplace(s.span_id, s.label);
            anomalies += s.label == Label::Anomaly ? 1 : 0;
        }
        c.spans += spans.size();
        c.anomalies += anomalies;
        if (options_.collect_labels) {
            for (const auto& s : spans) {
                c.labels.push_back(LabeledSpan{s.app, s.rank, s.span_id, s.thread, s.func_id, s.parent_span, step,
                    s.entry_us, s.inclusive_us, s.exclusive_us, s.label});
            }
        }
        if (anomalies == 0) {
            return;
        }
        auto names = [&pipe](FuncId fid) { return pipe.function_name(fid); };
        auto labels = [&st](SpanId id) {
            if (auto it = st.cur_labels.find(id); it != st.cur_labels.end()) {
                return it->second;
            }
            if (auto it = st.prev_labels.find(id); it != st.prev_labels.end()) {
                return it->second;
            }
            return Label::Unlabeled;
        };
        const auto records = prov::build_records(spans, options_.cfg, step, names, labels);
        if (st.writer) {
            c.records_written += st.writer->write_records(records);
        } else {
            c.records_written += records.size();
            for (const auto& r : records) {
                c.unstored_bytes += prov::encode_record(r).size() + 1;
            }
        }
        for (const auto& r : records) {
            c.spans_stored += r.span_count();
        }
    }

private:
    const RunOptions& options_;
    std::optional<fs::path> prov_dir_;
};

std::map<RankKey, std::vector<ExecSpan>> split_by_rank(std::vector<ExecSpan>&& spans, const std::set<RankKey>& ranks)
{
    std::map<RankKey, std::vector<ExecSpan>> out;
    for (const RankKey k : ranks) {
        out[k];
    }
    for (auto& s : spans) {
        out[s.rank_key()].push_back(std::move(s));
    }
    return out;
}

void run_central(const std::vector<std::string>& sources, const RunContext& ctx,
    std::vector<RankPipeline>& pipes, Collector& c)
{
    const ADConfig& cfg = ctx.options().cfg;
    for (const auto& src : sources) {
        pipes.push_back(ctx.open(src));
    }
    std::map<RankKey, RankState> states;
    StatsMap global;
    for (;;) {
        std::vector<std::pair<std::size_t, StepBatch>> batches;
        for (std::size_t i = 0; i < pipes.size(); ++i) {
            if (auto b = pipes[i].next_step()) {
                batches.emplace_back(i, std::move(*b));
            }
        }
        if (batches.empty()) {
            break;
        }
        const auto t0 = Clock::now();
        std::vector<ExecSpan> all;
        std::vector<std::size_t> bounds{0};
        for (auto& [i, b] : batches) {
            std::move(b.spans.begin(), b.spans.end(), std::back_inserter(all));
            bounds.push_back(all.size());
        }
        accumulate(all, global, cfg.metric);
        label_spans(all, global, nullptr, cfg);

        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const auto& [pi, b] = batches[bi];
            const RankPipeline& pipe = pipes[pi];
            std::vector<ExecSpan> mine(std::make_move_iterator(all.begin() + bounds[bi]),
                std::make_move_iterator(all.begin() + bounds[bi + 1]));
            for (auto& [key, spans] : split_by_rank(std::move(mine), pipe.ranks())) {
                AnomalyStepReport r;
                r.app = key.app;
                r.rank = key.rank;
                r.step_id = b.window.step_id;
                r.t_begin_us = b.window.t_begin_us;
                r.t_end_us = b.window.t_end_us;
                r.n_spans = spans.size();
                for (const auto& s : spans) {
                    r.n_anomalies += s.label == Label::Anomaly ? 1 : 0;
                    r.per_function.try_emplace(s.func_id, global.at(s.func_id));
                }
                ctx.finish(ctx.state(states, key), pipe, b.window.step_id, spans, c);
                c.reports.push_back(std::move(r));
            }
        }
        c.step_seconds.push_back(seconds_since(t0));
    }
}

ps::FuncStatsMap to_wire(const StatsMap& stats, const RankPipeline& pipe)
{
    ps::FuncStatsMap out;
    for (const auto& [fid, s] : stats) {
        out.emplace(fid, ps::FuncStats{s, pipe.function_name(fid)});
    }
    return out;
}

/// Sends queued updates in order; stops at the first network failure and
/// keeps the rest for the next attempt.
bool flush_updates(RankState& st, ps::ParamServerClient& client)
{
    while (!st.unacked.empty()) {
        ps::SnapshotReply reply;
        try {
            reply = client.update(st.unacked.front());
        } catch (const NetworkError&) {
            return false;
        }
        for (const auto& [fid, fs] : st.unacked.front().stats) {
            st.own[fid] = merge_stats(st.own[fid], fs.stats);
        }
        for (const auto& [fid, fs] : reply.stats) {
            auto own = st.own.find(fid);
            RunStats others = own == st.own.end() ? fs.stats : unmerge_stats(fs.stats, own->second);
            if (others.empty()) {
                st.others.erase(fid);
            } else {
                st.others[fid] = others;
            }
        }
        st.unacked.pop_front();
    }
    return true;
}

void run_worker(std::uint32_t w, const std::vector<std::string>& sources, const RunContext& ctx,
    const net::Endpoint& ps_ep, std::vector<RankPipeline>& pipes, Collector& c)
{
    const RunOptions& opt = ctx.options();
    const ADConfig& cfg = opt.cfg;
    for (const auto& src : sources) {
        pipes.push_back(ctx.open(src));
    }
    ps::ParamServerClient client(ps_ep);
    std::map<RankKey, RankState> states;
    bool any = true;
    while (any) {
        any = false;
        for (auto& pipe : pipes) {
            auto b = pipe.next_step();
            if (!b) {
                continue;
            }
            any = true;
            if (opt.before_step) {
                opt.before_step(w, b->window.step_id);
            }
            for (auto& [key, spans] : split_by_rank(std::move(b->spans), pipe.ranks())) {
                const auto t0 = Clock::now();
                RankState& st = ctx.state(states, key);
                StepResult res = process_step(std::move(spans), st.local, st.others.empty() ? nullptr : &st.others,
                    cfg, key, b->window);
                StatsMap delta;
                accumulate(res.spans, delta, cfg.metric);
                ctx.finish(st, pipe, b->window.step_id, res.spans, c);

                ps::StatsUpdateMsg msg;
                msg.app = key.app;
                msg.rank = key.rank;
                msg.step = b->window.step_id;
                msg.t_begin_us = b->window.t_begin_us;
                msg.t_end_us = b->window.t_end_us;
                msg.n_anomalies = res.report.n_anomalies;
                msg.n_spans = res.report.n_spans;
                msg.stats = to_wire(delta, pipe);
                st.unacked.push_back(std::move(msg));
                flush_updates(st, client);

                c.reports.push_back(std::move(res.report));
                c.step_seconds.push_back(seconds_since(t0));
            }
        }
    }
    for (auto& [key, st] : states) {
        for (int attempt = 0; attempt < 5 && !flush_updates(st, client); ++attempt) {
            std::this_thread::sleep_for(std::chrono::milliseconds(200));
        }
        c.unsent += st.unacked.size();
    }
}

void write_outputs(const fs::path& dir, const RunResult& r, const RunOptions& opt)
{
    auto open = [&](const char* name) {
        std::ofstream f(dir / name, std::ios::binary | std::ios::trunc);
        if (!f) {
            throw StorageError("cannot write " + (dir / name).string());
        }
        return f;
    };
    if (opt.collect_labels) {
        auto f = open("labels.jsonl");
        for (const auto& l : r.labels) {
            f << "{\"app\":" << l.app << ",\"rank\":" << l.rank << ",\"span\":" << l.span_id << ",\"fid\":" << l.func_id
              << ",\"step\":" << l.step << ",\"label\":\"" << label_code(l.label) << "\"}\n";
        }
    }
    {
        auto f = open("reports.jsonl");
        for (const auto& rep : r.reports) {
            f << records::step_report_to_json(rep).dump() << '\n';
        }
    }
    json summary{{"mode", opt.mode == RunMode::Central ? "central" : "distributed"}, {"workers", opt.workers},
        {"spans", r.spans}, {"anomalies", r.anomalies}, {"raw_bytes", r.raw_bytes},
        {"provenance_bytes", r.provenance_bytes}, {"records", r.records_written}, {"spans_stored", r.spans_stored},
        {"incomplete_spans", r.incomplete_spans}, {"mismatches", r.mismatches},
        {"dropped_out_of_order", r.dropped_out_of_order}, {"skipped_malformed", r.skipped_malformed},
        {"unsent_updates", r.unsent_updates}, {"wall_seconds", r.wall_seconds}};
    auto f = open("summary.json");
    f << summary.dump(2) << '\n';
}

std::string host_name()
{
    char buf[256] = {};
    if (::gethostname(buf, sizeof buf - 1) != 0) {
        return "localhost";
    }
    return buf;
}

prov::RunEnvironment run_environment(const std::vector<std::string>& sources, const RunOptions& options)
{
    prov::RunEnvironment env;
    env.run_id = options.run_id;
    std::error_code ec;
    if (!sources.empty() && fs::is_regular_file(sources.front(), ec)) {
        TraceReader reader = TraceReader::open(sources.front(), options.reader);
        reader.next();
        if (const auto& meta = reader.meta()) {
            if (env.run_id.empty()) {
                env.run_id = meta->run_id;
            }
            env.epoch_us = meta->epoch_us;
        }
    }
    if (env.run_id.empty()) {
        env.run_id = "run";
    }
    env.hosts = {host_name()};
    env.config = options.cfg;
    env.metadata = {{"mode", options.mode == RunMode::Central ? "central" : "distributed"},
        {"workers", std::to_string(options.mode == RunMode::Central ? 1 : options.workers)},
        {"sources", std::to_string(sources.size())}};
    return env;
}

} // namespace

RunResult run_offline(const std::vector<std::string>& sources, const RunOptions& options)
{
    options.cfg.validate();
    if (options.mode == RunMode::Distributed && options.workers == 0) {
        throw InvalidConfig("distributed mode needs at least one worker");
    }
    const auto t_start = Clock::now();
    RunContext ctx(options);
    if (options.out_dir) {
        std::error_code ec;
        fs::create_directories(*options.out_dir / "prov", ec);
        if (ec) {
            throw StorageError("cannot create " + options.out_dir->string() + ": " + ec.message());
        }
        prov::ProvenanceStore(*options.out_dir / "prov").write_environment(run_environment(sources, options));
    }

    std::vector<Collector> collectors;
    std::vector<std::vector<RankPipeline>> pipes;
    RunResult result;

    if (options.mode == RunMode::Central) {
        collectors.resize(1);
        pipes.resize(1);
        run_central(sources, ctx, pipes[0], collectors[0]);
        result.worker_seconds.push_back(seconds_since(t_start));
    } else {
        const std::uint32_t w_count = options.workers;
        std::vector<std::vector<std::string>> assigned(w_count);
        for (std::size_t i = 0; i < sources.size(); ++i) {
            assigned[i % w_count].push_back(sources[i]);
        }
        std::unique_ptr<ps::ParamServer> server;
        net::Endpoint ps_ep;
        if (options.param_server) {
            ps_ep = *options.param_server;
        } else {
            ps::ServerOptions so;
            so.push_interval_s = options.push_interval_s;
            if (options.viz) {
                so.push_sink = ps::http_push_sink(*options.viz);
            }
            server = std::make_unique<ps::ParamServer>(so);
            server->start();
            ps_ep = server->endpoint();
        }
        collectors.resize(w_count);
        pipes.resize(w_count);
        result.worker_seconds.assign(w_count, 0.0);
        std::vector<std::exception_ptr> errors(w_count);
        std::vector<std::thread> threads;
        for (std::uint32_t w = 0; w < w_count; ++w) {
            if (assigned[w].empty()) {
                continue;
            }
            threads.emplace_back([&, w] {
                try {
                    run_worker(w, assigned[w], ctx, ps_ep, pipes[w], collectors[w]);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
                result.worker_seconds[w] = seconds_since(t_start);
            });
        }
        for (auto& t : threads) {
            t.join();
        }
        if (server) {
            if (options.viz) {
                server->push_tick();
            }
            server->stop();
        }
        for (auto& e : errors) {
            if (e) {
                std::rethrow_exception(e);
            }
        }
    }

    std::uint64_t unstored = 0;
    for (auto& c : collectors) {
        std::move(c.labels.begin(), c.labels.end(), std::back_inserter(result.labels));
        std::move(c.reports.begin(), c.reports.end(), std::back_inserter(result.reports));
        result.step_seconds.insert(result.step_seconds.end(), c.step_seconds.begin(), c.step_seconds.end());
        result.records_written += c.records_written;
        result.spans_stored += c.spans_stored;
        result.spans += c.spans;
        result.anomalies += c.anomalies;
        result.unsent_updates += c.unsent;
        unstored += c.unstored_bytes;
    }
    for (const auto& group : pipes) {
        for (const auto& p : group) {
            result.raw_bytes += p.reader().bytes_read();
            result.incomplete_spans += p.incomplete_spans();
            result.mismatches += p.mismatches();
            result.dropped_out_of_order += p.reader().dropped_out_of_order();
            result.skipped_malformed += p.reader().skipped_malformed();
        }
    }
    std::sort(result.labels.begin(), result.labels.end(), [](const LabeledSpan& a, const LabeledSpan& b) {
        return std::tie(a.app, a.rank, a.span_id) < std::tie(b.app, b.rank, b.span_id);
    });
    std::sort(result.reports.begin(), result.reports.end(), [](const AnomalyStepReport& a, const AnomalyStepReport& b) {
        return std::tie(a.app, a.rank, a.step_id) < std::tie(b.app, b.rank, b.step_id);
    });

    if (options.out_dir) {
        prov::ProvenanceStore store(*options.out_dir / "prov");
        result.provenance_bytes = store.total_bytes();
        result.wall_seconds = seconds_since(t_start);
        write_outputs(*options.out_dir, result, options);
    } else {
        result.provenance_bytes = unstored;
        result.wall_seconds = seconds_since(t_start);
    }
    return result;
}

} // namespace tracead
