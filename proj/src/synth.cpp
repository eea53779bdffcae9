#include "tracead/synth.hpp"

#include "tracead/error.hpp"
#include "tracead/records.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

namespace tracead::synth {

namespace {

enum class EvKind : std::uint8_t { Entry, Exit, Send, Recv };

struct Ev {
    Micros ts = 0;
    std::uint32_t thread = 0;
    EvKind kind = EvKind::Entry;
    bool injected = false;
    FuncId fid = 0;
    std::uint32_t partner = 0;
    std::int64_t tag = 0;
    std::uint64_t bytes = 0;
};

class ThreadGen {
public:
    ThreadGen(const SynthSpec& spec, std::uint32_t app, std::uint32_t rank, std::uint32_t thread)
        : spec_(spec)
        , rank_(rank)
        , thread_(thread)
    {
        std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32), app,
            rank, thread, 0x7ace5u};
        rng_.seed(seq);
    }

    void run(std::vector<Ev>& out)
    {
        const auto duration = static_cast<Micros>(std::llround(spec_.flush_interval_s * 1e6)) * spec_.steps;
        std::uniform_int_distribution<Micros> start(0, 100);
        Micros t = start(rng_);
        while (t < duration) {
            t = call(spec_.root, t, out) + spec_.idle_between_iterations_us;
            ++iteration_;
        }
    }

private:
    Micros call(FuncId fid, Micros t0, std::vector<Ev>& out)
    {
        const FunctionSpec& f = spec_.function(fid);
        const std::size_t entry_index = out.size();
        out.push_back(Ev{t0, thread_, EvKind::Entry, false, fid});

        const double rate = f.anomaly_rate.value_or(spec_.anomaly_rate);
        const bool injected = rate > 0.0 && std::bernoulli_distribution(rate)(rng_);
        double self = std::lognormal_distribution<double>(std::log(f.median_self_us), f.sigma_log)(rng_);
        if (injected && spec_.anomaly_kind == AnomalyKind::Short) {
            self /= spec_.multiplier;
        }
        out[entry_index].injected = injected;

        std::vector<FuncId> items;
        for (const auto& rule : f.children) {
            items.insert(items.end(), rule.repeat, rule.child);
        }
        const std::size_t n_items = items.size() + f.messages;
        const auto self_us = static_cast<Micros>(std::max<long long>(1, std::llround(self)));
        const Micros gap = self_us / (n_items + 1);
        const Micros last_gap = self_us - gap * n_items;

        Micros t = t0;
        for (FuncId child : items) {
            t += gap;
            t = call(child, t, out);
        }
        for (std::uint32_t m = 0; m < f.messages; ++m) {
            t += gap;
            Ev ev{t, thread_, m % 2 == 0 ? EvKind::Send : EvKind::Recv, false, fid};
            ev.partner = partner();
            ev.tag = static_cast<std::int64_t>(iteration_ % 1000);
            ev.bytes = 1024ull * (1 + (rng_() % 8));
            out.push_back(ev);
        }
        t += last_gap;
        out.push_back(Ev{t, thread_, EvKind::Exit, false, fid});

        if (injected && spec_.anomaly_kind == AnomalyKind::Delay) {
            const Micros inclusive = t - t0;
            const auto delay = static_cast<Micros>(std::llround((spec_.multiplier - 1.0) * static_cast<double>(inclusive)));
            for (std::size_t i = entry_index + 1; i < out.size(); ++i) {
                out[i].ts += delay;
            }
            t += delay;
        }
        return t;
    }

    std::uint32_t partner()
    {
        const std::uint32_t n = spec_.n_ranks;
        if (n <= 1) {
            return rank_;
        }
        if (std::bernoulli_distribution(spec_.random_partner_rate)(rng_)) {
            std::uniform_int_distribution<std::uint32_t> pick(0, n - 2);
            const std::uint32_t p = pick(rng_);
            return p >= rank_ ? p + 1 : p;
        }
        return (rank_ + 1) % n;
    }

    const SynthSpec& spec_;
    std::uint32_t rank_;
    std::uint32_t thread_;
    std::mt19937_64 rng_;
    std::uint64_t iteration_ = 0;
};

} // namespace

void SynthSpec::validate() const
{
    auto fail = [](const std::string& msg) { throw InvalidConfig("invalid synth spec: " + msg); };
    if (n_apps == 0 || n_ranks == 0 || n_threads == 0) {
        fail("n_apps, n_ranks and n_threads must be positive");
    }
    if (!(anomaly_rate >= 0.0 && anomaly_rate <= 1.0)) {
        fail("anomaly rate outside [0,1]");
    }
    if (!(random_partner_rate >= 0.0 && random_partner_rate <= 1.0)) {
        fail("partner probability outside [0,1]");
    }
    if (!(multiplier > 1.0)) {
        fail("multiplier must exceed 1");
    }
    if (!(flush_interval_s > 0.0)) {
        fail("flush interval must be positive");
    }
    std::set<FuncId> ids;
    for (const auto& f : functions) {
        if (!ids.insert(f.fid).second) {
            fail("duplicate function id " + std::to_string(f.fid));
        }
        if (!(f.median_self_us > 0.0) || !(f.sigma_log >= 0.0)) {
            fail("function " + f.name + " has a non-positive median or negative sigma");
        }
        if (f.anomaly_rate && !(*f.anomaly_rate >= 0.0 && *f.anomaly_rate <= 1.0)) {
            fail("function " + f.name + " anomaly rate outside [0,1]");
        }
    }
    if (ids.count(root) == 0) {
        fail("root function " + std::to_string(root) + " is not defined");
    }
    // Depth-first walk from the root; a function on the current path again is recursion.
    std::vector<FuncId> path;
    auto visit = [&](auto&& self, FuncId fid) -> void {
        if (std::find(path.begin(), path.end(), fid) != path.end()) {
            fail("recursive grammar through function " + std::to_string(fid));
        }
        if (ids.count(fid) == 0) {
            fail("unknown child function " + std::to_string(fid));
        }
        path.push_back(fid);
        for (const auto& rule : function(fid).children) {
            self(self, rule.child);
        }
        path.pop_back();
    };
    visit(visit, root);
}

const FunctionSpec& SynthSpec::function(FuncId fid) const
{
    for (const auto& f : functions) {
        if (f.fid == fid) {
            return f;
        }
    }
    throw InvalidConfig("unknown function " + std::to_string(fid));
}

SynthSpec default_spec()
{
    SynthSpec s;
    s.root = 1;
    s.functions = {
        {1, "MD_NEWTON", 3000.0, 0.1, {{2, 1}, {3, 1}, {4, 2}, {5, 1}, {6, 1}}, 0, std::nullopt},
        {2, "MD_FINIT", 80.0, 0.1, {}, 0, std::nullopt},
        {3, "MD_FORCES", 100.0, 0.1, {}, 0, std::nullopt},
        {4, "SP_GETXBL", 90.0, 0.1, {}, 2, std::nullopt},
        {5, "CF_CMS", 70.0, 0.1, {}, 1, std::nullopt},
        {6, "MD_UPDATE", 60.0, 0.1, {}, 0, std::nullopt},
    };
    return s;
}

fs::path trace_file_name(std::uint32_t app, std::uint32_t rank)
{
    return "app" + std::to_string(app) + "_rank" + std::to_string(rank) + ".trace";
}

std::string encode_truth(const GroundTruth& t)
{
    std::string out = "{\"type\":\"TRUTH\",\"app\":" + std::to_string(t.app) + ",\"rank\":" + std::to_string(t.rank)
        + ",\"span\":" + std::to_string(t.span) + ",\"fid\":" + std::to_string(t.func_id)
        + ",\"thread\":" + std::to_string(t.thread) + ",\"entry\":" + std::to_string(t.entry_us) + "}";
    return out;
}

GroundTruth decode_truth(std::string_view line)
{
    try {
        const auto j = nlohmann::json::parse(line);
        if (records::get_str(j, "type") != "TRUTH") {
            throw DataError("not a ground-truth record");
        }
        GroundTruth t;
        t.app = static_cast<std::uint32_t>(records::get_u64(j, "app"));
        t.rank = static_cast<std::uint32_t>(records::get_u64(j, "rank"));
        t.span = records::get_u64(j, "span");
        t.func_id = static_cast<FuncId>(records::get_u64(j, "fid"));
        t.thread = static_cast<std::uint32_t>(records::get_u64(j, "thread"));
        t.entry_us = records::get_u64(j, "entry");
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed ground-truth record: ") + e.what());
    } catch (const ProtocolError& e) {
        throw DataError(std::string("malformed ground-truth record: ") + e.what());
    }
}

RankTrace generate_rank(const SynthSpec& spec, std::uint32_t app, std::uint32_t rank)
{
    spec.validate();
    std::vector<Ev> events;
    for (std::uint32_t th = 0; th < spec.n_threads; ++th) {
        ThreadGen(spec, app, rank, th).run(events);
    }
    if (spec.n_threads > 1) {
        std::stable_sort(events.begin(), events.end(), [](const Ev& a, const Ev& b) { return a.ts < b.ts; });
    }

    RankTrace out;
    out.app = app;
    out.rank = rank;
    MetaRecord meta;
    meta.run_id = spec.run_id;
    for (const auto& f : spec.functions) {
        meta.fmap[f.fid] = f.name;
    }
    out.text = encode_meta(meta);
    out.text.reserve(events.size() * 96);

    SpanId next_span = 1;
    TraceEvent te;
    te.app = app;
    te.rank = rank;
    for (const Ev& ev : events) {
        te.thread = ev.thread;
        te.timestamp_us = ev.ts;
        switch (ev.kind) {
        case EvKind::Entry:
        case EvKind::Exit: {
            FuncPayload p;
            p.func_id = ev.fid;
            p.func_name = spec.function(ev.fid).name;
            p.kind = ev.kind == EvKind::Entry ? FuncKind::Entry : FuncKind::Exit;
            te.payload = std::move(p);
            if (ev.kind == EvKind::Entry) {
                if (ev.injected) {
                    out.truth.push_back(GroundTruth{app, rank, next_span, ev.fid, ev.thread, ev.ts});
                }
                ++next_span;
                ++out.spans;
            }
            break;
        }
        case EvKind::Send:
        case EvKind::Recv:
            te.payload = CommPayload{ev.kind == EvKind::Send ? CommKind::Send : CommKind::Recv, ev.partner, ev.tag,
                ev.bytes};
            break;
        }
        encode_event(te, out.text);
        ++out.events;
    }
    return out;
}

SynthOutput generate(const SynthSpec& spec, const fs::path& out_dir)
{
    spec.validate();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) {
        throw StorageError("cannot create " + out_dir.string() + ": " + ec.message());
    }
    SynthOutput out;
    out.truth_file = out_dir / "truth.jsonl";
    std::ofstream truth(out.truth_file, std::ios::binary | std::ios::trunc);
    if (!truth) {
        throw StorageError("cannot write " + out.truth_file.string());
    }
    for (std::uint32_t app = 0; app < spec.n_apps; ++app) {
        for (std::uint32_t rank = 0; rank < spec.n_ranks; ++rank) {
            RankTrace rt = generate_rank(spec, app, rank);
            const fs::path path = out_dir / trace_file_name(app, rank);
            std::ofstream f(path, std::ios::binary | std::ios::trunc);
            f.write(rt.text.data(), static_cast<std::streamsize>(rt.text.size()));
            if (!f) {
                throw StorageError("cannot write " + path.string());
            }
            for (const auto& t : rt.truth) {
                truth << encode_truth(t) << '\n';
            }
            out.trace_files.push_back(path);
            out.spans += rt.spans;
            out.events += rt.events;
            out.bytes += rt.text.size();
            out.truth.insert(out.truth.end(), rt.truth.begin(), rt.truth.end());
        }
    }
    truth.flush();
    if (!truth) {
        throw StorageError("cannot write " + out.truth_file.string());
    }
    return out;
}

std::vector<GroundTruth> read_truth(const fs::path& file)
{
    std::ifstream in(file, std::ios::binary);
    if (!in) {
        throw StorageError("cannot read " + file.string());
    }
    std::vector<GroundTruth> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) {
            out.push_back(decode_truth(line));
        }
    }
    return out;
}

} // namespace tracead::synth
