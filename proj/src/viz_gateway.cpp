#include "tracead/viz_gateway.hpp"

#include "tracead/error.hpp"
#include "tracead/records.hpp"

#include <httplib.h>

#include <algorithm>
#include <charconv>
#include <limits>
#include <sstream>
#include <tuple>
#include <unordered_map>

namespace tracead::viz {

using nlohmann::json;

std::optional<RankStat> parse_rank_stat(std::string_view s) noexcept
{
    if (s == "avg") {
        return RankStat::Avg;
    }
    if (s == "std") {
        return RankStat::Std;
    }
    if (s == "max") {
        return RankStat::Max;
    }
    if (s == "min") {
        return RankStat::Min;
    }
    if (s == "total") {
        return RankStat::Total;
    }
    return std::nullopt;
}

double stat_value(const RankSummary& s, RankStat stat) noexcept
{
    switch (stat) {
    case RankStat::Avg:
        return s.avg;
    case RankStat::Std:
        return s.std;
    case RankStat::Max:
        return s.max;
    case RankStat::Min:
        return s.min;
    case RankStat::Total:
        return static_cast<double>(s.total);
    }
    return 0.0;
}

namespace {

constexpr std::pair<Axis, std::string_view> axis_names[] = {
    {Axis::Fid, "fid"},
    {Axis::Entry, "entry"},
    {Axis::Exit, "exit"},
    {Axis::Inclusive, "inclusive"},
    {Axis::Exclusive, "exclusive"},
    {Axis::Label, "label"},
    {Axis::NChildren, "n_children"},
    {Axis::NMessages, "n_messages"},
};

} // namespace

std::optional<Axis> parse_axis(std::string_view s) noexcept
{
    for (const auto& [a, name] : axis_names) {
        if (name == s) {
            return a;
        }
    }
    return std::nullopt;
}

std::string_view to_string(Axis a) noexcept
{
    for (const auto& [x, name] : axis_names) {
        if (x == a) {
            return name;
        }
    }
    return "?";
}

double axis_value(const ExecSpan& s, Axis a) noexcept
{
    switch (a) {
    case Axis::Fid:
        return s.func_id;
    case Axis::Entry:
        return static_cast<double>(s.entry_us);
    case Axis::Exit:
        return static_cast<double>(s.exit_us);
    case Axis::Inclusive:
        return static_cast<double>(s.inclusive_us);
    case Axis::Exclusive:
        return static_cast<double>(s.exclusive_us);
    case Axis::Label:
        return s.label == Label::Anomaly ? 1.0 : 0.0;
    case Axis::NChildren:
        return s.n_children;
    case Axis::NMessages:
        return s.n_messages;
    }
    return 0.0;
}

std::optional<std::pair<std::uint64_t, AnomalyStepReport>> Subscription::next(std::chrono::milliseconds timeout)
{
    std::unique_lock lk(mutex_);
    cv_.wait_for(lk, timeout, [this] { return !queue_.empty() || closed_; });
    if (queue_.empty()) {
        return std::nullopt;
    }
    auto item = std::move(queue_.front());
    queue_.pop_front();
    return item;
}

void Subscription::close()
{
    {
        std::lock_guard lk(mutex_);
        closed_ = true;
    }
    cv_.notify_all();
}

bool Subscription::closed() const
{
    std::lock_guard lk(mutex_);
    return closed_;
}

void Subscription::deliver(std::uint64_t version, const AnomalyStepReport& r)
{
    {
        std::lock_guard lk(mutex_);
        if (closed_) {
            return;
        }
        queue_.emplace_back(version, r);
    }
    cv_.notify_all();
}

RankSummary GatewayState::summarize(RankKey key, const RankData& d)
{
    RankSummary s;
    s.app = key.app;
    s.rank = key.rank;
    s.n_steps = d.counts.n();
    s.total = d.total;
    if (!d.counts.empty()) {
        s.avg = d.counts.mean();
        s.std = d.counts.stddev();
        s.min = d.counts.min();
        s.max = d.counts.max();
    }
    return s;
}

bool GatewayState::ingest_push(const ps::VizPushMsg& msg)
{
    std::lock_guard lk(mutex_);
    if (any_version_ && msg.version <= version_) {
        return false;
    }
    any_version_ = true;
    version_ = msg.version;
    std::vector<std::shared_ptr<Subscription>> live;
    for (auto it = subs_.begin(); it != subs_.end();) {
        auto sp = it->lock();
        if (!sp || sp->closed()) {
            it = subs_.erase(it);
        } else {
            live.push_back(std::move(sp));
            ++it;
        }
    }
    for (const auto& r : msg.reports) {
        RankData& d = ranks_[r.rank_key()];
        if (!d.steps.emplace(r.step_id, r).second) {
            continue;
        }
        d.counts.add(static_cast<double>(r.n_anomalies));
        d.total += r.n_anomalies;
        for (const auto& sub : live) {
            if (sub->selection().count(r.rank_key()) != 0) {
                sub->deliver(msg.version, r);
            }
        }
    }
    return true;
}

std::uint64_t GatewayState::version() const
{
    std::lock_guard lk(mutex_);
    return version_;
}

std::optional<RankSummary> GatewayState::summary(RankKey key) const
{
    std::lock_guard lk(mutex_);
    auto it = ranks_.find(key);
    if (it == ranks_.end()) {
        return std::nullopt;
    }
    return summarize(key, it->second);
}

std::vector<RankSummary> GatewayState::summaries() const
{
    std::lock_guard lk(mutex_);
    std::vector<RankSummary> out;
    for (const auto& [key, d] : ranks_) {
        out.push_back(summarize(key, d));
    }
    return out;
}

Ranking GatewayState::rank_ranking(RankStat stat, std::size_t n) const
{
    if (n == 0) {
        throw InvalidConfig("ranking size must be at least 1");
    }
    std::vector<RankSummary> all = summaries();
    auto by_key = [](const RankSummary& a, const RankSummary& b) { return a.rank_key() < b.rank_key(); };
    Ranking out;
    out.top = all;
    std::stable_sort(out.top.begin(), out.top.end(), [&](const RankSummary& a, const RankSummary& b) {
        const double va = stat_value(a, stat);
        const double vb = stat_value(b, stat);
        return va != vb ? va > vb : by_key(a, b);
    });
    out.bottom = std::move(all);
    std::stable_sort(out.bottom.begin(), out.bottom.end(), [&](const RankSummary& a, const RankSummary& b) {
        const double va = stat_value(a, stat);
        const double vb = stat_value(b, stat);
        return va != vb ? va < vb : by_key(a, b);
    });
    out.top.resize(std::min(n, out.top.size()));
    out.bottom.resize(std::min(n, out.bottom.size()));
    return out;
}

std::vector<AnomalyStepReport> GatewayState::steps(RankKey key) const
{
    std::lock_guard lk(mutex_);
    std::vector<AnomalyStepReport> out;
    if (auto it = ranks_.find(key); it != ranks_.end()) {
        for (const auto& [step, r] : it->second.steps) {
            out.push_back(r);
        }
    }
    return out;
}

bool GatewayState::has_step(RankKey key, StepId step) const
{
    std::lock_guard lk(mutex_);
    auto it = ranks_.find(key);
    return it != ranks_.end() && it->second.steps.count(step) != 0;
}

std::shared_ptr<Subscription> GatewayState::step_series(std::set<RankKey> selection)
{
    if (selection.empty()) {
        throw InvalidConfig("step series needs a non-empty selection");
    }
    auto sub = std::make_shared<Subscription>(std::move(selection));
    std::lock_guard lk(mutex_);
    // History is queued under the state lock so no live report can slip in between.
    for (const RankKey key : sub->selection()) {
        if (auto it = ranks_.find(key); it != ranks_.end()) {
            for (const auto& [step, r] : it->second.steps) {
                sub->deliver(version_, r);
            }
        }
    }
    subs_.push_back(sub);
    return sub;
}

std::size_t GatewayState::subscriber_count() const
{
    std::lock_guard lk(mutex_);
    std::size_t n = 0;
    for (const auto& w : subs_) {
        if (auto sp = w.lock(); sp && !sp->closed()) {
            ++n;
        }
    }
    return n;
}

void GatewayState::close_subscriptions()
{
    std::lock_guard lk(mutex_);
    for (const auto& w : subs_) {
        if (auto sp = w.lock()) {
            sp->close();
        }
    }
    subs_.clear();
}

std::vector<Projection> function_view(const prov::ProvenanceStore& store, const GatewayState* state,
    std::uint32_t app, std::uint32_t rank, StepId step, Axis x, Axis y)
{
    prov::QueryFilter f;
    f.app = app;
    f.rank = rank;
    f.steps = std::make_pair(step, step);
    const auto records = store.query(f);
    if (records.empty() && (state == nullptr || !state->has_step({app, rank}, step))) {
        throw UnknownStep("no step " + std::to_string(step) + " for app " + std::to_string(app) + " rank "
            + std::to_string(rank));
    }
    std::map<SpanId, ExecSpan> spans;
    auto put = [&](const ExecSpan& s) {
        ExecSpan c = s;
        c.ancestry.clear();
        c.descendants.clear();
        c.descendants_truncated = false;
        auto [it, inserted] = spans.emplace(c.span_id, std::move(c));
        if (!inserted && s.label == Label::Anomaly) {
            it->second.label = Label::Anomaly;
        }
    };
    for (const auto& r : records) {
        put(r.anomaly);
        for (const auto& s : r.context_before) {
            put(s);
        }
        for (const auto& s : r.context_after) {
            put(s);
        }
    }
    std::vector<Projection> out;
    out.reserve(spans.size());
    for (auto& [id, s] : spans) {
        out.push_back(Projection{axis_value(s, x), axis_value(s, y), std::move(s)});
    }
    std::stable_sort(out.begin(), out.end(), [](const Projection& a, const Projection& b) {
        return std::tie(a.span.entry_us, a.span.span_id) < std::tie(b.span.entry_us, b.span.span_id);
    });
    return out;
}

CallStackView callstack_view(const prov::ProvenanceStore& store, std::uint32_t app, std::uint32_t rank,
    Micros t0, Micros t1, SpanId focus)
{
    prov::QueryFilter f;
    f.app = app;
    f.rank = rank;
    const auto records = store.query(f);

    std::unordered_map<FuncId, std::string> names;
    std::map<SpanId, CallNode> nodes;
    std::map<SpanId, const ExecSpan*> full;
    auto put_span = [&](const ExecSpan& s) {
        names.emplace(s.func_id, s.func_name);
        CallNode n{s.span_id, s.parent_span, s.func_id, s.func_name, s.entry_us, s.exit_us, s.label};
        auto [it, inserted] = nodes.emplace(s.span_id, n);
        if (!inserted) {
            const Label keep = it->second.label == Label::Anomaly ? Label::Anomaly : s.label;
            it->second = n;
            it->second.label = keep;
        }
        auto [fit, fresh] = full.emplace(s.span_id, &s);
        if (!fresh && s.label == Label::Anomaly) {
            fit->second = &s;
        }
    };
    auto put_frame = [&](const SpanFrame& fr) {
        auto [it, inserted] = nodes.emplace(fr.span_id, CallNode{fr.span_id, fr.parent_span, fr.func_id, {},
                                                             fr.entry_us, fr.exit_us, fr.label});
        if (!inserted) {
            if (!it->second.exit_us && fr.exit_us) {
                it->second.exit_us = fr.exit_us;
            }
            if (it->second.label == Label::Unlabeled) {
                it->second.label = fr.label;
            }
        }
    };
    for (const auto& r : records) {
        for (const auto& [fid, name] : r.call_path) {
            names.emplace(fid, name);
        }
        for (const auto& [fid, name] : r.desc_names) {
            names.emplace(fid, name);
        }
        put_span(r.anomaly);
        for (const auto& s : r.context_before) {
            put_span(s);
        }
        for (const auto& s : r.context_after) {
            put_span(s);
        }
    }
    for (const auto& r : records) {
        for (const auto& fr : r.anomaly.ancestry) {
            put_frame(fr);
        }
        for (const auto& fr : r.anomaly.descendants) {
            put_frame(fr);
        }
    }
    auto focus_it = nodes.find(focus);
    if (focus_it == nodes.end()) {
        throw UnknownSpan("span " + std::to_string(focus) + " is not stored for app " + std::to_string(app)
            + " rank " + std::to_string(rank));
    }
    for (auto& [id, n] : nodes) {
        if (n.name.empty()) {
            if (auto it = names.find(n.func_id); it != names.end()) {
                n.name = it->second;
            }
        }
    }

    CallStackView view;
    std::vector<CallNode> ancestors;
    std::set<SpanId> seen{focus};
    for (auto p = focus_it->second.parent_span; p;) {
        auto it = nodes.find(*p);
        if (it == nodes.end() || !seen.insert(*p).second) {
            break;
        }
        ancestors.push_back(it->second);
        p = it->second.parent_span;
    }
    std::reverse(ancestors.begin(), ancestors.end());
    for (std::size_t i = 0; i < ancestors.size(); ++i) {
        ancestors[i].role = NodeRole::Ancestor;
        ancestors[i].depth = static_cast<int>(i) - static_cast<int>(ancestors.size());
        view.nodes.push_back(ancestors[i]);
    }
    CallNode fnode = focus_it->second;
    fnode.role = NodeRole::Focus;
    fnode.depth = 0;
    view.nodes.push_back(fnode);

    // Depth below the focus along stored parent links; 0 = not a descendant.
    std::map<SpanId, int> depth_memo;
    auto depth_below = [&](SpanId id) {
        std::vector<SpanId> chain;
        int d = 0;
        SpanId cur = id;
        for (;;) {
            if (cur == focus) {
                d = static_cast<int>(chain.size());
                break;
            }
            if (auto m = depth_memo.find(cur); m != depth_memo.end()) {
                d = m->second == 0 ? 0 : m->second + static_cast<int>(chain.size());
                break;
            }
            auto it = nodes.find(cur);
            if (it == nodes.end() || !it->second.parent_span || chain.size() > nodes.size()) {
                d = 0;
                chain.push_back(cur);
                for (SpanId c : chain) {
                    depth_memo[c] = 0;
                }
                return 0;
            }
            chain.push_back(cur);
            cur = *it->second.parent_span;
        }
        for (std::size_t i = 0; i < chain.size(); ++i) {
            depth_memo[chain[i]] = d == 0 ? 0 : d - static_cast<int>(i);
        }
        return d;
    };
    std::vector<CallNode> desc;
    for (const auto& [id, n] : nodes) {
        if (id == focus) {
            continue;
        }
        const int d = depth_below(id);
        if (d <= 0) {
            continue;
        }
        const Micros exit = n.exit_us.value_or(std::numeric_limits<Micros>::max());
        if (n.entry_us > t1 || exit < t0) {
            continue;
        }
        CallNode c = n;
        c.role = NodeRole::Descendant;
        c.depth = d;
        desc.push_back(std::move(c));
    }
    std::stable_sort(desc.begin(), desc.end(), [](const CallNode& a, const CallNode& b) {
        return std::tie(a.entry_us, a.span_id) < std::tie(b.entry_us, b.span_id);
    });
    view.nodes.insert(view.nodes.end(), desc.begin(), desc.end());

    if (auto fit = full.find(focus); fit != full.end()) {
        for (const auto& c : fit->second->comm) {
            view.comm.push_back(CommEdge{c.timestamp_us, c.kind, c.partner_rank});
        }
    }
    return view;
}

json summary_to_json(const RankSummary& s)
{
    return json{{"app", s.app}, {"rank", s.rank}, {"steps", s.n_steps}, {"avg", s.avg}, {"std", s.std},
        {"max", s.max}, {"min", s.min}, {"total", s.total}};
}

json projection_to_json(const Projection& p)
{
    json span = records::span_to_json(p.span);
    span["app"] = p.span.app;
    span["rank"] = p.span.rank;
    span["inc"] = p.span.inclusive_us;
    return json{{"x", p.x}, {"y", p.y}, {"span", std::move(span)}};
}

json callstack_to_json(const CallStackView& v)
{
    json nodes = json::array();
    for (const auto& n : v.nodes) {
        const char* role = n.role == NodeRole::Ancestor ? "ancestor" : n.role == NodeRole::Focus ? "focus" : "descendant";
        nodes.push_back(json{{"id", n.span_id}, {"parent", n.parent_span ? json(*n.parent_span) : json(nullptr)},
            {"fid", n.func_id}, {"name", n.name}, {"entry", n.entry_us},
            {"exit", n.exit_us ? json(*n.exit_us) : json(nullptr)}, {"label", std::string(1, label_code(n.label))},
            {"role", role}, {"depth", n.depth}});
    }
    json comm = json::array();
    for (const auto& c : v.comm) {
        comm.push_back(json{{"ts", c.timestamp_us}, {"kind", c.kind == CommKind::Send ? "SEND" : "RECV"},
            {"partner", c.partner_rank}});
    }
    return json{{"nodes", std::move(nodes)}, {"comm", std::move(comm)}};
}

namespace {

std::uint64_t param_u64(const httplib::Request& req, const char* key)
{
    if (!req.has_param(key)) {
        throw ProtocolError(std::string("missing query parameter '") + key + "'");
    }
    const std::string v = req.get_param_value(key);
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
        throw ProtocolError(std::string("query parameter '") + key + "' is not a non-negative integer");
    }
    return out;
}

std::uint32_t param_u32(const httplib::Request& req, const char* key)
{
    const std::uint64_t v = param_u64(req, key);
    if (v > std::numeric_limits<std::uint32_t>::max()) {
        throw ProtocolError(std::string("query parameter '") + key + "' is out of range");
    }
    return static_cast<std::uint32_t>(v);
}

/// "A:R,A:R,..."; a bare number is a rank of app 0.
std::set<RankKey> parse_selection(const std::string& s)
{
    std::set<RankKey> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) {
            continue;
        }
        RankKey key;
        const auto colon = item.find(':');
        auto num = [](std::string_view t) {
            std::uint32_t v = 0;
            auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
            if (ec != std::errc() || p != t.data() + t.size()) {
                throw ProtocolError("bad selection entry '" + std::string(t) + "'");
            }
            return v;
        };
        if (colon == std::string::npos) {
            key.rank = num(item);
        } else {
            key.app = num(std::string_view(item).substr(0, colon));
            key.rank = num(std::string_view(item).substr(colon + 1));
        }
        out.insert(key);
    }
    return out;
}

void reply_json(httplib::Response& res, const json& j, int status = 200)
{
    res.status = status;
    res.set_content(j.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, std::string_view code, std::string_view message)
{
    reply_json(res, ps::encode_error(code, message), status);
}

template <class F>
void guarded(httplib::Response& res, F&& f)
{
    try {
        f();
    } catch (const UnknownStep& e) {
        reply_error(res, 404, "UnknownStep", e.what());
    } catch (const UnknownSpan& e) {
        reply_error(res, 404, "UnknownSpan", e.what());
    } catch (const ProtocolError& e) {
        reply_error(res, 400, "ProtocolError", e.what());
    } catch (const InvalidConfig& e) {
        reply_error(res, 400, "ProtocolError", e.what());
    } catch (const json::exception& e) {
        reply_error(res, 400, "ProtocolError", e.what());
    } catch (const std::exception& e) {
        reply_error(res, 500, "DataError", e.what());
    }
}

} // namespace

struct VizGateway::Impl {
    httplib::Server server;
};

VizGateway::VizGateway(GatewayOptions options)
    : options_(std::move(options))
    , store_(options_.prov_dir)
    , impl_(std::make_unique<Impl>())
{
}

VizGateway::~VizGateway() { stop(); }

void VizGateway::start()
{
    if (http_thread_.joinable()) {
        return;
    }
    auto& svr = impl_->server;
    const std::size_t threads = options_.http_threads;
    svr.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };

    svr.Post("/push", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            ps::VizPushMsg msg = ps::decode_viz_push(json::parse(req.body));
            const std::uint64_t v = msg.version;
            {
                std::lock_guard lk(queue_mutex_);
                queue_.push_back(std::move(msg));
            }
            ++received_;
            queue_cv_.notify_all();
            reply_json(res, json{{"t", "ack"}, {"version", v}});
        });
    });
    svr.Get("/api/status", [this](const httplib::Request&, httplib::Response& res) {
        reply_json(res, json{{"t", "status"}, {"version", state_.version()}, {"ranks", state_.summaries().size()},
                            {"subscribers", state_.subscriber_count()}});
    });
    svr.Get("/api/ranking", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const std::string stat_s = req.has_param("stat") ? req.get_param_value("stat") : "std";
            const auto stat = parse_rank_stat(stat_s);
            if (!stat) {
                throw ProtocolError("unknown statistic '" + stat_s + "'");
            }
            const std::uint64_t n = req.has_param("n") ? param_u64(req, "n") : 5;
            if (n == 0) {
                throw ProtocolError("n must be at least 1");
            }
            const Ranking r = state_.rank_ranking(*stat, n);
            json top = json::array();
            for (const auto& s : r.top) {
                top.push_back(summary_to_json(s));
            }
            json bottom = json::array();
            for (const auto& s : r.bottom) {
                bottom.push_back(summary_to_json(s));
            }
            reply_json(res, json{{"stat", stat_s}, {"n", n}, {"top", std::move(top)}, {"bottom", std::move(bottom)}});
        });
    });
    svr.Get("/api/steps", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const RankKey key{param_u32(req, "app"), param_u32(req, "rank")};
            json steps = json::array();
            for (const auto& r : state_.steps(key)) {
                steps.push_back(records::step_report_to_json(r));
            }
            reply_json(res, json{{"app", key.app}, {"rank", key.rank}, {"steps", std::move(steps)}});
        });
    });
    svr.Get("/api/funcview", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const std::uint32_t app = param_u32(req, "app");
            const std::uint32_t rank = param_u32(req, "rank");
            const StepId step = param_u64(req, "step");
            const std::string xs = req.has_param("x") ? req.get_param_value("x") : "entry";
            const std::string ys = req.has_param("y") ? req.get_param_value("y") : "fid";
            const auto x = parse_axis(xs);
            const auto y = parse_axis(ys);
            if (!x || !y) {
                throw ProtocolError("unknown axis '" + (x ? ys : xs) + "'");
            }
            json points = json::array();
            for (const auto& p : function_view(store_, &state_, app, rank, step, *x, *y)) {
                points.push_back(projection_to_json(p));
            }
            reply_json(res, json{{"app", app}, {"rank", rank}, {"step", step}, {"x", xs}, {"y", ys},
                                {"points", std::move(points)}});
        });
    });
    svr.Get("/api/callstack", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const std::uint32_t app = param_u32(req, "app");
            const std::uint32_t rank = param_u32(req, "rank");
            const SpanId span = param_u64(req, "span");
            const Micros t0 = req.has_param("t0") ? param_u64(req, "t0") : 0;
            const Micros t1 = req.has_param("t1") ? param_u64(req, "t1") : std::numeric_limits<Micros>::max();
            json j = callstack_to_json(callstack_view(store_, app, rank, t0, t1, span));
            j["app"] = app;
            j["rank"] = rank;
            j["focus"] = span;
            reply_json(res, j);
        });
    });
    svr.Get("/stream", [this](const httplib::Request& req, httplib::Response& res) {
        std::set<RankKey> sel;
        try {
            if (req.has_param("sel")) {
                sel = parse_selection(req.get_param_value("sel"));
            } else if (req.has_param("rank")) {
                sel.insert(RankKey{req.has_param("app") ? param_u32(req, "app") : 0, param_u32(req, "rank")});
            }
            if (sel.empty()) {
                throw ProtocolError("stream needs a non-empty selection (sel=app:rank,...)");
            }
        } catch (const ProtocolError& e) {
            reply_error(res, 400, "ProtocolError", e.what());
            return;
        }
        auto sub = state_.step_series(std::move(sel));
        const auto heartbeat = options_.heartbeat;
        res.set_chunked_content_provider(
            "application/x-ndjson",
            [this, sub, heartbeat](std::size_t, httplib::DataSink& sink) {
                auto item = sub->next(heartbeat);
                if (!item) {
                    if (sub->closed()) {
                        sink.done();
                        return false;
                    }
                    const std::string hb = json{{"t", "heartbeat"}, {"version", state_.version()}}.dump() + "\n";
                    return sink.write(hb.data(), hb.size());
                }
                json line{{"t", "viz_push"}, {"version", item->first},
                    {"reports", json::array({records::step_report_to_json(item->second)})}};
                const std::string s = line.dump() + "\n";
                return sink.write(s.data(), s.size());
            },
            [sub](bool) { sub->close(); });
    });

    if (options_.listen.port == 0) {
        const int p = svr.bind_to_any_port(options_.listen.host);
        if (p <= 0) {
            throw NetworkError("cannot bind viz gateway on " + options_.listen.host);
        }
        port_ = static_cast<std::uint16_t>(p);
    } else {
        if (!svr.bind_to_port(options_.listen.host, options_.listen.port)) {
            throw NetworkError(
                "cannot bind viz gateway on " + options_.listen.host + ":" + std::to_string(options_.listen.port));
        }
        port_ = options_.listen.port;
    }
    {
        std::lock_guard lk(queue_mutex_);
        stopping_ = false;
    }
    ingest_thread_ = std::thread([this] { ingest_loop(); });
    http_thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
}

void VizGateway::ingest_loop()
{
    for (;;) {
        ps::VizPushMsg msg;
        {
            std::unique_lock lk(queue_mutex_);
            queue_cv_.wait(lk, [this] { return stopping_ || !queue_.empty(); });
            if (queue_.empty()) {
                return;
            }
            msg = std::move(queue_.front());
            queue_.pop_front();
            busy_ = true;
        }
        state_.ingest_push(msg);
        {
            std::lock_guard lk(queue_mutex_);
            busy_ = false;
        }
        idle_cv_.notify_all();
    }
}

void VizGateway::wait_idle()
{
    std::unique_lock lk(queue_mutex_);
    idle_cv_.wait(lk, [this] { return (queue_.empty() && !busy_) || stopping_; });
}

void VizGateway::stop()
{
    if (!http_thread_.joinable()) {
        return;
    }
    state_.close_subscriptions();
    impl_->server.stop();
    http_thread_.join();
    {
        std::lock_guard lk(queue_mutex_);
        stopping_ = true;
    }
    queue_cv_.notify_all();
    idle_cv_.notify_all();
    ingest_thread_.join();
}

} // namespace tracead::viz
