#include "tracead/param_server.hpp"

#include "tracead/error.hpp"
#include "tracead/records.hpp"

#include <httplib.h>

#include <charconv>

namespace tracead::ps {

namespace {

json encode_func_stats(const FuncStatsMap& m)
{
    json out = json::object();
    for (const auto& [fid, fs] : m) {
        json s = records::stats_to_json(fs.stats);
        s["name"] = fs.name;
        out[std::to_string(fid)] = std::move(s);
    }
    return out;
}

FuncStatsMap decode_func_stats(const json& j)
{
    if (!j.is_object()) {
        throw ProtocolError("'stats' must be an object keyed by function id");
    }
    FuncStatsMap out;
    for (const auto& [key, value] : j.items()) {
        std::uint64_t fid = 0;
        auto [p, ec] = std::from_chars(key.data(), key.data() + key.size(), fid);
        if (ec != std::errc() || p != key.data() + key.size() || fid > std::numeric_limits<FuncId>::max()) {
            throw ProtocolError("bad function id '" + key + "'");
        }
        FuncStats fs;
        fs.stats = records::stats_from_json(value);
        if (auto it = value.find("name"); it != value.end() && it->is_string()) {
            fs.name = it->get<std::string>();
        }
        out.emplace(static_cast<FuncId>(fid), std::move(fs));
    }
    return out;
}

std::string expect_type(const json& j)
{
    if (!j.is_object()) {
        throw ProtocolError("frame is not an object");
    }
    return records::get_str(j, "t");
}

} // namespace

json encode_update(const StatsUpdateMsg& m)
{
    return json{{"t", "update"}, {"app", m.app}, {"rank", m.rank}, {"step", m.step},
        {"range", json::array({m.t_begin_us, m.t_end_us})}, {"anom", m.n_anomalies}, {"spans", m.n_spans},
        {"stats", encode_func_stats(m.stats)}};
}

StatsUpdateMsg decode_update(const json& j)
{
    if (expect_type(j) != "update") {
        throw ProtocolError("expected an update frame");
    }
    StatsUpdateMsg m;
    auto r = records::step_report_from_json(j);
    m.app = r.app;
    m.rank = r.rank;
    m.step = r.step_id;
    m.t_begin_us = r.t_begin_us;
    m.t_end_us = r.t_end_us;
    m.n_anomalies = r.n_anomalies;
    m.n_spans = r.n_spans;
    auto it = j.find("stats");
    if (it == j.end()) {
        throw ProtocolError("missing field 'stats'");
    }
    m.stats = decode_func_stats(*it);
    return m;
}

json encode_snapshot(const SnapshotReply& r)
{
    json j{{"t", "snapshot"}, {"version", r.version}, {"stats", encode_func_stats(r.stats)}};
    if (r.stale) {
        j["stale"] = true;
    }
    return j;
}

SnapshotReply decode_snapshot(const json& j)
{
    const std::string t = expect_type(j);
    if (t == "err") {
        throw ProtocolError("server error: " + j.value("code", std::string("?")) + " " + j.value("msg", std::string()));
    }
    if (t != "snapshot") {
        throw ProtocolError("expected a snapshot frame, got '" + t + "'");
    }
    SnapshotReply r;
    r.version = records::get_u64(j, "version");
    auto it = j.find("stats");
    if (it == j.end()) {
        throw ProtocolError("missing field 'stats'");
    }
    r.stats = decode_func_stats(*it);
    r.stale = j.value("stale", false);
    return r;
}

json encode_viz_push(const VizPushMsg& m)
{
    json reports = json::array();
    for (const auto& r : m.reports) {
        reports.push_back(records::step_report_to_json(r));
    }
    return json{{"t", "viz_push"}, {"version", m.version}, {"reports", std::move(reports)}};
}

VizPushMsg decode_viz_push(const json& j)
{
    if (expect_type(j) != "viz_push") {
        throw ProtocolError("expected a viz_push frame");
    }
    VizPushMsg m;
    m.version = records::get_u64(j, "version");
    auto it = j.find("reports");
    if (it == j.end() || !it->is_array()) {
        throw ProtocolError("'reports' must be an array");
    }
    for (const auto& r : *it) {
        m.reports.push_back(records::step_report_from_json(r));
    }
    return m;
}

json encode_error(std::string_view code, std::string_view message)
{
    return json{{"t", "err"}, {"code", code}, {"msg", message}};
}

SnapshotReply GlobalView::handle_update(const StatsUpdateMsg& msg)
{
    const RankKey key{msg.app, msg.rank};
    SnapshotReply reply;
    auto last = last_step_.find(key);
    if (last != last_step_.end() && msg.step <= last->second) {
        reply.stale = true;
    } else {
        for (const auto& [fid, delta] : msg.stats) {
            FuncStats& g = stats_[fid];
            g.stats = merge_stats(g.stats, delta.stats);
            if (g.name.empty()) {
                g.name = delta.name;
            }
        }
        last_step_[key] = msg.step;
        ++version_;
        AnomalyStepReport r;
        r.app = msg.app;
        r.rank = msg.rank;
        r.step_id = msg.step;
        r.t_begin_us = msg.t_begin_us;
        r.t_end_us = msg.t_end_us;
        r.n_anomalies = msg.n_anomalies;
        r.n_spans = msg.n_spans;
        reports_[key].push_back(r);
        pending_.emplace_back(version_, r);
    }
    reply.version = version_;
    for (const auto& [fid, delta] : msg.stats) {
        if (auto it = stats_.find(fid); it != stats_.end()) {
            reply.stats.emplace(fid, it->second);
        } else {
            reply.stats.emplace(fid, FuncStats{{}, delta.name});
        }
    }
    return reply;
}

SnapshotReply GlobalView::snapshot() const
{
    return {version_, stats_, false};
}

std::optional<VizPushMsg> GlobalView::push_to_viz(std::uint64_t last_pushed_version) const
{
    if (version_ <= last_pushed_version) {
        return std::nullopt;
    }
    VizPushMsg m;
    m.version = version_;
    m.reports.reserve(pending_.size());
    for (const auto& [v, r] : pending_) {
        m.reports.push_back(r);
    }
    return m;
}

void GlobalView::acknowledge_push(std::uint64_t version)
{
    std::erase_if(pending_, [version](const auto& p) { return p.first <= version; });
}

PushSink http_push_sink(const net::Endpoint& ep)
{
    return [ep](const VizPushMsg& m) {
        httplib::Client cli(ep.host, ep.port);
        cli.set_connection_timeout(2, 0);
        cli.set_read_timeout(5, 0);
        auto res = cli.Post("/push", encode_viz_push(m).dump(), "application/json");
        return res && res->status >= 200 && res->status < 300;
    };
}

ParamServer::ParamServer(ServerOptions options) : options_(std::move(options)) { }

ParamServer::~ParamServer() { stop(); }

void ParamServer::start()
{
    if (running_.exchange(true)) {
        return;
    }
    listener_ = net::Listener::bind(options_.listen);
    port_ = listener_.port();
    accept_thread_ = std::thread([this] { accept_loop(); });
    if (options_.push_sink) {
        push_thread_ = std::thread([this] { push_loop(); });
    }
}

void ParamServer::stop()
{
    if (!running_.exchange(false)) {
        return;
    }
    {
        std::lock_guard lk(stop_mutex_);
    }
    stop_cv_.notify_all();
    listener_.shutdown();
    if (accept_thread_.joinable()) {
        accept_thread_.join();
    }
    if (push_thread_.joinable()) {
        push_thread_.join();
    }
    std::lock_guard lk(conn_mutex_);
    for (auto& c : connections_) {
        c.conn.socket().shutdown();
    }
    for (auto& c : connections_) {
        if (c.thread.joinable()) {
            c.thread.join();
        }
    }
    connections_.clear();
}

void ParamServer::reap_finished()
{
    std::lock_guard lk(conn_mutex_);
    for (auto it = connections_.begin(); it != connections_.end();) {
        if (it->done.load()) {
            it->thread.join();
            it = connections_.erase(it);
        } else {
            ++it;
        }
    }
}

void ParamServer::accept_loop()
{
    while (running_.load()) {
        auto conn = listener_.accept();
        if (!conn) {
            break;
        }
        reap_finished();
        std::lock_guard lk(conn_mutex_);
        auto& c = connections_.emplace_back();
        c.conn = std::move(*conn);
        c.thread = std::thread([this, &c] { serve(c); });
    }
}

void ParamServer::serve(Connection& c)
{
    try {
        while (running_.load()) {
            auto line = c.conn.recv_line();
            if (!line) {
                break;
            }
            if (line->empty()) {
                continue;
            }
            c.conn.send_line(handle_line(*line));
        }
    } catch (const NetworkError&) {
        // peer went away
    }
    c.done.store(true);
}

std::string ParamServer::handle_line(const std::string& line)
{
    json req = json::parse(line, nullptr, false);
    if (req.is_discarded()) {
        return encode_error("ProtocolError", "frame is not valid JSON").dump();
    }
    try {
        const std::string t = expect_type(req);
        if (t == "update") {
            auto msg = decode_update(req);
            std::lock_guard lk(view_mutex_);
            return encode_snapshot(view_.handle_update(msg)).dump();
        }
        if (t == "query") {
            std::lock_guard lk(view_mutex_);
            return encode_snapshot(view_.snapshot()).dump();
        }
        if (t == "status") {
            std::lock_guard lk(view_mutex_);
            return json{{"t", "status"}, {"version", view_.version()}, {"functions", view_.stats().size()},
                {"ranks", view_.reports().size()}}
                .dump();
        }
        return encode_error("ProtocolError", "unknown frame type '" + t + "'").dump();
    } catch (const ProtocolError& e) {
        return encode_error("ProtocolError", e.what()).dump();
    }
}

std::uint64_t ParamServer::version() const
{
    std::lock_guard lk(view_mutex_);
    return view_.version();
}

SnapshotReply ParamServer::snapshot() const
{
    std::lock_guard lk(view_mutex_);
    return view_.snapshot();
}

std::map<RankKey, std::vector<AnomalyStepReport>> ParamServer::reports() const
{
    std::lock_guard lk(view_mutex_);
    return view_.reports();
}

std::uint64_t ParamServer::last_pushed_version() const
{
    std::lock_guard lk(push_mutex_);
    return last_pushed_;
}

bool ParamServer::push_tick()
{
    if (!options_.push_sink) {
        return false;
    }
    std::lock_guard plk(push_mutex_);
    std::optional<VizPushMsg> msg;
    {
        std::lock_guard lk(view_mutex_);
        msg = view_.push_to_viz(last_pushed_);
    }
    if (!msg) {
        return false;
    }
    bool ok = false;
    try {
        ok = options_.push_sink(*msg);
    } catch (const std::exception&) {
        ok = false;
    }
    if (!ok) {
        ++push_failures_;
        return false;
    }
    {
        std::lock_guard lk(view_mutex_);
        view_.acknowledge_push(msg->version);
    }
    last_pushed_ = msg->version;
    ++pushes_delivered_;
    return true;
}

void ParamServer::push_loop()
{
    const auto period = std::chrono::duration<double>(options_.push_interval_s);
    std::unique_lock lk(stop_mutex_);
    while (running_.load()) {
        stop_cv_.wait_for(lk, period, [this] { return !running_.load(); });
        if (!running_.load()) {
            break;
        }
        lk.unlock();
        push_tick();
        lk.lock();
    }
}

ParamServerClient::ParamServerClient(net::Endpoint ep, std::chrono::milliseconds timeout)
    : ep_(std::move(ep))
    , timeout_(timeout)
{
}

json ParamServerClient::request(const json& req)
{
    try {
        if (!conn_.valid()) {
            conn_ = net::LineConnection::connect(ep_, timeout_);
        }
        conn_.send_line(req.dump());
        auto line = conn_.recv_line(timeout_);
        if (!line) {
            throw NetworkError("parameter server closed the connection");
        }
        json reply = json::parse(*line, nullptr, false);
        if (reply.is_discarded()) {
            throw ProtocolError("reply is not valid JSON");
        }
        return reply;
    } catch (const NetworkError&) {
        conn_.close();
        throw;
    }
}

SnapshotReply ParamServerClient::update(const StatsUpdateMsg& msg)
{
    return decode_snapshot(request(encode_update(msg)));
}

SnapshotReply ParamServerClient::query()
{
    return decode_snapshot(request(json{{"t", "query"}}));
}

std::uint64_t ParamServerClient::status_version()
{
    json r = request(json{{"t", "status"}});
    return records::get_u64(r, "version");
}

} // namespace tracead::ps
