#ifndef TRACEAD_PARAM_SERVER_HPP
#define TRACEAD_PARAM_SERVER_HPP

#include "tracead/ad_engine.hpp"
#include "tracead/net.hpp"
#include "tracead/run_stats.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <list>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace tracead::ps {

using nlohmann::json;

struct FuncStats {
    RunStats stats;
    std::string name;
};

using FuncStatsMap = std::map<FuncId, FuncStats>;

/// Worker -> server: statistics accumulated since the previous update.
struct StatsUpdateMsg {
    std::uint32_t app = 0;
    std::uint32_t rank = 0;
    StepId step = 0;
    Micros t_begin_us = 0;
    Micros t_end_us = 0;
    std::uint64_t n_anomalies = 0;
    std::uint64_t n_spans = 0;
    FuncStatsMap stats;
};

/// Server -> worker: post-merge global statistics for the functions of the
/// request. stale is set when the update was a duplicate and was not merged.
struct SnapshotReply {
    std::uint64_t version = 0;
    FuncStatsMap stats;
    bool stale = false;
};

struct VizPushMsg {
    std::uint64_t version = 0;
    std::vector<AnomalyStepReport> reports;
};

json encode_update(const StatsUpdateMsg& m);
StatsUpdateMsg decode_update(const json& j);
json encode_snapshot(const SnapshotReply& r);
SnapshotReply decode_snapshot(const json& j);
json encode_viz_push(const VizPushMsg& m);
VizPushMsg decode_viz_push(const json& j);
json encode_error(std::string_view code, std::string_view message);

/// The workflow-level view: merged per-function statistics and per-rank step
/// reports. Not thread-safe; ParamServer serializes access.
class GlobalView {
public:
    /// Merges the deltas unless msg.step is not newer than the last step seen
    /// for (app, rank), in which case nothing changes and stale is set.
    SnapshotReply handle_update(const StatsUpdateMsg& msg);

    /// Every function's global statistics.
    SnapshotReply snapshot() const;
    std::uint64_t version() const noexcept { return version_; }

    /// A push carrying all reports not yet acknowledged, iff the view changed
    /// since last_pushed_version.
    std::optional<VizPushMsg> push_to_viz(std::uint64_t last_pushed_version) const;
    /// Drops pending reports that were included in the push of this version.
    void acknowledge_push(std::uint64_t version);

    const FuncStatsMap& stats() const noexcept { return stats_; }
    const std::map<RankKey, std::vector<AnomalyStepReport>>& reports() const noexcept { return reports_; }
    std::size_t pending_reports() const noexcept { return pending_.size(); }

private:
    FuncStatsMap stats_;
    std::map<RankKey, std::vector<AnomalyStepReport>> reports_;
    std::map<RankKey, StepId> last_step_;
    std::vector<std::pair<std::uint64_t, AnomalyStepReport>> pending_;
    std::uint64_t version_ = 0;
};

/// Delivery of one push; returns false when the viz side is unreachable.
using PushSink = std::function<bool(const VizPushMsg&)>;

/// HTTP sink posting the push to the viz gateway at ep ("/push").
PushSink http_push_sink(const net::Endpoint& ep);

struct ServerOptions {
    net::Endpoint listen{"127.0.0.1", 0};
    double push_interval_s = 1.0;
    PushSink push_sink; ///< empty: no pushes
};

/// Parameter server service: one thread per client connection, merges
/// serialized on a single mutex held only for the in-memory merge. A client
/// that stops mid-frame blocks only its own connection thread.
class ParamServer {
public:
    explicit ParamServer(ServerOptions options);
    ~ParamServer();
    ParamServer(const ParamServer&) = delete;
    ParamServer& operator=(const ParamServer&) = delete;

    void start();
    void stop();

    std::uint16_t port() const noexcept { return port_; }
    net::Endpoint endpoint() const { return {options_.listen.host, port_}; }
    std::uint64_t version() const;
    SnapshotReply snapshot() const;
    std::map<RankKey, std::vector<AnomalyStepReport>> reports() const;

    /// Runs one push tick immediately; returns true if a push was delivered.
    bool push_tick();
    std::uint64_t last_pushed_version() const;
    std::uint64_t pushes_delivered() const noexcept { return pushes_delivered_.load(); }
    std::uint64_t push_failures() const noexcept { return push_failures_.load(); }

    /// Handles one request line and returns the reply line (no I/O).
    std::string handle_line(const std::string& line);

private:
    struct Connection {
        net::LineConnection conn;
        std::thread thread;
        std::atomic<bool> done{false};
    };

    void accept_loop();
    void serve(Connection& c);
    void push_loop();
    void reap_finished();

    ServerOptions options_;
    net::Listener listener_;
    std::uint16_t port_ = 0;

    mutable std::mutex view_mutex_;
    GlobalView view_;

    mutable std::mutex push_mutex_;
    std::uint64_t last_pushed_ = 0;
    std::atomic<std::uint64_t> pushes_delivered_{0};
    std::atomic<std::uint64_t> push_failures_{0};

    std::mutex conn_mutex_;
    std::list<Connection> connections_;

    std::atomic<bool> running_{false};
    std::thread accept_thread_;
    std::thread push_thread_;
    std::mutex stop_mutex_;
    std::condition_variable stop_cv_;
};

/// Blocking request/response client. Reconnects lazily after failures.
class ParamServerClient {
public:
    explicit ParamServerClient(net::Endpoint ep, std::chrono::milliseconds timeout = std::chrono::seconds(5));

    SnapshotReply update(const StatsUpdateMsg& msg);
    SnapshotReply query();
    std::uint64_t status_version();

private:
    json request(const json& req);

    net::Endpoint ep_;
    std::chrono::milliseconds timeout_;
    net::LineConnection conn_;
};

} // namespace tracead::ps

#endif
