#ifndef TRACEAD_VIZ_GATEWAY_HPP
#define TRACEAD_VIZ_GATEWAY_HPP

#include "tracead/net.hpp"
#include "tracead/param_server.hpp"
#include "tracead/provenance.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace tracead::viz {

/// Statistics over one rank's per-step anomaly counts (population std).
struct RankSummary {
    std::uint32_t app = 0;
    std::uint32_t rank = 0;
    std::uint64_t n_steps = 0;
    double avg = 0.0;
    double std = 0.0;
    double max = 0.0;
    double min = 0.0;
    std::uint64_t total = 0;

    RankKey rank_key() const noexcept { return {app, rank}; }
};

enum class RankStat { Avg, Std, Max, Min, Total };
std::optional<RankStat> parse_rank_stat(std::string_view s) noexcept;
double stat_value(const RankSummary& s, RankStat stat) noexcept;

struct Ranking {
    std::vector<RankSummary> top;    ///< highest first
    std::vector<RankSummary> bottom; ///< lowest first
};

enum class Axis { Fid, Entry, Exit, Inclusive, Exclusive, Label, NChildren, NMessages };
std::optional<Axis> parse_axis(std::string_view s) noexcept;
std::string_view to_string(Axis a) noexcept;
/// label maps to 1 for ANOMALY and 0 otherwise.
double axis_value(const ExecSpan& s, Axis a) noexcept;

struct Projection {
    double x = 0.0;
    double y = 0.0;
    ExecSpan span;
};

enum class NodeRole { Ancestor, Focus, Descendant };

struct CallNode {
    SpanId span_id = 0;
    std::optional<SpanId> parent_span;
    FuncId func_id = 0;
    std::string name;
    Micros entry_us = 0;
    std::optional<Micros> exit_us;
    Label label = Label::Unlabeled;
    NodeRole role = NodeRole::Descendant;
    int depth = 0; ///< relative to the focus: ancestors negative
};

struct CommEdge {
    Micros timestamp_us = 0;
    CommKind kind = CommKind::Send;
    std::uint32_t partner_rank = 0;
};

struct CallStackView {
    std::vector<CallNode> nodes; ///< ancestors root first, the focus, then descendants by entry
    std::vector<CommEdge> comm;  ///< the focus span's messages
};

/// Live feed of step reports for one selection of ranks.
class Subscription {
public:
    explicit Subscription(std::set<RankKey> selection) : selection_(std::move(selection)) { }

    /// Next (version, report); nullopt on timeout or once closed and drained.
    std::optional<std::pair<std::uint64_t, AnomalyStepReport>> next(std::chrono::milliseconds timeout);
    void close();
    bool closed() const;
    const std::set<RankKey>& selection() const noexcept { return selection_; }

private:
    friend class GatewayState;
    void deliver(std::uint64_t version, const AnomalyStepReport& r);

    std::set<RankKey> selection_;
    mutable std::mutex mutex_;
    std::condition_variable cv_;
    std::deque<std::pair<std::uint64_t, AnomalyStepReport>> queue_;
    bool closed_ = false;
};

/// In-memory summary and step data of the gateway. Thread-safe.
class GatewayState {
public:
    /// Applies a push. Pushes whose version is not newer than the last
    /// accepted one change nothing and return false; reports for a step
    /// already stored are skipped.
    bool ingest_push(const ps::VizPushMsg& msg);

    std::uint64_t version() const;
    std::optional<RankSummary> summary(RankKey key) const;
    std::vector<RankSummary> summaries() const;
    /// Ties are broken by ascending (app, rank) in both lists. n >= 1.
    Ranking rank_ranking(RankStat stat, std::size_t n) const;
    std::vector<AnomalyStepReport> steps(RankKey key) const;
    bool has_step(RankKey key, StepId step) const;

    /// History of the selection (by rank, then step) followed by live
    /// reports. Throws InvalidConfig for an empty selection.
    std::shared_ptr<Subscription> step_series(std::set<RankKey> selection);
    std::size_t subscriber_count() const;
    void close_subscriptions();

private:
    struct RankData {
        std::map<StepId, AnomalyStepReport> steps;
        RunStats counts;
        std::uint64_t total = 0;
    };
    static RankSummary summarize(RankKey key, const RankData& d);

    mutable std::mutex mutex_;
    std::map<RankKey, RankData> ranks_;
    std::uint64_t version_ = 0;
    bool any_version_ = false;
    std::vector<std::weak_ptr<Subscription>> subs_;
};

/// Every stored span of one (app, rank, step), ordered by entry time.
/// Throws UnknownStep when the step is neither stored nor known to state.
std::vector<Projection> function_view(const prov::ProvenanceStore& store, const GatewayState* state,
    std::uint32_t app, std::uint32_t rank, StepId step, Axis x, Axis y);

/// Ancestry of the focus span plus stored descendants intersecting
/// [t0, t1]. Throws UnknownSpan when the focus is not stored.
CallStackView callstack_view(const prov::ProvenanceStore& store, std::uint32_t app, std::uint32_t rank,
    Micros t0, Micros t1, SpanId focus);

nlohmann::json summary_to_json(const RankSummary& s);
nlohmann::json projection_to_json(const Projection& p);
nlohmann::json callstack_to_json(const CallStackView& v);

struct GatewayOptions {
    net::Endpoint listen{"127.0.0.1", 0};
    std::filesystem::path prov_dir = "prov";
    std::size_t http_threads = 32;
    std::chrono::milliseconds heartbeat{2000};
};

/// HTTP service: POST /push (acknowledged before processing; an ingest
/// thread applies pushes in arrival order), GET /api/ranking, /api/steps,
/// /api/funcview, /api/callstack, /api/status and the /stream feed.
class VizGateway {
public:
    explicit VizGateway(GatewayOptions options);
    ~VizGateway();
    VizGateway(const VizGateway&) = delete;
    VizGateway& operator=(const VizGateway&) = delete;

    void start();
    void stop();
    std::uint16_t port() const noexcept { return port_; }
    net::Endpoint endpoint() const { return {options_.listen.host, port_}; }

    GatewayState& state() noexcept { return state_; }
    const prov::ProvenanceStore& store() const noexcept { return store_; }

    /// Blocks until every acknowledged push has been applied.
    void wait_idle();
    std::uint64_t pushes_received() const noexcept { return received_.load(); }

private:
    struct Impl;
    void ingest_loop();

    GatewayOptions options_;
    GatewayState state_;
    prov::ProvenanceStore store_;
    std::unique_ptr<Impl> impl_;
    std::uint16_t port_ = 0;

    std::mutex queue_mutex_;
    std::condition_variable queue_cv_;
    std::condition_variable idle_cv_;
    std::deque<ps::VizPushMsg> queue_;
    bool busy_ = false;
    bool stopping_ = false;
    std::atomic<std::uint64_t> received_{0};
    std::thread ingest_thread_;
    std::thread http_thread_;
};

} // namespace tracead::viz

#endif
