#include "support.hpp"

#include "tracead/error.hpp"
#include "tracead/param_server.hpp"

#include <doctest.h>

#include <algorithm>
#include <thread>

using namespace tracead;
using namespace tracead::ps;
using nlohmann::json;

namespace {

StatsUpdateMsg update_of(std::uint32_t rank, StepId step, std::map<FuncId, std::vector<double>> values,
    std::uint64_t anomalies = 0)
{
    StatsUpdateMsg m;
    m.rank = rank;
    m.step = step;
    m.t_begin_us = step * 1000;
    m.t_end_us = (step + 1) * 1000;
    m.n_anomalies = anomalies;
    for (auto& [fid, xs] : values) {
        m.stats[fid] = {stats_of(xs), "F" + std::to_string(fid)};
        m.n_spans += xs.size();
    }
    return m;
}

std::vector<double> random_values(std::mt19937_64& rng, std::size_t n, double mean)
{
    std::normal_distribution<double> d(mean, mean / 10);
    std::vector<double> v(n);
    for (auto& x : v) {
        x = d(rng);
    }
    return v;
}

} // namespace

TEST_CASE("first update sets the global statistics to the delta")
{
    GlobalView view;
    const auto msg = update_of(0, 0, {{7, {1, 2, 3}}});
    const auto reply = view.handle_update(msg);
    CHECK_FALSE(reply.stale);
    CHECK(reply.version == 1);
    REQUIRE(reply.stats.size() == 1);
    CHECK(reply.stats.at(7).stats == msg.stats.at(7).stats);
    CHECK(reply.stats.at(7).name == "F7");
}

TEST_CASE("duplicate delivery is stale and merges nothing")
{
    GlobalView view;
    const auto msg = update_of(0, 3, {{7, {1, 2, 3}}});
    view.handle_update(msg);
    const auto again = view.handle_update(msg);
    CHECK(again.stale);
    CHECK(again.version == 1);
    CHECK(again.stats.at(7).stats.n() == 3);
    CHECK(view.handle_update(update_of(0, 2, {{7, {9}}})).stale);
    CHECK_FALSE(view.handle_update(update_of(1, 3, {{7, {9}}})).stale);
    CHECK(view.stats().at(7).stats.n() == 4);
}

TEST_CASE("reply carries exactly the functions of the request")
{
    GlobalView view;
    view.handle_update(update_of(0, 0, {{1, {1}}, {2, {2}}}));
    const auto reply = view.handle_update(update_of(1, 0, {{2, {4}}, {3, {5}}}));
    CHECK(reply.stats.size() == 2);
    CHECK(reply.stats.count(2) == 1);
    CHECK(reply.stats.count(3) == 1);
    CHECK(reply.stats.at(2).stats.n() == 2);
    CHECK(view.snapshot().stats.size() == 3);
}

TEST_CASE("any delivery order yields the batch statistics")
{
    std::mt19937_64 rng(77);
    std::vector<StatsUpdateMsg> msgs;
    std::map<FuncId, std::vector<double>> all;
    for (std::uint32_t rank = 0; rank < 6; ++rank) {
        for (StepId step = 0; step < 4; ++step) {
            std::map<FuncId, std::vector<double>> vals;
            for (FuncId f = 1; f <= 3; ++f) {
                vals[f] = random_values(rng, 1 + rng() % 50, f == 3 ? 1e9 : 100.0 * f);
                all[f].insert(all[f].end(), vals[f].begin(), vals[f].end());
            }
            msgs.push_back(update_of(rank, step, vals));
        }
    }
    for (int perm = 0; perm < 20; ++perm) {
        // Shuffle while keeping each rank's steps in order, as a worker sends them.
        std::vector<std::uint32_t> order;
        for (std::uint32_t r = 0; r < 6; ++r) {
            order.insert(order.end(), 4, r);
        }
        std::shuffle(order.begin(), order.end(), rng);
        std::map<std::uint32_t, StepId> next;
        GlobalView view;
        for (auto r : order) {
            CHECK_FALSE(view.handle_update(msgs[r * 4 + next[r]++]).stale);
        }
        for (const auto& [f, xs] : all) {
            CHECK(testing::stats_match(view.stats().at(f).stats, testing::oracle_of(xs), 1e-9));
        }
        CHECK(view.version() == 24);
    }
}

TEST_CASE("push only when the view changed, reports until acknowledged")
{
    GlobalView view;
    CHECK_FALSE(view.push_to_viz(0));
    view.handle_update(update_of(3, 0, {{1, {1, 2}}}, 1));
    auto push = view.push_to_viz(0);
    REQUIRE(push);
    CHECK(push->version == 1);
    REQUIRE(push->reports.size() == 1);
    CHECK(push->reports[0].rank == 3);
    CHECK(push->reports[0].n_anomalies == 1);
    view.acknowledge_push(1);
    CHECK_FALSE(view.push_to_viz(1));
    CHECK(view.pending_reports() == 0);
}

TEST_CASE("unreachable viz: the next successful push carries every missed report")
{
    bool reachable = false;
    std::vector<VizPushMsg> delivered;
    ServerOptions so;
    so.push_interval_s = 1000;
    so.push_sink = [&](const VizPushMsg& m) {
        if (!reachable) {
            return false;
        }
        delivered.push_back(m);
        return true;
    };
    ParamServer server(so);
    for (StepId step = 0; step < 3; ++step) {
        const auto reply = json::parse(server.handle_line(encode_update(update_of(0, step, {{1, {5}}})).dump()));
        CHECK(reply["t"] == "snapshot");
        CHECK_FALSE(server.push_tick());
    }
    CHECK(server.push_failures() == 3);
    reachable = true;
    CHECK(server.push_tick());
    REQUIRE(delivered.size() == 1);
    CHECK(delivered[0].version == 3);
    CHECK(delivered[0].reports.size() == 3);
    CHECK(server.last_pushed_version() == 3);
    CHECK_FALSE(server.push_tick());
}

TEST_CASE("wire grammar")
{
    StatsUpdateMsg m = update_of(2, 5, {{7, {1, 2, 3}}}, 1);
    m.app = 1;
    const json j = encode_update(m);
    CHECK(j["t"] == "update");
    CHECK(j["app"] == 1);
    CHECK(j["rank"] == 2);
    CHECK(j["step"] == 5);
    CHECK(j["range"] == json::array({5000, 6000}));
    CHECK(j["anom"] == 1);
    CHECK(j["stats"]["7"]["n"] == 3);
    CHECK(j["stats"]["7"]["mean"] == 2.0);
    CHECK(j["stats"]["7"]["m2"] == 2.0);
    CHECK(j["stats"]["7"]["min"] == 1.0);
    CHECK(j["stats"]["7"]["max"] == 3.0);
    CHECK(j["stats"]["7"]["name"] == "F7");

    const auto back = decode_update(json::parse(j.dump()));
    CHECK(back.app == 1);
    CHECK(back.step == 5);
    CHECK(back.t_end_us == 6000);
    CHECK(back.stats.at(7).stats == m.stats.at(7).stats);

    SnapshotReply r{4, m.stats, true};
    const auto rj = encode_snapshot(r);
    CHECK(rj["t"] == "snapshot");
    CHECK(rj["version"] == 4);
    const auto rb = decode_snapshot(json::parse(rj.dump()));
    CHECK(rb.stale);
    CHECK(rb.stats.at(7).stats == m.stats.at(7).stats);

    VizPushMsg p{9, {}};
    AnomalyStepReport rep;
    rep.rank = 4;
    rep.step_id = 2;
    rep.n_anomalies = 3;
    p.reports.push_back(rep);
    const auto pj = encode_viz_push(p);
    CHECK(pj["t"] == "viz_push");
    CHECK(pj["version"] == 9);
    const auto pb = decode_viz_push(json::parse(pj.dump()));
    REQUIRE(pb.reports.size() == 1);
    CHECK(pb.reports[0].n_anomalies == 3);
    CHECK(pb.reports[0].rank == 4);

    CHECK_THROWS_AS(decode_snapshot(encode_error("X", "y")), ProtocolError);
}

TEST_CASE("malformed frames get an error reply")
{
    ParamServer server(ServerOptions{});
    for (const char* line : {"not json", R"({"t":"bogus"})", R"({"t":"update","app":0})", R"({"rank":1})",
             R"({"t":"update","app":0,"rank":0,"step":-1,"range":[0,1],"anom":0,"stats":{}})",
             R"({"t":"update","app":0,"rank":0,"step":0,"range":[0,1],"anom":0,"stats":{"x":{}}})"}) {
        CAPTURE(line);
        const auto reply = json::parse(server.handle_line(line));
        CHECK(reply["t"] == "err");
        CHECK(reply["code"] == "ProtocolError");
    }
    CHECK(server.version() == 0);
    const auto status = json::parse(server.handle_line(R"({"t":"status"})"));
    CHECK(status["version"] == 0);
}

TEST_CASE("concurrent clients: the final global view equals the batch over every rank")
{
    ParamServer server(ServerOptions{});
    server.start();
    const auto ep = server.endpoint();
    constexpr std::uint32_t workers = 8;
    constexpr StepId steps = 25;
    std::vector<std::map<FuncId, std::vector<double>>> raw(workers);
    std::vector<std::thread> threads;
    for (std::uint32_t w = 0; w < workers; ++w) {
        threads.emplace_back([&, w] {
            std::mt19937_64 rng(w + 100);
            ParamServerClient client(ep);
            for (StepId s = 0; s < steps; ++s) {
                std::map<FuncId, std::vector<double>> vals;
                for (FuncId f = 1; f <= 4; ++f) {
                    vals[f] = random_values(rng, 1 + rng() % 20, 50.0 * f);
                    raw[w][f].insert(raw[w][f].end(), vals[f].begin(), vals[f].end());
                }
                const auto reply = client.update(update_of(w, s, vals));
                CHECK_FALSE(reply.stale);
                CHECK(reply.stats.size() == 4);
            }
        });
    }
    for (auto& t : threads) {
        t.join();
    }
    std::map<FuncId, std::vector<double>> all;
    for (const auto& r : raw) {
        for (const auto& [f, xs] : r) {
            all[f].insert(all[f].end(), xs.begin(), xs.end());
        }
    }
    const auto snap = ParamServerClient(ep).query();
    CHECK(snap.version == workers * steps);
    for (const auto& [f, xs] : all) {
        CHECK(testing::stats_match(snap.stats.at(f).stats, testing::oracle_of(xs), 1e-9));
    }
    CHECK(server.reports().size() == workers);
    server.stop();
}

TEST_CASE("a client stuck mid-frame does not block the others")
{
    ParamServer server(ServerOptions{});
    server.start();
    auto stuck = net::LineConnection::connect(server.endpoint(), std::chrono::seconds(2));
    stuck.send_raw(R"({"t":"update","app":0,"rank":9,)");
    ParamServerClient client(server.endpoint(), std::chrono::seconds(2));
    const auto t0 = std::chrono::steady_clock::now();
    for (StepId s = 0; s < 10; ++s) {
        client.update(update_of(1, s, {{1, {1.0}}}));
    }
    CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::seconds(2));
    CHECK(client.status_version() == 10);
    server.stop();
}

TEST_CASE("client surfaces network failures")
{
    std::uint16_t port = 0;
    {
        auto l = net::Listener::bind({"127.0.0.1", 0});
        port = l.port();
    }
    ParamServerClient client({"127.0.0.1", port}, std::chrono::milliseconds(200));
    CHECK_THROWS_AS(client.query(), NetworkError);
}
