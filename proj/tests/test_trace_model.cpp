#include "support.hpp"

#include "tracead/error.hpp"
#include "tracead/net.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <fstream>
#include <thread>

using namespace tracead;
using testing::entry;
using testing::exit_ev;

TEST_CASE("ENTRY record carries the seven fields in canonical order")
{
    const auto e = entry(0, 1000, 7, "MD_NEWTON");
    CHECK(encode_event(e)
        == R"({"type":"ENTRY","app":0,"rank":0,"thread":0,"ts":1000,"fid":7,"fname":"MD_NEWTON"})" "\n");
}

TEST_CASE("SEND record carries the byte count")
{
    TraceEvent e{0, 0, 0, 2000, CommPayload{CommKind::Send, 3, 42, 1024}};
    const auto line = encode_event(e);
    CHECK(line == R"({"type":"SEND","app":0,"rank":0,"thread":0,"ts":2000,"partner":3,"tag":42,"bytes":1024})" "\n");
    CHECK(decode_event(line).comm().size_bytes == 1024);
}

TEST_CASE("randomized events round-trip through the codec")
{
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<std::uint32_t> small(0, 1000);
    std::uniform_int_distribution<std::uint64_t> big(0, std::numeric_limits<std::uint64_t>::max());
    std::uniform_int_distribution<std::int64_t> tag(std::numeric_limits<std::int64_t>::min(),
        std::numeric_limits<std::int64_t>::max());
    const std::string alphabet = "abcXYZ_09 \"\\/\t\n\x01\xc3\xa9";
    for (int i = 0; i < 2000; ++i) {
        TraceEvent e;
        e.app = small(rng);
        e.rank = small(rng);
        e.thread = small(rng);
        e.timestamp_us = big(rng);
        switch (i % 4) {
        case 0:
        case 1: {
            std::string name;
            for (std::uint32_t c = small(rng) % 12; c > 0; --c) {
                name += alphabet[small(rng) % (alphabet.size() - 2)];
            }
            if (i % 7 == 0) {
                name += "\xc3\xa9";
            }
            e.payload = FuncPayload{small(rng), name, i % 4 == 0 ? FuncKind::Entry : FuncKind::Exit};
            break;
        }
        default:
            e.payload = CommPayload{i % 4 == 2 ? CommKind::Send : CommKind::Recv, small(rng), tag(rng), big(rng)};
        }
        const auto line = encode_event(e);
        CHECK(line.find('\n') == line.size() - 1);
        REQUIRE(decode_event(line) == e);
    }
}

TEST_CASE("decode accepts EXIT and zero-length RECV")
{
    const auto ex = decode_event(R"({"type":"EXIT","app":1,"rank":2,"thread":3,"ts":50,"fid":4,"fname":"g"})");
    CHECK(ex.func().kind == FuncKind::Exit);
    CHECK(ex.func().func_id == 4);
    CHECK(ex.stream() == StreamKey{1, 2, 3});

    const auto rv = decode_event(R"({"type":"RECV","app":0,"rank":0,"thread":0,"ts":5,"partner":1,"tag":-3,"bytes":0})");
    CHECK(rv.comm().kind == CommKind::Recv);
    CHECK(rv.comm().size_bytes == 0);
    CHECK(rv.comm().tag == -3);
}

TEST_CASE("extra fields are ignored and the trailing newline is optional")
{
    const auto e = decode_event(
        "{\"type\":\"ENTRY\",\"app\":0,\"rank\":0,\"thread\":0,\"ts\":1,\"fid\":2,\"fname\":\"f\",\"x\":[1]}\n");
    CHECK(e == entry(0, 1, 2, "f"));
}

TEST_CASE("invalid records raise MalformedRecord")
{
    const char* bad[] = {
        R"({"type":"ENTRY","app":0,"rank":0,"thread":0,"fid":7,"fname":"f"})",           // no ts
        R"({"type":"ENTRY","app":0,"rank":0,"thread":0,"ts":-1,"fid":7,"fname":"f"})",   // negative
        R"({"type":"ENTRY","app":0,"rank":0,"thread":0,"ts":1.5,"fid":7,"fname":"f"})",  // fractional
        R"({"type":"ENTRY","app":0,"rank":0,"thread":0,"ts":"1","fid":7,"fname":"f"})",  // string
        R"({"type":"CALL","app":0,"rank":0,"thread":0,"ts":1,"fid":7,"fname":"f"})",     // kind
        R"({"type":"SEND","app":0,"rank":0,"thread":0,"ts":1,"partner":1,"tag":0,"bytes":-4})",
        R"({"type":"RECV","app":0,"rank":0,"thread":0,"ts":1,"tag":0,"bytes":4})",
        R"({"type":"ENTRY","app":0,"rank":0,"thread":0,"ts":1,"fid":7})",
        R"({"type":"ENTRY","app":0,"rank":0,"thread":0,"ts":1,"fid":4294967296,"fname":"f"})",
        R"([1,2,3])",
        R"({"type":"ENTRY",)",
        "",
        "garbage",
    };
    for (const char* line : bad) {
        CAPTURE(line);
        CHECK_THROWS_AS(decode_event(line, 9), MalformedRecord);
    }
    try {
        decode_event("nope", 42);
        FAIL("accepted");
    } catch (const MalformedRecord& e) {
        CHECK(e.position() == 42);
        CHECK_FALSE(e.reason().empty());
    }
}

TEST_CASE("META is a record but not an event")
{
    MetaRecord m{"r1", 123, {{7, "MD_NEWTON"}, {8, "x"}}};
    const auto line = encode_meta(m);
    CHECK_THROWS_AS(decode_event(line), MalformedRecord);
    const auto rec = decode_record(line);
    REQUIRE(std::holds_alternative<MetaRecord>(rec));
    CHECK(std::get<MetaRecord>(rec) == m);

    const auto bare = decode_record(R"({"type":"META","run_id":"r2","epoch_us":0})");
    CHECK(std::get<MetaRecord>(bare).fmap.empty());
}

TEST_CASE("reader yields in-order events and absorbs META")
{
    MetaRecord m{"run-x", 5, {}};
    const std::string text = encode_meta(m) + "\n\n"
        + testing::lines_of({entry(0, 1, 1, "f"), entry(0, 2, 2, "g"), exit_ev(0, 3, 2, "g")});
    auto r = testing::reader_of(text);
    int n = 0;
    while (r.next()) {
        ++n;
    }
    CHECK(n == 3);
    REQUIRE(r.meta());
    CHECK(r.meta()->run_id == "run-x");
    CHECK(r.events_read() == 3);
    CHECK(r.bytes_read() == text.size());
    CHECK(r.function_names().at(2) == "g");
}

TEST_CASE("timestamp regression: Strict raises, Skip drops and counts")
{
    const auto text = testing::lines_of({entry(0, 10, 1, "f"), exit_ev(0, 5, 1, "f")});
    {
        auto r = testing::reader_of(text);
        CHECK(r.next());
        try {
            r.next();
            FAIL("no violation");
        } catch (const OrderingViolation& v) {
            CHECK(v.t_prev() == 10);
            CHECK(v.t_now() == 5);
        }
    }
    {
        auto r = testing::reader_of(text, {OrderingPolicy::Skip, MalformedPolicy::Abort});
        int n = 0;
        while (r.next()) {
            ++n;
        }
        CHECK(n == 1);
        CHECK(r.dropped_out_of_order() == 1);
    }
}

TEST_CASE("ordering is per thread, not across threads or ranks")
{
    const auto text = testing::lines_of(
        {entry(0, 10, 1, "f"), entry(1, 5, 1, "f"), entry(0, 3, 1, "f", 1), exit_ev(0, 20, 1, "f")});
    auto r = testing::reader_of(text);
    int n = 0;
    while (r.next()) {
        ++n;
    }
    CHECK(n == 4);
}

TEST_CASE("malformed lines abort or are skipped by policy")
{
    const auto text = testing::lines_of({entry(0, 1, 1, "f")}) + "junk\n" + testing::lines_of({exit_ev(0, 2, 1, "f")});
    {
        auto r = testing::reader_of(text);
        CHECK(r.next());
        try {
            r.next();
            FAIL("accepted junk");
        } catch (const MalformedRecord& e) {
            CHECK(e.position() == 2);
        }
    }
    {
        auto r = testing::reader_of(text, {OrderingPolicy::Strict, MalformedPolicy::Skip});
        int n = 0;
        while (r.next()) {
            ++n;
        }
        CHECK(n == 2);
        CHECK(r.skipped_malformed() == 1);
    }
}

TEST_CASE("a function id renamed within a source is rejected")
{
    const auto text = testing::lines_of({entry(0, 1, 1, "f"), exit_ev(0, 2, 1, "other")});
    auto r = testing::reader_of(text);
    CHECK(r.next());
    CHECK_THROWS_AS(r.next(), MalformedRecord);
}

TEST_CASE("reader opens files and reports a missing path")
{
    testing::TempDir dir("tm");
    const auto path = dir / "a.trace";
    {
        std::ofstream(path) << testing::lines_of({entry(0, 1, 1, "f"), exit_ev(0, 4, 1, "f")});
    }
    auto r = TraceReader::open(path.string());
    CHECK(r.next());
    CHECK(r.next());
    CHECK_FALSE(r.next());
    CHECK_THROWS_AS(TraceReader::open((dir / "missing.trace").string()), DataError);
}

TEST_CASE("reader consumes a tcp stream endpoint")
{
    auto listener = net::Listener::bind({"127.0.0.1", 0});
    const auto port = listener.port();
    const auto text = testing::lines_of({entry(0, 1, 1, "f"), entry(0, 2, 2, "g"), exit_ev(0, 3, 2, "g"),
        exit_ev(0, 9, 1, "f")});
    std::thread server([&] {
        auto c = listener.accept();
        REQUIRE(c);
        c->send_raw(text.substr(0, 17));
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
        c->send_raw(text.substr(17));
        c->close();
    });
    auto r = TraceReader::open("tcp://127.0.0.1:" + std::to_string(port));
    std::vector<TraceEvent> got;
    while (auto e = r.next()) {
        got.push_back(*e);
    }
    server.join();
    CHECK(got.size() == 4);
    CHECK(got.back() == exit_ev(0, 9, 1, "f"));
}

TEST_CASE("endpoint parsing")
{
    CHECK(net::parse_endpoint("tcp://h:12").host == "h");
    CHECK(net::parse_endpoint("h:12").port == 12);
    CHECK(net::parse_endpoint(":7").port == 7);
    CHECK_THROWS(net::parse_endpoint("nocolon"));
}
