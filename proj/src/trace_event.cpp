#include "tracead/trace_event.hpp"

#include "tracead/error.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <limits>

namespace tracead {

using nlohmann::json;

std::string StreamKey::to_string() const
{
    return "app" + std::to_string(app) + "/rank" + std::to_string(rank) + "/thread"
        + std::to_string(thread);
}

std::string_view to_string(FuncKind kind) noexcept
{
    return kind == FuncKind::Entry ? "ENTRY" : "EXIT";
}

std::string_view to_string(CommKind kind) noexcept
{
    return kind == CommKind::Send ? "SEND" : "RECV";
}

void append_json_string(std::string& out, std::string_view s)
{
    static constexpr char hex[] = "0123456789abcdef";
    out.push_back('"');
    for (char ch : s) {
        auto c = static_cast<unsigned char>(ch);
        switch (c) {
        case '"': out += "\\\""; break;
        case '\\': out += "\\\\"; break;
        case '\n': out += "\\n"; break;
        case '\r': out += "\\r"; break;
        case '\t': out += "\\t"; break;
        case '\b': out += "\\b"; break;
        case '\f': out += "\\f"; break;
        default:
            if (c < 0x20) {
                out += "\\u00";
                out.push_back(hex[c >> 4]);
                out.push_back(hex[c & 0xf]);
            } else {
                out.push_back(ch);
            }
        }
    }
    out.push_back('"');
}

namespace {

template <typename T>
void append_number(std::string& out, T value)
{
    char buf[24];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    out.append(buf, end);
}

void append_field(std::string& out, std::string_view key, std::uint64_t value)
{
    out.push_back(',');
    out.push_back('"');
    out += key;
    out += "\":";
    append_number(out, value);
}

void append_header(std::string& out, std::string_view type, const TraceEvent& e)
{
    out += "{\"type\":\"";
    out += type;
    out.push_back('"');
    append_field(out, "app", e.app);
    append_field(out, "rank", e.rank);
    append_field(out, "thread", e.thread);
    append_field(out, "ts", e.timestamp_us);
}

[[noreturn]] void fail(std::uint64_t pos, std::string reason)
{
    throw MalformedRecord(pos, std::move(reason));
}

const json& require(const json& obj, const char* key, std::uint64_t pos)
{
    auto it = obj.find(key);
    if (it == obj.end()) {
        fail(pos, std::string("missing field '") + key + "'");
    }
    return *it;
}

std::uint64_t require_unsigned(const json& obj, const char* key, std::uint64_t pos,
    std::uint64_t max = std::numeric_limits<std::uint64_t>::max())
{
    const json& v = require(obj, key, pos);
    if (v.is_number_unsigned()) {
        auto x = v.get<std::uint64_t>();
        if (x > max) {
            fail(pos, std::string("field '") + key + "' out of range");
        }
        return x;
    }
    if (v.is_number_integer()) {
        fail(pos, std::string("negative value for field '") + key + "'");
    }
    fail(pos, std::string("field '") + key + "' is not a non-negative integer");
}

std::int64_t require_integer(const json& obj, const char* key, std::uint64_t pos)
{
    const json& v = require(obj, key, pos);
    if (v.is_number_integer() && !v.is_number_unsigned()) {
        return v.get<std::int64_t>();
    }
    if (v.is_number_unsigned()) {
        auto x = v.get<std::uint64_t>();
        if (x > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) {
            fail(pos, std::string("field '") + key + "' out of range");
        }
        return static_cast<std::int64_t>(x);
    }
    fail(pos, std::string("field '") + key + "' is not an integer");
}

std::string require_string(const json& obj, const char* key, std::uint64_t pos)
{
    const json& v = require(obj, key, pos);
    if (!v.is_string()) {
        fail(pos, std::string("field '") + key + "' is not a string");
    }
    return v.get<std::string>();
}

constexpr std::uint64_t kU32Max = std::numeric_limits<std::uint32_t>::max();

} // namespace

void encode_event(const TraceEvent& e, std::string& out)
{
    if (const auto* f = std::get_if<FuncPayload>(&e.payload)) {
        append_header(out, to_string(f->kind), e);
        append_field(out, "fid", f->func_id);
        out += ",\"fname\":";
        append_json_string(out, f->func_name);
    } else {
        const auto& c = std::get<CommPayload>(e.payload);
        append_header(out, to_string(c.kind), e);
        append_field(out, "partner", c.partner_rank);
        out += ",\"tag\":";
        append_number(out, c.tag);
        append_field(out, "bytes", c.size_bytes);
    }
    out += "}\n";
}

std::string encode_event(const TraceEvent& e)
{
    std::string out;
    out.reserve(96);
    encode_event(e, out);
    return out;
}

std::string encode_meta(const MetaRecord& m)
{
    std::string out = "{\"type\":\"META\",\"run_id\":";
    append_json_string(out, m.run_id);
    append_field(out, "epoch_us", m.epoch_us);
    if (!m.fmap.empty()) {
        out += ",\"fmap\":{";
        bool first = true;
        for (const auto& [fid, name] : m.fmap) {
            if (!first) {
                out.push_back(',');
            }
            first = false;
            append_json_string(out, std::to_string(fid));
            out.push_back(':');
            append_json_string(out, name);
        }
        out.push_back('}');
    }
    out += "}\n";
    return out;
}

TraceRecord decode_record(std::string_view line, std::uint64_t position)
{
    while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) {
        line.remove_suffix(1);
    }
    json obj = json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (obj.is_discarded()) {
        fail(position, "not a valid record");
    }
    if (!obj.is_object()) {
        fail(position, "record is not an object");
    }
    const std::string type = require_string(obj, "type", position);

    if (type == "META") {
        MetaRecord m;
        m.run_id = require_string(obj, "run_id", position);
        m.epoch_us = require_unsigned(obj, "epoch_us", position);
        if (auto it = obj.find("fmap"); it != obj.end()) {
            if (!it->is_object()) {
                fail(position, "field 'fmap' is not an object");
            }
            for (const auto& [key, value] : it->items()) {
                std::uint64_t fid = 0;
                auto [p, ec] = std::from_chars(key.data(), key.data() + key.size(), fid);
                if (ec != std::errc() || p != key.data() + key.size() || fid > kU32Max) {
                    fail(position, "fmap key '" + key + "' is not a function id");
                }
                if (!value.is_string()) {
                    fail(position, "fmap value is not a string");
                }
                m.fmap.emplace(static_cast<FuncId>(fid), value.get<std::string>());
            }
        }
        return m;
    }

    TraceEvent e;
    e.app = static_cast<std::uint32_t>(require_unsigned(obj, "app", position, kU32Max));
    e.rank = static_cast<std::uint32_t>(require_unsigned(obj, "rank", position, kU32Max));
    e.thread = static_cast<std::uint32_t>(require_unsigned(obj, "thread", position, kU32Max));
    e.timestamp_us = require_unsigned(obj, "ts", position);

    if (type == "ENTRY" || type == "EXIT") {
        FuncPayload f;
        f.kind = type == "ENTRY" ? FuncKind::Entry : FuncKind::Exit;
        f.func_id = static_cast<FuncId>(require_unsigned(obj, "fid", position, kU32Max));
        f.func_name = require_string(obj, "fname", position);
        e.payload = std::move(f);
    } else if (type == "SEND" || type == "RECV") {
        CommPayload c;
        c.kind = type == "SEND" ? CommKind::Send : CommKind::Recv;
        c.partner_rank = static_cast<std::uint32_t>(require_unsigned(obj, "partner", position, kU32Max));
        c.tag = require_integer(obj, "tag", position);
        c.size_bytes = require_unsigned(obj, "bytes", position);
        e.payload = c;
    } else {
        fail(position, "unknown record type '" + type + "'");
    }
    return e;
}

TraceEvent decode_event(std::string_view line, std::uint64_t position)
{
    auto rec = decode_record(line, position);
    if (std::holds_alternative<MetaRecord>(rec)) {
        fail(position, "META record where an event was expected");
    }
    return std::get<TraceEvent>(std::move(rec));
}

} // namespace tracead
