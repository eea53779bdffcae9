#include "tracead/provenance.hpp"

#include "tracead/error.hpp"
#include "tracead/records.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fcntl.h>
#include <fstream>
#include <sys/stat.h>
#include <tuple>
#include <unistd.h>
#include <unordered_map>

namespace tracead::prov {

using nlohmann::json;
namespace rec = tracead::records;

namespace {

bool entry_before(const ExecSpan& a, const ExecSpan& b)
{
    if (a.entry_us != b.entry_us) {
        return a.entry_us < b.entry_us;
    }
    return a.span_id < b.span_id;
}

std::string sanitize_run_id(const std::string& run_id)
{
    std::string out;
    for (char c : run_id) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-'
            || c == '_' || c == '.';
        if (ok) {
            out += c;
        } else {
            char buf[4];
            std::snprintf(buf, sizeof buf, "%%%02X", static_cast<unsigned char>(c));
            out += buf;
        }
    }
    return out;
}

fs::path env_file_name(const std::string& run_id)
{
    return "env." + sanitize_run_id(run_id) + ".json";
}

void write_all(int fd, const std::string& data)
{
    std::size_t off = 0;
    while (off < data.size()) {
        const ssize_t n = ::write(fd, data.data() + off, data.size() - off);
        if (n < 0) {
            if (errno == EINTR) {
                continue;
            }
            throw StorageError(std::string("write failed: ") + std::strerror(errno));
        }
        off += static_cast<std::size_t>(n);
    }
}

/// Complete lines of a file starting at offset; an unterminated tail is
/// a write in progress or a torn write and is skipped.
template <class F>
void for_each_line(const fs::path& path, std::uint64_t offset, F&& f)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        return;
    }
    in.seekg(static_cast<std::streamoff>(offset));
    std::string line;
    std::uint64_t pos = offset;
    while (std::getline(in, line)) {
        const bool terminated = !in.eof();
        if (!terminated) {
            break;
        }
        const std::uint64_t at = pos;
        pos += line.size() + 1;
        if (line.empty()) {
            continue;
        }
        if (!f(line, at)) {
            break;
        }
    }
}

std::optional<RankKey> parse_store_name(const std::string& name)
{
    unsigned a = 0;
    unsigned r = 0;
    int consumed = 0;
    if (std::sscanf(name.c_str(), "app%u_rank%u.prov.jsonl%n", &a, &r, &consumed) == 2
        && static_cast<std::size_t>(consumed) == name.size()) {
        return RankKey{a, r};
    }
    return std::nullopt;
}

bool matches(const ProvenanceRecord& r, const QueryFilter& f)
{
    if (f.app && r.app != *f.app) {
        return false;
    }
    if (f.rank && r.rank != *f.rank) {
        return false;
    }
    if (f.steps && (r.step_id < f.steps->first || r.step_id > f.steps->second)) {
        return false;
    }
    if (f.time && (r.anomaly.exit_us < f.time->first || r.anomaly.entry_us > f.time->second)) {
        return false;
    }
    if (f.func_id && r.anomaly.func_id != *f.func_id) {
        return false;
    }
    return true;
}

} // namespace

fs::path record_file_name(RankKey key)
{
    return "app" + std::to_string(key.app) + "_rank" + std::to_string(key.rank) + ".prov.jsonl";
}

fs::path index_file_name(RankKey key)
{
    return "app" + std::to_string(key.app) + "_rank" + std::to_string(key.rank) + ".prov.idx";
}

std::vector<ProvenanceRecord> build_records(std::span<const ExecSpan> spans, const ADConfig& cfg, StepId step,
    const NameLookup& names, const LabelLookup& labels)
{
    std::vector<ProvenanceRecord> out;
    const auto groups = group_by_function(spans);
    const std::size_t k = cfg.k_context;
    std::map<FuncId, std::string> step_names;
    for (const auto& s : spans) {
        step_names.emplace(s.func_id, s.func_name);
    }
    auto name_of = [&](FuncId f) {
        std::string n = names ? names(f) : std::string();
        if (n.empty()) {
            if (auto it = step_names.find(f); it != step_names.end()) {
                n = it->second;
            }
        }
        return n;
    };
    for (const auto& [fid, idx] : groups) {
        std::vector<Label> group_labels;
        group_labels.reserve(idx.size());
        for (std::size_t i : idx) {
            group_labels.push_back(spans[i].label);
        }
        for (std::size_t pos = 0; pos < idx.size(); ++pos) {
            if (group_labels[pos] != Label::Anomaly) {
                continue;
            }
            const ExecSpan& a = spans[idx[pos]];
            ProvenanceRecord r;
            r.app = a.app;
            r.rank = a.rank;
            r.step_id = step;
            r.anomaly = a;
            const std::size_t lo = pos >= k ? pos - k : 0;
            const std::size_t hi = std::min(idx.size() - 1, pos + k);
            for (std::size_t q = lo; q <= hi; ++q) {
                if (q == pos || group_labels[q] == Label::Anomaly) {
                    continue;
                }
                ExecSpan c = spans[idx[q]];
                c.ancestry.clear();
                c.descendants.clear();
                c.descendants_truncated = false;
                (q < pos ? r.context_before : r.context_after).push_back(std::move(c));
            }
            for (const auto& f : a.ancestry) {
                r.call_path.emplace_back(f.func_id, name_of(f.func_id));
            }
            r.call_path.emplace_back(a.func_id, a.func_name);
            for (const auto& d : a.descendants) {
                if (!r.desc_names.count(d.func_id)) {
                    r.desc_names.emplace(d.func_id, name_of(d.func_id));
                }
            }
            if (labels) {
                for (auto& d : r.anomaly.descendants) {
                    d.label = labels(d.span_id);
                }
            }
            out.push_back(std::move(r));
        }
    }
    std::sort(out.begin(), out.end(),
        [](const ProvenanceRecord& x, const ProvenanceRecord& y) { return entry_before(x.anomaly, y.anomaly); });
    return out;
}

std::string encode_record(const ProvenanceRecord& r)
{
    // Fields in fixed order, led by the record type as in the trace grammar.
    const std::string& fname = r.anomaly.func_name;
    std::string out = R"({"type":"PROV","app":)";
    out += std::to_string(r.app);
    out += ",\"rank\":" + std::to_string(r.rank);
    out += ",\"step\":" + std::to_string(r.step_id);
    out += ",\"anomaly\":" + rec::span_to_json(r.anomaly, fname).dump();
    out += ",\"fname\":" + json(fname).dump();
    auto spans = [&](const char* key, const std::vector<ExecSpan>& list) {
        json a = json::array();
        for (const auto& s : list) {
            a.push_back(rec::span_to_json(s, fname));
        }
        out += ",\"";
        out += key;
        out += "\":" + a.dump();
    };
    spans("before", r.context_before);
    spans("after", r.context_after);
    json path = json::array();
    for (const auto& [fid, name] : r.call_path) {
        path.push_back(json::array({fid, name}));
    }
    out += ",\"call_path\":" + path.dump();
    auto frames = [&](const char* key, const std::vector<SpanFrame>& list) {
        json a = json::array();
        for (const auto& f : list) {
            a.push_back(rec::frame_to_json(f));
        }
        out += ",\"";
        out += key;
        out += "\":" + a.dump();
    };
    frames("stack", r.anomaly.ancestry);
    frames("desc", r.anomaly.descendants);
    json dnames = json::array();
    for (const auto& [fid, name] : r.desc_names) {
        dnames.push_back(json::array({fid, name}));
    }
    out += ",\"desc_names\":" + dnames.dump();
    if (r.anomaly.descendants_truncated) {
        out += ",\"trunc\":true";
    }
    out += '}';
    return out;
}

ProvenanceRecord decode_record(std::string_view line)
{
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("malformed provenance record: ") + e.what());
    }
    try {
        if (rec::get_str(j, "type") != "PROV") {
            throw DataError("not a provenance record");
        }
        ProvenanceRecord r;
        r.app = static_cast<std::uint32_t>(rec::get_u64(j, "app"));
        r.rank = static_cast<std::uint32_t>(rec::get_u64(j, "rank"));
        r.step_id = rec::get_u64(j, "step");
        const std::string fname = rec::get_str(j, "fname");
        r.anomaly = rec::span_from_json(j.at("anomaly"), r.app, r.rank, fname);
        for (const auto& s : j.at("before")) {
            r.context_before.push_back(rec::span_from_json(s, r.app, r.rank, fname));
        }
        for (const auto& s : j.at("after")) {
            r.context_after.push_back(rec::span_from_json(s, r.app, r.rank, fname));
        }
        for (const auto& p : j.at("call_path")) {
            if (!p.is_array() || p.size() != 2 || !p[0].is_number_unsigned() || !p[1].is_string()) {
                throw DataError("malformed call_path entry");
            }
            r.call_path.emplace_back(p[0].get<FuncId>(), p[1].get<std::string>());
        }
        for (const auto& f : j.at("stack")) {
            r.anomaly.ancestry.push_back(rec::frame_from_json(f));
        }
        for (const auto& f : j.at("desc")) {
            r.anomaly.descendants.push_back(rec::frame_from_json(f));
        }
        if (auto it = j.find("desc_names"); it != j.end()) {
            for (const auto& p : *it) {
                if (!p.is_array() || p.size() != 2 || !p[0].is_number_unsigned() || !p[1].is_string()) {
                    throw DataError("malformed desc_names entry");
                }
                r.desc_names.emplace(p[0].get<FuncId>(), p[1].get<std::string>());
            }
        }
        if (auto it = j.find("trunc"); it != j.end() && it->is_boolean()) {
            r.anomaly.descendants_truncated = it->get<bool>();
        }
        return r;
    } catch (const ProtocolError& e) {
        throw DataError(std::string("malformed provenance record: ") + e.what());
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed provenance record: ") + e.what());
    }
}

RankStoreWriter::RankStoreWriter(fs::path dir, RankKey key, StoreOptions options)
    : dir_(std::move(dir))
    , key_(key)
    , options_(options)
    , record_path_(dir_ / record_file_name(key))
    , index_path_(dir_ / index_file_name(key))
{
}

void RankStoreWriter::open_existing()
{
    loaded_ = true;
    std::error_code ec;
    if (!fs::exists(record_path_, ec)) {
        return;
    }
    const std::uint64_t size = fs::file_size(record_path_, ec);
    std::uint64_t good = 0;
    for_each_line(record_path_, 0, [&](const std::string& line, std::uint64_t at) {
        try {
            const ProvenanceRecord r = decode_record(line);
            written_.emplace(r.step_id, r.anomaly.span_id);
            if (!last_indexed_step_ || r.step_id > *last_indexed_step_) {
                last_indexed_step_ = r.step_id;
            }
            good = at + line.size() + 1;
            return true;
        } catch (const DataError&) {
            return false;
        }
    });
    if (good != size) {
        // Drop a torn tail so the next append starts on a record boundary.
        fs::resize_file(record_path_, good, ec);
        if (ec) {
            throw StorageError("cannot repair " + record_path_.string() + ": " + ec.message());
        }
    }
    file_size_ = good;
}

void RankStoreWriter::append(const fs::path& path, const std::string& data)
{
    int attempts = 0;
    for (;;) {
        const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
        if (fd < 0) {
            if (attempts++ < options_.retries) {
                continue;
            }
            throw StorageError("cannot open " + path.string() + ": " + std::strerror(errno));
        }
        struct stat st {};
        ::fstat(fd, &st);
        const off_t before = st.st_size;
        try {
            write_all(fd, data);
            if (options_.fsync) {
                ::fsync(fd);
            }
            ::close(fd);
            return;
        } catch (const StorageError&) {
            // Roll back so a failed batch never leaves a partial record behind.
            if (::ftruncate(fd, before) != 0) {
                ::close(fd);
                throw;
            }
            ::close(fd);
            if (attempts++ >= options_.retries) {
                throw;
            }
        }
    }
}

std::size_t RankStoreWriter::write_records(std::span<const ProvenanceRecord> records)
{
    if (records.empty()) {
        return 0;
    }
    if (!loaded_) {
        open_existing();
    }
    std::vector<const ProvenanceRecord*> fresh;
    std::set<std::pair<StepId, SpanId>> batch_keys;
    for (const auto& r : records) {
        if (r.app != key_.app || r.rank != key_.rank) {
            throw DataError("provenance record for app " + std::to_string(r.app) + " rank " + std::to_string(r.rank)
                + " sent to the store of app " + std::to_string(key_.app) + " rank " + std::to_string(key_.rank));
        }
        if (r.anomaly.label != Label::Anomaly) {
            throw DataError("provenance record whose anomaly span is not labeled ANOMALY");
        }
        const std::pair<StepId, SpanId> key{r.step_id, r.anomaly.span_id};
        if (written_.count(key) != 0 || !batch_keys.insert(key).second) {
            continue;
        }
        fresh.push_back(&r);
    }
    if (fresh.empty()) {
        return 0;
    }
    for (const ProvenanceRecord* r : fresh) {
        if (last_indexed_step_ && r->step_id < *last_indexed_step_) {
            throw DataError("provenance record for step " + std::to_string(r->step_id)
                + " arrived after step " + std::to_string(*last_indexed_step_));
        }
    }
    std::stable_sort(fresh.begin(), fresh.end(), [](const ProvenanceRecord* a, const ProvenanceRecord* b) {
        if (a->step_id != b->step_id) {
            return a->step_id < b->step_id;
        }
        return entry_before(a->anomaly, b->anomaly);
    });
    std::error_code ec;
    fs::create_directories(dir_, ec);

    std::string data;
    std::string index;
    std::uint64_t offset = file_size_;
    std::optional<StepId> last_step = last_indexed_step_;
    for (const ProvenanceRecord* r : fresh) {
        if (!last_step || r->step_id > *last_step) {
            index += json{{"step", r->step_id}, {"offset", offset}}.dump();
            index += '\n';
            last_step = r->step_id;
        }
        std::string line = encode_record(*r);
        line += '\n';
        offset += line.size();
        data += line;
    }
    append(record_path_, data);
    if (!index.empty()) {
        append(index_path_, index);
    }
    file_size_ = offset;
    last_indexed_step_ = last_step;
    bytes_written_ += data.size() + index.size();
    for (const ProvenanceRecord* r : fresh) {
        written_.emplace(r->step_id, r->anomaly.span_id);
    }
    return fresh.size();
}

ProvenanceStore::ProvenanceStore(fs::path dir) : dir_(std::move(dir)) {}

std::vector<RankKey> ProvenanceStore::ranks() const
{
    std::vector<RankKey> out;
    std::error_code ec;
    if (!fs::is_directory(dir_, ec)) {
        return out;
    }
    for (const auto& entry : fs::directory_iterator(dir_, ec)) {
        if (auto key = parse_store_name(entry.path().filename().string())) {
            out.push_back(*key);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<ProvenanceRecord> ProvenanceStore::query(const QueryFilter& filter) const
{
    std::vector<ProvenanceRecord> out;
    for (const RankKey key : ranks()) {
        if ((filter.app && key.app != *filter.app) || (filter.rank && key.rank != *filter.rank)) {
            continue;
        }
        std::uint64_t start = 0;
        if (filter.steps) {
            // Records are appended in step order; begin at the first indexed
            // step inside the range.
            bool found = false;
            for_each_line(dir_ / index_file_name(key), 0, [&](const std::string& line, std::uint64_t) {
                try {
                    const json j = json::parse(line);
                    if (rec::get_u64(j, "step") >= filter.steps->first) {
                        start = rec::get_u64(j, "offset");
                        found = true;
                        return false;
                    }
                } catch (const std::exception&) {
                    return false;
                }
                return true;
            });
            if (!found) {
                continue;
            }
        }
        for_each_line(dir_ / record_file_name(key), start, [&](const std::string& line, std::uint64_t) {
            ProvenanceRecord r = decode_record(line);
            if (filter.steps && r.step_id > filter.steps->second) {
                return false;
            }
            if (matches(r, filter)) {
                out.push_back(std::move(r));
            }
            return true;
        });
    }
    std::stable_sort(out.begin(), out.end(), [](const ProvenanceRecord& a, const ProvenanceRecord& b) {
        if (a.anomaly.entry_us != b.anomaly.entry_us) {
            return a.anomaly.entry_us < b.anomaly.entry_us;
        }
        return std::tie(a.app, a.rank, a.anomaly.span_id) < std::tie(b.app, b.rank, b.anomaly.span_id);
    });
    return out;
}

void ProvenanceStore::write_environment(const RunEnvironment& env) const
{
    if (env.run_id.empty()) {
        throw DataError("run environment without a run id");
    }
    std::error_code ec;
    fs::create_directories(dir_, ec);
    json cfg{{"alpha", env.config.alpha}, {"k", env.config.k_context}, {"n_min", env.config.n_min},
        {"flush", env.config.flush_interval_s},
        {"metric", env.config.metric == RuntimeMetric::Inclusive ? "inclusive" : "exclusive"}};
    json j{{"type", "ENV"}, {"run_id", env.run_id}, {"epoch_us", env.epoch_us}, {"hosts", env.hosts},
        {"config", std::move(cfg)}, {"metadata", env.metadata}};
    const fs::path path = dir_ / env_file_name(env.run_id);
    const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_CLOEXEC, 0644);
    if (fd < 0) {
        if (errno == EEXIST) {
            throw DuplicateRun(env.run_id);
        }
        throw StorageError("cannot create " + path.string() + ": " + std::strerror(errno));
    }
    try {
        write_all(fd, j.dump() + "\n");
    } catch (...) {
        ::close(fd);
        fs::remove(path, ec);
        throw;
    }
    ::close(fd);
}

std::optional<RunEnvironment> ProvenanceStore::read_environment(const std::string& run_id) const
{
    std::ifstream in(dir_ / env_file_name(run_id), std::ios::binary);
    if (!in) {
        return std::nullopt;
    }
    try {
        const json j = json::parse(in);
        RunEnvironment env;
        env.run_id = rec::get_str(j, "run_id");
        if (env.run_id != run_id) {
            return std::nullopt;
        }
        env.epoch_us = rec::get_u64(j, "epoch_us");
        env.hosts = j.at("hosts").get<std::vector<std::string>>();
        const json& cfg = j.at("config");
        env.config.alpha = rec::get_f64(cfg, "alpha");
        env.config.k_context = static_cast<std::uint32_t>(rec::get_u64(cfg, "k"));
        env.config.n_min = rec::get_u64(cfg, "n_min");
        env.config.flush_interval_s = rec::get_f64(cfg, "flush");
        env.config.metric = rec::get_str(cfg, "metric") == "exclusive" ? RuntimeMetric::Exclusive
                                                                         : RuntimeMetric::Inclusive;
        env.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
        return env;
    } catch (const std::exception& e) {
        throw DataError(std::string("malformed run environment: ") + e.what());
    }
}

std::uint64_t ProvenanceStore::total_bytes() const
{
    std::uint64_t total = 0;
    std::error_code ec;
    for (const RankKey key : ranks()) {
        for (const fs::path& p : {dir_ / record_file_name(key), dir_ / index_file_name(key)}) {
            if (fs::exists(p, ec)) {
                total += fs::file_size(p, ec);
            }
        }
    }
    return total;
}

} // namespace tracead::prov
