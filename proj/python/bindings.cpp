#include "tracead/ad_engine.hpp"
#include "tracead/error.hpp"
#include "tracead/metrics.hpp"
#include "tracead/param_server.hpp"
#include "tracead/pipeline.hpp"
#include "tracead/provenance.hpp"
#include "tracead/synth.hpp"
#include "tracead/viz_gateway.hpp"

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace tracead;

namespace {

Label label_of(const std::string& s)
{
    if (auto l = label_from_code(s)) {
        return *l;
    }
    if (s == "ANOMALY") {
        return Label::Anomaly;
    }
    if (s == "NORMAL") {
        return Label::Normal;
    }
    if (s == "UNLABELED") {
        return Label::Unlabeled;
    }
    throw DataError("unknown label '" + s + "'");
}

/// (app, rank, span_id, label) tuples to label rows.
std::vector<LabeledSpan> rows_of(const std::vector<std::tuple<std::uint32_t, std::uint32_t, SpanId, std::string>>& v)
{
    std::vector<LabeledSpan> out;
    out.reserve(v.size());
    for (const auto& [app, rank, id, label] : v) {
        LabeledSpan l;
        l.app = app;
        l.rank = rank;
        l.span_id = id;
        l.label = label_of(label);
        out.push_back(l);
    }
    return out;
}

py::dict run_to_dict(const RunResult& r)
{
    py::dict d;
    d["spans"] = r.spans;
    d["anomalies"] = r.anomalies;
    d["raw_bytes"] = r.raw_bytes;
    d["provenance_bytes"] = r.provenance_bytes;
    d["records"] = r.records_written;
    d["spans_stored"] = r.spans_stored;
    d["incomplete_spans"] = r.incomplete_spans;
    d["mismatches"] = r.mismatches;
    d["unsent_updates"] = r.unsent_updates;
    d["wall_seconds"] = r.wall_seconds;
    py::list labels;
    for (const auto& l : r.labels) {
        labels.append(py::make_tuple(l.app, l.rank, l.span_id, std::string(1, label_code(l.label))));
    }
    d["labels"] = labels;
    py::list reports;
    for (const auto& rep : r.reports) {
        py::dict x;
        x["app"] = rep.app;
        x["rank"] = rep.rank;
        x["step"] = rep.step_id;
        x["range"] = py::make_tuple(rep.t_begin_us, rep.t_end_us);
        x["anom"] = rep.n_anomalies;
        x["spans"] = rep.n_spans;
        reports.append(x);
    }
    d["reports"] = reports;
    return d;
}

} // namespace

PYBIND11_MODULE(_tracead, m)
{
    m.doc() = "Trace anomaly detection core";

    // Translators run newest first, so the base class is registered first.
    auto& error = py::register_exception<Error>(m, "Error");
    py::register_exception<DataError>(m, "DataError", error.ptr());
    py::register_exception<ProtocolError>(m, "ProtocolError", error.ptr());

    py::class_<RunStats>(m, "RunStats")
        .def(py::init<>())
        .def(py::init([](const std::vector<double>& xs) { return stats_of(xs); }), py::arg("values"))
        .def("add", &RunStats::add, py::arg("x"))
        .def_property_readonly("n", &RunStats::n)
        .def_property_readonly("mean", &RunStats::mean)
        .def_property_readonly("m2", &RunStats::m2)
        .def_property_readonly("min", &RunStats::min)
        .def_property_readonly("max", &RunStats::max)
        .def_property_readonly("variance", &RunStats::variance)
        .def_property_readonly("stddev", &RunStats::stddev)
        .def("__eq__", [](const RunStats& a, const RunStats& b) { return a == b; })
        .def("__repr__", [](const RunStats& s) {
            return "RunStats(n=" + std::to_string(s.n()) + ", mean=" + std::to_string(s.mean())
                + ", m2=" + std::to_string(s.m2()) + ")";
        });
    m.def("merge_stats", &merge_stats, py::arg("a"), py::arg("b"));
    m.def("unmerge_stats", &unmerge_stats, py::arg("total"), py::arg("part"));

    m.def(
        "label_span",
        [](double runtime, const RunStats& s, double alpha, std::uint64_t n_min) {
            ADConfig cfg;
            cfg.alpha = alpha;
            cfg.n_min = n_min;
            return std::string(to_string(label_span(runtime, s, cfg)));
        },
        py::arg("runtime_us"), py::arg("stats"), py::arg("alpha") = 6.0, py::arg("n_min") = 10);
    m.def(
        "select_context_indices",
        [](const std::vector<std::string>& labels, std::uint32_t k) {
            std::vector<Label> ls;
            for (const auto& l : labels) {
                ls.push_back(label_of(l));
            }
            return select_context_indices(ls, k);
        },
        py::arg("labels"), py::arg("k") = 5);

    m.def("compute_overhead", &compute_overhead, py::arg("t_base"), py::arg("t_instrumented"));
    m.def("reduction_report", &reduction_report, py::arg("raw_bytes"), py::arg("provenance_bytes"));
    m.def(
        "compare_labels",
        [](const std::vector<std::tuple<std::uint32_t, std::uint32_t, SpanId, std::string>>& oracle,
            const std::vector<std::tuple<std::uint32_t, std::uint32_t, SpanId, std::string>>& candidate) {
            return compare_labels(rows_of(oracle), rows_of(candidate));
        },
        py::arg("oracle"), py::arg("candidate"));

    m.def(
        "synth",
        [](const std::filesystem::path& out, std::uint32_t ranks, std::uint32_t steps, double rate,
            double multiplier, std::uint64_t seed, std::uint32_t threads, std::uint32_t apps, double flush) {
            synth::SynthSpec spec = synth::default_spec();
            spec.n_ranks = ranks;
            spec.steps = steps;
            spec.anomaly_rate = rate;
            spec.multiplier = multiplier;
            spec.seed = seed;
            spec.n_threads = threads;
            spec.n_apps = apps;
            spec.flush_interval_s = flush;
            const auto r = synth::generate(spec, out);
            py::dict d;
            std::vector<std::string> files;
            for (const auto& f : r.trace_files) {
                files.push_back(f.string());
            }
            d["traces"] = files;
            d["spans"] = r.spans;
            d["events"] = r.events;
            d["bytes"] = r.bytes;
            py::list truth;
            for (const auto& t : r.truth) {
                truth.append(py::make_tuple(t.app, t.rank, t.span, t.func_id));
            }
            d["truth"] = truth;
            return d;
        },
        py::arg("out_dir"), py::arg("ranks") = 4, py::arg("steps") = 6, py::arg("rate") = 0.01,
        py::arg("multiplier") = 15.0, py::arg("seed") = 1, py::arg("threads") = 1, py::arg("apps") = 1,
        py::arg("flush") = 1.0);

    m.def(
        "run_offline",
        [](const std::vector<std::string>& sources, const std::string& mode, std::uint32_t workers,
            std::optional<std::filesystem::path> out_dir, double alpha, std::uint32_t k, std::uint64_t n_min,
            double flush) {
            RunOptions opt;
            opt.cfg.alpha = alpha;
            opt.cfg.k_context = k;
            opt.cfg.n_min = n_min;
            opt.cfg.flush_interval_s = flush;
            if (mode == "central") {
                opt.mode = RunMode::Central;
            } else if (mode == "dist") {
                opt.mode = RunMode::Distributed;
            } else {
                throw InvalidConfig("mode must be 'central' or 'dist'");
            }
            opt.workers = workers;
            opt.out_dir = out_dir;
            RunResult r;
            {
                py::gil_scoped_release release;
                r = run_offline(sources, opt);
            }
            return run_to_dict(r);
        },
        py::arg("sources"), py::arg("mode") = "central", py::arg("workers") = 1, py::arg("out_dir") = py::none(),
        py::arg("alpha") = 6.0, py::arg("k") = 5, py::arg("n_min") = 10, py::arg("flush") = 1.0);
    m.def(
        "trace_sources", [](const std::filesystem::path& dir) { return trace_sources(dir); }, py::arg("dir"));

    m.def(
        "query_provenance",
        [](const std::filesystem::path& dir, std::optional<std::uint32_t> app, std::optional<std::uint32_t> rank,
            std::optional<std::pair<StepId, StepId>> steps, std::optional<std::pair<Micros, Micros>> time,
            std::optional<FuncId> fid) {
            prov::QueryFilter f{app, rank, steps, time, fid};
            std::vector<std::string> out;
            for (const auto& r : prov::ProvenanceStore(dir).query(f)) {
                out.push_back(prov::encode_record(r));
            }
            return out;
        },
        py::arg("prov_dir"), py::arg("app") = py::none(), py::arg("rank") = py::none(),
        py::arg("steps") = py::none(), py::arg("time") = py::none(), py::arg("fid") = py::none(),
        "Matching records as JSON lines, ordered by entry time.");

    py::class_<ps::ParamServer>(m, "ParamServer")
        .def(py::init([](const std::string& host, std::uint16_t port, std::optional<std::string> viz,
                          double push_interval) {
            ps::ServerOptions so;
            so.listen = {host, port};
            so.push_interval_s = push_interval;
            if (viz) {
                so.push_sink = ps::http_push_sink(net::parse_endpoint(*viz));
            }
            return std::make_unique<ps::ParamServer>(so);
        }),
            py::arg("host") = "127.0.0.1", py::arg("port") = 0, py::arg("viz") = py::none(),
            py::arg("push_interval") = 1.0)
        .def("start", &ps::ParamServer::start)
        .def("stop", &ps::ParamServer::stop, py::call_guard<py::gil_scoped_release>())
        .def_property_readonly("port", &ps::ParamServer::port)
        .def_property_readonly("version", &ps::ParamServer::version)
        .def("push_tick", &ps::ParamServer::push_tick, py::call_guard<py::gil_scoped_release>())
        .def("handle_line", &ps::ParamServer::handle_line, py::arg("line"));

    py::class_<viz::VizGateway>(m, "VizGateway")
        .def(py::init([](const std::filesystem::path& prov_dir, const std::string& host, std::uint16_t port) {
            viz::GatewayOptions go;
            go.listen = {host, port};
            go.prov_dir = prov_dir;
            return std::make_unique<viz::VizGateway>(go);
        }),
            py::arg("prov_dir"), py::arg("host") = "127.0.0.1", py::arg("port") = 0)
        .def("start", &viz::VizGateway::start)
        .def("stop", &viz::VizGateway::stop, py::call_guard<py::gil_scoped_release>())
        .def("wait_idle", &viz::VizGateway::wait_idle, py::call_guard<py::gil_scoped_release>())
        .def_property_readonly("port", &viz::VizGateway::port);
}
