#include "tracead/error.hpp"
#include "tracead/metrics.hpp"
#include "tracead/param_server.hpp"
#include "tracead/pipeline.hpp"
#include "tracead/provenance.hpp"
#include "tracead/synth.hpp"
#include "tracead/viz_gateway.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <iostream>
#include <thread>

namespace {

using namespace tracead;

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

void wait_for_signal()
{
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_stop.load()) {
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
}

struct ModeArg {
    RunMode mode = RunMode::Central;
    std::uint32_t workers = 1;
};

ModeArg parse_mode(const std::string& s)
{
    if (s == "central") {
        return {};
    }
    if (s.rfind("dist", 0) == 0) {
        ModeArg m{RunMode::Distributed, 1};
        if (s.size() > 4) {
            if (s[4] != ':') {
                throw InvalidConfig("mode must be central or dist:W");
            }
            try {
                const long w = std::stol(s.substr(5));
                if (w <= 0) {
                    throw InvalidConfig("worker count must be positive");
                }
                m.workers = static_cast<std::uint32_t>(w);
            } catch (const std::logic_error&) {
                throw InvalidConfig("mode must be central or dist:W");
            }
        }
        return m;
    }
    throw InvalidConfig("mode must be central or dist:W");
}

std::vector<std::string> resolve_sources(const std::vector<std::string>& inputs)
{
    std::vector<std::string> out;
    for (const auto& in : inputs) {
        std::error_code ec;
        if (std::filesystem::is_directory(in, ec)) {
            auto found = trace_sources(in);
            out.insert(out.end(), found.begin(), found.end());
        } else {
            out.push_back(in);
        }
    }
    return out;
}

void print_run(const RunResult& r)
{
    nlohmann::json j{{"spans", r.spans}, {"anomalies", r.anomalies}, {"steps", r.reports.size()},
        {"raw_bytes", r.raw_bytes}, {"provenance_bytes", r.provenance_bytes}, {"records", r.records_written},
        {"spans_stored", r.spans_stored}, {"incomplete_spans", r.incomplete_spans}, {"mismatches", r.mismatches},
        {"unsent_updates", r.unsent_updates}, {"wall_seconds", r.wall_seconds}};
    std::cout << j.dump() << '\n';
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"tracead: in-situ trace anomaly detection"};
    app.require_subcommand(1);

    ADConfig cfg;
    std::uint64_t seed = 1;
    app.add_option("--alpha", cfg.alpha, "Band width in standard deviations")->capture_default_str();
    app.add_option("--k", cfg.k_context, "Context calls kept on each side of an anomaly")->capture_default_str();
    app.add_option("--nmin", cfg.n_min, "Samples needed before a function is labeled")->capture_default_str();
    app.add_option("--flush", cfg.flush_interval_s, "Step length in seconds of trace time")->capture_default_str();
    app.add_option("--seed", seed, "RNG seed for synth")->capture_default_str();
    bool exclusive = false;
    app.add_flag("--exclusive", exclusive, "Label on exclusive instead of inclusive time");

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic trace corpus with ground truth");
    synth::SynthSpec spec = synth::default_spec();
    std::string synth_out = "traces";
    bool short_anomalies = false;
    synth_cmd->add_option("--out", synth_out, "Output directory")->capture_default_str();
    synth_cmd->add_option("--apps", spec.n_apps)->capture_default_str();
    synth_cmd->add_option("--ranks", spec.n_ranks)->capture_default_str();
    synth_cmd->add_option("--threads", spec.n_threads)->capture_default_str();
    synth_cmd->add_option("--steps", spec.steps, "Run length in steps")->capture_default_str();
    synth_cmd->add_option("--rate", spec.anomaly_rate, "Injection probability per call")->capture_default_str();
    synth_cmd->add_option("--multiplier", spec.multiplier, "Runtime multiplier of injected calls")
        ->capture_default_str();
    synth_cmd->add_flag("--short", short_anomalies, "Inject shortened calls instead of delays");
    synth_cmd->add_option("--run-id", spec.run_id)->capture_default_str();

    // run
    auto* run_cmd = app.add_subcommand("run", "Analyze trace files offline");
    std::vector<std::string> run_inputs;
    std::string mode_s = "central";
    std::string run_out;
    std::string run_ps;
    std::string run_viz;
    std::string run_id;
    double run_push_interval = 1.0;
    bool skip_out_of_order = false;
    bool no_labels = false;
    run_cmd->add_option("traces", run_inputs, "Trace files or directories of *.trace")->required();
    run_cmd->add_option("--mode", mode_s, "central or dist:W")->capture_default_str();
    run_cmd->add_option("--out", run_out, "Output directory (labels, reports, provenance)");
    run_cmd->add_option("--ps", run_ps, "External parameter server host:port");
    run_cmd->add_option("--viz", run_viz, "Viz gateway host:port for pushes");
    run_cmd->add_option("--push-interval", run_push_interval)->capture_default_str();
    run_cmd->add_option("--run-id", run_id, "Run id recorded with the provenance");
    run_cmd->add_flag("--skip-out-of-order", skip_out_of_order, "Drop timestamp regressions instead of failing");
    run_cmd->add_flag("--no-labels", no_labels, "Do not write labels.jsonl");

    // serve-ps
    auto* ps_cmd = app.add_subcommand("serve-ps", "Run the parameter server");
    std::string ps_listen = "127.0.0.1:5559";
    std::string ps_viz;
    double ps_push_interval = 1.0;
    ps_cmd->add_option("--listen", ps_listen)->capture_default_str();
    ps_cmd->add_option("--viz", ps_viz, "Viz gateway host:port");
    ps_cmd->add_option("--push-interval", ps_push_interval)->capture_default_str();

    // serve-viz
    auto* viz_cmd = app.add_subcommand("serve-viz", "Run the viz gateway");
    std::string viz_listen = "127.0.0.1:5560";
    std::string viz_prov = "out/prov";
    viz_cmd->add_option("--listen", viz_listen)->capture_default_str();
    viz_cmd->add_option("--prov", viz_prov, "Provenance directory")->capture_default_str();

    // provq
    auto* provq_cmd = app.add_subcommand("provq", "Query a provenance directory");
    std::string provq_dir = "out/prov";
    std::optional<std::uint32_t> q_app;
    std::optional<std::uint32_t> q_rank;
    std::optional<std::uint64_t> q_step_lo;
    std::optional<std::uint64_t> q_step_hi;
    std::optional<std::uint64_t> q_t0;
    std::optional<std::uint64_t> q_t1;
    std::optional<std::uint32_t> q_fid;
    std::string q_env;
    bool q_count = false;
    provq_cmd->add_option("--prov", provq_dir)->capture_default_str();
    provq_cmd->add_option("--app", q_app);
    provq_cmd->add_option("--rank", q_rank);
    provq_cmd->add_option("--step", q_step_lo, "Step (or first step with --step-to)");
    provq_cmd->add_option("--step-to", q_step_hi, "Last step, inclusive");
    provq_cmd->add_option("--t0", q_t0, "Time range start (us)");
    provq_cmd->add_option("--t1", q_t1, "Time range end (us)");
    provq_cmd->add_option("--fid", q_fid);
    provq_cmd->add_option("--env", q_env, "Print the environment of this run id");
    provq_cmd->add_flag("--count", q_count, "Print only the number of matching records");

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "Time CENTRAL and DISTRIBUTED runs of a corpus");
    std::vector<std::string> bench_inputs;
    std::vector<std::uint32_t> bench_workers{1, 2, 4};
    std::string bench_out;
    bench_cmd->add_option("traces", bench_inputs)->required();
    bench_cmd->add_option("--workers", bench_workers, "Worker counts")->delimiter(',')->capture_default_str();
    bench_cmd->add_option("--out", bench_out, "Output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        cfg.metric = exclusive ? RuntimeMetric::Exclusive : RuntimeMetric::Inclusive;
        cfg.validate();

        if (*synth_cmd) {
            spec.seed = seed;
            spec.flush_interval_s = cfg.flush_interval_s;
            spec.anomaly_kind = short_anomalies ? synth::AnomalyKind::Short : synth::AnomalyKind::Delay;
            const auto out = synth::generate(spec, synth_out);
            std::cout << nlohmann::json{{"traces", out.trace_files.size()}, {"spans", out.spans},
                             {"events", out.events}, {"bytes", out.bytes}, {"injected", out.truth.size()},
                             {"truth", out.truth_file.string()}}
                             .dump()
                      << '\n';
        } else if (*run_cmd) {
            RunOptions opt;
            opt.cfg = cfg;
            const ModeArg m = parse_mode(mode_s);
            opt.mode = m.mode;
            opt.workers = m.workers;
            opt.reader.ordering = skip_out_of_order ? OrderingPolicy::Skip : OrderingPolicy::Strict;
            if (!run_out.empty()) {
                opt.out_dir = run_out;
            }
            if (!run_ps.empty()) {
                opt.param_server = net::parse_endpoint(run_ps);
            }
            if (!run_viz.empty()) {
                opt.viz = net::parse_endpoint(run_viz);
            }
            opt.push_interval_s = run_push_interval;
            opt.run_id = run_id;
            opt.collect_labels = !no_labels;
            const auto result = run_offline(resolve_sources(run_inputs), opt);
            print_run(result);
            if (result.unsent_updates > 0) {
                std::cerr << "protocol error: " << result.unsent_updates
                          << " statistics updates never reached the parameter server\n";
                return 2;
            }
        } else if (*ps_cmd) {
            ps::ServerOptions so;
            so.listen = net::parse_endpoint(ps_listen);
            so.push_interval_s = ps_push_interval;
            if (!ps_viz.empty()) {
                so.push_sink = ps::http_push_sink(net::parse_endpoint(ps_viz));
            }
            ps::ParamServer server(so);
            server.start();
            std::cerr << "parameter server listening on " << so.listen.host << ':' << server.port() << '\n';
            wait_for_signal();
            if (so.push_sink) {
                server.push_tick();
            }
            server.stop();
        } else if (*viz_cmd) {
            viz::GatewayOptions go;
            go.listen = net::parse_endpoint(viz_listen);
            go.prov_dir = viz_prov;
            viz::VizGateway gw(go);
            gw.start();
            std::cerr << "viz gateway listening on " << go.listen.host << ':' << gw.port() << '\n';
            wait_for_signal();
            gw.stop();
        } else if (*provq_cmd) {
            prov::ProvenanceStore store(provq_dir);
            if (!q_env.empty()) {
                auto env = store.read_environment(q_env);
                if (!env) {
                    throw DataError("no environment recorded for run " + q_env);
                }
                std::cout << nlohmann::json{{"run_id", env->run_id}, {"epoch_us", env->epoch_us},
                                 {"hosts", env->hosts}, {"alpha", env->config.alpha}, {"k", env->config.k_context},
                                 {"n_min", env->config.n_min}, {"flush", env->config.flush_interval_s},
                                 {"metadata", env->metadata}}
                                 .dump()
                          << '\n';
                return 0;
            }
            prov::QueryFilter f;
            f.app = q_app;
            f.rank = q_rank;
            f.func_id = q_fid;
            if (q_step_lo) {
                f.steps = std::make_pair(*q_step_lo, q_step_hi.value_or(*q_step_lo));
            } else if (q_step_hi) {
                f.steps = std::make_pair(StepId{0}, *q_step_hi);
            }
            if (q_t0 || q_t1) {
                f.time = std::make_pair(q_t0.value_or(0), q_t1.value_or(std::numeric_limits<Micros>::max()));
            }
            const auto records = store.query(f);
            if (q_count) {
                std::cout << records.size() << '\n';
            } else {
                for (const auto& r : records) {
                    std::cout << prov::encode_record(r) << '\n';
                }
            }
        } else if (*bench_cmd) {
            RunOptions opt;
            opt.cfg = cfg;
            if (!bench_out.empty()) {
                opt.out_dir = bench_out;
            }
            std::cout << bench_report_json(run_bench(resolve_sources(bench_inputs), opt, bench_workers)) << '\n';
        }
    } catch (const ProtocolError& e) {
        std::cerr << "protocol error: " << e.what() << '\n';
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
