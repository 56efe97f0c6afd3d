#include "ampwatch/cli.hpp"

#include <atomic>
#include <csignal>
#include <cstdio>
#include <iostream>
#include <optional>
#include <thread>

#include <CLI11.hpp>

#include "ampwatch/http_api.hpp"
#include "ampwatch/ingest.hpp"
#include "ampwatch/service.hpp"

namespace ampwatch {

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop = true; }

std::string fixed3(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

void append_flush_marker(topiclog::TopicLog& log) {
    log.ensure_topic(topics::control);
    log.append(topics::control, "flush", 0,
               codec::dump(codec::encode(codec::ControlRecord{"flush", log.end_offset(topics::measurements)})));
}

template <typename Fn>
void with_raw_log(const ServiceConfig& cfg, Fn&& fn) {
    std::filesystem::create_directories(cfg.data_dir);
    DataDirLock lock(cfg.data_dir);
    topiclog::TopicLog log(topiclog::LogOptions{DataPaths{cfg.data_dir}.log_dir(), cfg.log_flush_every});
    for (const auto& t : {topics::measurements, topics::configuration, topics::control}) log.ensure_topic(t);
    fn(log);
    log.flush();
}

ServiceOptions batch_options() {
    ServiceOptions o;
    o.background = false;
    return o;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"ampwatch: streaming power-consumption analytics"};
    app.require_subcommand(1);
    std::optional<std::string> data_dir;
    std::optional<std::string> config_file;
    app.add_option("--data-dir", data_dir, "Data directory (default $AMPWATCH_DATA_DIR or ./data)");
    app.add_option("--config", config_file, "JSON config file");

    auto* serve = app.add_subcommand("serve", "Run the HTTP service");
    std::optional<int> port;
    std::optional<std::string> host;
    serve->add_option("--port", port, "Listen port (default $AMPWATCH_PORT or 8185)");
    serve->add_option("--host", host, "Listen address");

    auto* simulate = app.add_subcommand("simulate", "Append simulated measurements");
    std::string scenario, from_text, to_text;
    double speedup = 0.0;
    bool sim_flush = false;
    simulate->add_option("--scenario", scenario, "Scenario JSON file")->required();
    simulate->add_option("--from", from_text, "Start (epoch ms or ISO-8601)")->required();
    simulate->add_option("--to", to_text, "End, exclusive")->required();
    simulate->add_option("--speedup", speedup, "Pace appends at event time / speedup (0 = no pacing)");
    simulate->add_flag("--flush", sim_flush, "Finalize all windows afterwards");

    auto* ingest = app.add_subcommand("ingest", "Append measurements from CSV");
    std::string csv;
    bool csv_flush = false;
    ingest->add_option("--csv", csv, "CSV file with sensor_id,timestamp_ms,value_w")->required();
    ingest->add_flag("--flush", csv_flush, "Finalize all windows afterwards");

    auto* backtest = app.add_subcommand("backtest", "Score a forecaster on history");
    std::string series, model = "seasonal-mean", bt_from, bt_to;
    backtest->add_option("--series", series, "Series id")->required();
    backtest->add_option("--model", model, "Forecast model")->required();
    backtest->add_option("--from", bt_from, "Start of the scored range")->required();
    backtest->add_option("--to", bt_to, "End of the scored range")->required();

    auto* replay = app.add_subcommand("replay", "Recompute derived topics and compare");

    auto* retention = app.add_subcommand("retention", "Apply history retention");
    std::optional<std::string> now_text;
    retention->add_option("--now", now_text, "Reference time (default: wall clock)");

    std::vector<std::string> argv(args.rbegin(), args.rend());
    try {
        app.parse(argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n" << app.help();
        return 2;
    }

    try {
        ServiceConfig cfg = load_config(config_file ? std::optional<std::filesystem::path>(*config_file) : std::nullopt);
        if (data_dir) cfg.data_dir = *data_dir;

        if (*simulate) {
            const auto sc = ingest::load_scenario(scenario);
            std::size_t n = 0;
            with_raw_log(cfg, [&](topiclog::TopicLog& log) {
                n = ingest::run_simulator(log, sc, parse_time(from_text), parse_time(to_text), speedup);
                if (sim_flush) append_flush_marker(log);
            });
            out << "appended " << n << "\n";
        } else if (*ingest) {
            ingest::CsvReport report;
            with_raw_log(cfg, [&](topiclog::TopicLog& log) {
                report = ingest::ingest_csv(log, csv);
                if (csv_flush) append_flush_marker(log);
            });
            out << "appended " << report.appended << "\n";
            if (report.rejected > 0) err << "rejected " << report.rejected << " rows\n";
        } else if (*backtest) {
            Service svc(cfg, batch_options());
            const auto r = svc.backtest(series, model, parse_time(bt_from), parse_time(bt_to));
            out << "MAE " << fixed3(r["mae"].get<double>()) << "\n";
            out << "windows " << r["count"].get<std::uint64_t>() << "\n";
        } else if (*replay) {
            Service svc(cfg, batch_options());
            const auto r = svc.replay();
            out << r.dump(2) << "\n";
            if (!r["identical"].get<bool>()) {
                err << "replay diverged from the stored derived topics\n";
                return 1;
            }
        } else if (*retention) {
            Service svc(cfg, batch_options());
            const std::int64_t now = now_text ? parse_time(*now_text)
                                              : std::chrono::duration_cast<std::chrono::milliseconds>(
                                                    std::chrono::system_clock::now().time_since_epoch())
                                                    .count();
            out << "deleted " << svc.retention(now)["deleted"].get<std::size_t>() << "\n";
        } else if (*serve) {
            if (port) cfg.port = *port;
            if (host) cfg.host = *host;
            Service svc(cfg);
            HttpServer http(svc);
            const int bound = http.bind(cfg.host, cfg.port);
            g_stop = false;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            http.start();
            out << "listening on " << cfg.host << ":" << bound << std::endl;
            while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
            http.stop();
        }
    } catch (const Error& e) {
        err << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace ampwatch
