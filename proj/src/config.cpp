#include "ampwatch/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>

namespace ampwatch {

void PipelineConfig::propagate_timezone() {
    stats.tz = tz;
    anomaly.tz = tz;
    forecast.tz = tz;
}

void validate(const PipelineConfig& cfg) {
    aggregation::validate(cfg.aggregation);
    history::validate(cfg.resolutions);
    if (cfg.resolutions.windows.front().window_ms != cfg.aggregation.window_ms) {
        fail(ErrorCode::validation, "finest history resolution must equal the aggregation window");
    }
    if (cfg.stats.snapshot_every == 0) fail(ErrorCode::validation, "snapshot_every must be > 0");
    anomaly::validate(cfg.anomaly);
    forecast::validate(cfg.forecast);
}

namespace {

template <typename T>
T get(const json& doc, const char* key) {
    try {
        return doc.at(key).get<T>();
    } catch (const json::exception&) {
        fail(ErrorCode::validation, std::string("config field '") + key + "' has the wrong type");
    }
}

anomaly::SeriesOverride override_from_json(const json& doc) {
    codec::require_known_fields(doc, {"k", "min_count", "kind"}, "anomaly override");
    anomaly::SeriesOverride o;
    if (doc.contains("k")) o.k = get<double>(doc, "k");
    if (doc.contains("min_count")) o.min_count = get<std::uint64_t>(doc, "min_count");
    if (doc.contains("kind")) o.kind = stats::parse_kind(get<std::string>(doc, "kind"));
    return o;
}

void apply_anomaly(anomaly::AnomalyConfig& a, const json& doc) {
    codec::require_known_fields(doc, {"k", "min_count", "kind", "overrides", "residual"}, "anomaly");
    if (doc.contains("k")) a.k = get<double>(doc, "k");
    if (doc.contains("min_count")) a.min_count = get<std::uint64_t>(doc, "min_count");
    if (doc.contains("kind")) a.kind = stats::parse_kind(get<std::string>(doc, "kind"));
    if (doc.contains("overrides")) {
        for (const auto& [series, o] : doc["overrides"].items()) a.overrides[series] = override_from_json(o);
    }
    if (doc.contains("residual")) {
        const json& r = doc["residual"];
        codec::require_known_fields(r, {"enabled", "k", "min_count", "forecast_min_count"}, "residual");
        if (r.contains("enabled")) a.residual.enabled = get<bool>(r, "enabled");
        if (r.contains("k")) a.residual.k = get<double>(r, "k");
        if (r.contains("min_count")) a.residual.min_count = get<std::uint64_t>(r, "min_count");
        if (r.contains("forecast_min_count")) a.residual.forecast_min_count = get<std::uint64_t>(r, "forecast_min_count");
    }
}

}  // namespace

void apply_json(ServiceConfig& cfg, const json& doc) {
    if (!doc.is_object()) fail(ErrorCode::validation, "config must be an object");
    codec::require_known_fields(doc,
                                {"data_dir", "host", "port", "timezone", "window_ms", "grace_ms", "stale_windows",
                                 "resolutions", "raw_ttl_ms", "snapshot_every", "anomaly", "forecast", "trend",
                                 "alerting", "log_flush_every", "retention_interval_ms", "idle_flush_ms"},
                                "config");
    auto& p = cfg.pipeline;
    if (doc.contains("data_dir")) cfg.data_dir = get<std::string>(doc, "data_dir");
    if (doc.contains("host")) cfg.host = get<std::string>(doc, "host");
    if (doc.contains("port")) cfg.port = get<int>(doc, "port");
    if (doc.contains("timezone")) p.tz = TimeZone::parse(get<std::string>(doc, "timezone"));
    if (doc.contains("window_ms")) p.aggregation.window_ms = get<std::int64_t>(doc, "window_ms");
    if (doc.contains("grace_ms")) p.aggregation.grace_ms = get<std::int64_t>(doc, "grace_ms");
    if (doc.contains("stale_windows")) p.aggregation.stale_windows = get<int>(doc, "stale_windows");
    if (doc.contains("resolutions")) {
        p.resolutions.windows.clear();
        for (const auto& r : doc["resolutions"]) {
            codec::require_known_fields(r, {"window_ms", "ttl_ms"}, "resolution");
            p.resolutions.windows.push_back({get<std::int64_t>(r, "window_ms"), get<std::int64_t>(r, "ttl_ms")});
        }
    }
    if (doc.contains("raw_ttl_ms")) p.resolutions.raw_ttl_ms = get<std::int64_t>(doc, "raw_ttl_ms");
    if (doc.contains("snapshot_every")) p.stats.snapshot_every = get<std::uint64_t>(doc, "snapshot_every");
    if (doc.contains("anomaly")) apply_anomaly(p.anomaly, doc["anomaly"]);
    if (doc.contains("forecast")) {
        const json& f = doc["forecast"];
        codec::require_known_fields(f, {"horizon_ms", "cadence_ms", "min_count"}, "forecast");
        if (f.contains("horizon_ms")) p.forecast.horizon_ms = get<std::int64_t>(f, "horizon_ms");
        if (f.contains("cadence_ms")) p.forecast.cadence_ms = get<std::int64_t>(f, "cadence_ms");
        if (f.contains("min_count")) p.forecast.min_count = get<std::uint64_t>(f, "min_count");
    }
    if (doc.contains("trend")) {
        const json& t = doc["trend"];
        codec::require_known_fields(t, {"slope_threshold", "min_points", "coverage_fraction"}, "trend");
        if (t.contains("slope_threshold")) cfg.trend.slope_threshold = get<double>(t, "slope_threshold");
        if (t.contains("min_points")) cfg.trend.min_points = get<std::size_t>(t, "min_points");
        if (t.contains("coverage_fraction")) cfg.weekend.coverage_fraction = get<double>(t, "coverage_fraction");
    }
    if (doc.contains("alerting")) {
        const json& a = doc["alerting"];
        codec::require_known_fields(a, {"workers", "queue_capacity"}, "alerting");
        if (a.contains("workers")) cfg.alert_workers = get<std::size_t>(a, "workers");
        if (a.contains("queue_capacity")) cfg.alert_queue_capacity = get<std::size_t>(a, "queue_capacity");
    }
    if (doc.contains("log_flush_every")) cfg.log_flush_every = get<std::size_t>(doc, "log_flush_every");
    if (doc.contains("retention_interval_ms")) {
        cfg.retention_interval_ms = get<std::int64_t>(doc, "retention_interval_ms");
        if (cfg.retention_interval_ms < 0) fail(ErrorCode::validation, "retention_interval_ms must be >= 0");
    }
    if (doc.contains("idle_flush_ms")) {
        cfg.idle_flush_ms = get<std::int64_t>(doc, "idle_flush_ms");
        if (cfg.idle_flush_ms < 0) fail(ErrorCode::validation, "idle_flush_ms must be >= 0");
    }
}

void apply_env(ServiceConfig& cfg) {
    if (const char* dir = std::getenv("AMPWATCH_DATA_DIR"); dir && *dir) cfg.data_dir = dir;
    if (const char* port = std::getenv("AMPWATCH_PORT"); port && *port) {
        int value = 0;
        const char* end = port + std::char_traits<char>::length(port);
        auto [ptr, ec] = std::from_chars(port, end, value);
        if (ec != std::errc() || ptr != end) fail(ErrorCode::validation, std::string("invalid AMPWATCH_PORT '") + port + "'");
        cfg.port = value;
    }
    if (const char* tz = std::getenv("AMPWATCH_TZ"); tz && *tz) cfg.pipeline.tz = TimeZone::parse(tz);
}

ServiceConfig load_config(const std::optional<std::filesystem::path>& file) {
    ServiceConfig cfg;
    if (file) {
        std::ifstream in(*file);
        if (!in) fail(ErrorCode::io, "cannot read config " + file->string());
        json doc;
        try {
            doc = json::parse(in);
        } catch (const json::exception& e) {
            fail(ErrorCode::validation, file->string() + ": " + e.what());
        }
        apply_json(cfg, doc);
    }
    apply_env(cfg);
    if (cfg.port < 0 || cfg.port > 65535) fail(ErrorCode::validation, "port out of range");
    cfg.pipeline.propagate_timezone();
    cfg.weekend.tz = cfg.pipeline.tz;
    validate(cfg.pipeline);
    return cfg;
}

json to_json(const ServiceConfig& cfg) {
    const auto& p = cfg.pipeline;
    json resolutions = json::array();
    for (const auto& r : p.resolutions.windows) resolutions.push_back({{"window_ms", r.window_ms}, {"ttl_ms", r.ttl_ms}});
    return json{{"data_dir", cfg.data_dir.string()},
                {"port", cfg.port},
                {"timezone_offset_ms", p.tz.offset_ms},
                {"window_ms", p.aggregation.window_ms},
                {"grace_ms", p.aggregation.grace_ms},
                {"stale_windows", p.aggregation.stale_windows},
                {"resolutions", resolutions},
                {"raw_ttl_ms", p.resolutions.raw_ttl_ms},
                {"snapshot_every", p.stats.snapshot_every},
                {"anomaly",
                 {{"k", p.anomaly.k},
                  {"min_count", p.anomaly.min_count},
                  {"kind", stats::to_string(p.anomaly.kind)},
                  {"residual", {{"enabled", p.anomaly.residual.enabled}}}}},
                {"forecast",
                 {{"horizon_ms", p.forecast.horizon_ms},
                  {"cadence_ms", p.forecast.cadence_ms},
                  {"min_count", p.forecast.min_count}}},
                {"trend",
                 {{"slope_threshold", cfg.trend.slope_threshold},
                  {"min_points", cfg.trend.min_points},
                  {"coverage_fraction", cfg.weekend.coverage_fraction}}},
                {"retention_interval_ms", cfg.retention_interval_ms},
                {"idle_flush_ms", cfg.idle_flush_ms}};
}

}  // namespace ampwatch
