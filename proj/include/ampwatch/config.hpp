#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "ampwatch/aggregation.hpp"
#include "ampwatch/anomaly.hpp"
#include "ampwatch/correlation.hpp"
#include "ampwatch/forecast.hpp"
#include "ampwatch/history.hpp"
#include "ampwatch/stats.hpp"

namespace ampwatch {

struct TrendConfig {
    double slope_threshold = 0.0;
    std::size_t min_points = 3;
};

/// Settings of every consumer in one pipeline.
struct PipelineConfig {
    aggregation::AggregationConfig aggregation;
    history::ResolutionPolicy resolutions = history::ResolutionPolicy::defaults();
    stats::StatsConfig stats;
    anomaly::AnomalyConfig anomaly;
    forecast::ForecastConfig forecast;
    TimeZone tz;

    /// Copies tz into every module config.
    void propagate_timezone();
};

void validate(const PipelineConfig& cfg);

struct ServiceConfig {
    std::filesystem::path data_dir = "data";
    std::string host = "127.0.0.1";
    int port = 8185;
    PipelineConfig pipeline;
    correlation::WeekendConfig weekend;
    TrendConfig trend;
    std::size_t log_flush_every = 1000;
    /// Wall-clock period of automatic history retention; 0 disables it.
    std::int64_t retention_interval_ms = kHourMs;
    /// Wall-clock quiet period after which open windows are flushed; 0 disables it.
    std::int64_t idle_flush_ms = 5000;
    std::size_t alert_workers = 2;
    std::size_t alert_queue_capacity = 1024;
};

/// Applies a JSON config document; unknown keys are rejected.
void apply_json(ServiceConfig& cfg, const json& doc);
/// AMPWATCH_DATA_DIR, AMPWATCH_PORT and AMPWATCH_TZ.
void apply_env(ServiceConfig& cfg);
/// Defaults, then the optional file, then the environment.
ServiceConfig load_config(const std::optional<std::filesystem::path>& file);
json to_json(const ServiceConfig& cfg);

}  // namespace ampwatch
