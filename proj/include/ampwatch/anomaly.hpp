#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ampwatch/stage.hpp"
#include "ampwatch/stats.hpp"

namespace ampwatch::anomaly {

struct SeriesOverride {
    std::optional<double> k;
    std::optional<std::uint64_t> min_count;
    std::optional<stats::AttributeKind> kind;
};

/// Optional second detector: applies the same k-sigma rule to the residual
/// between a measurement and its seasonal-mean forecast.
struct ResidualDetectorConfig {
    bool enabled = false;
    double k = 3.0;
    std::uint64_t min_count = 100;
    std::uint64_t forecast_min_count = 1;
};

struct AnomalyConfig {
    double k = 3.0;
    std::uint64_t min_count = 100;
    stats::AttributeKind kind = stats::AttributeKind::hour_of_week;
    std::map<std::string, SeriesOverride> overrides;
    ResidualDetectorConfig residual;
    TimeZone tz;
};

void validate(const AnomalyConfig& cfg);

struct EffectiveConfig {
    double k = 3.0;
    std::uint64_t min_count = 100;
    stats::AttributeKind kind = stats::AttributeKind::hour_of_week;
};

EffectiveConfig resolve(const AnomalyConfig& cfg, const std::string& series);

enum class DetectorKind { k_sigma, constant_deviation, forecast_residual };
std::string_view to_string(DetectorKind d) noexcept;
DetectorKind parse_detector(std::string_view text);

struct AnomalyEvent {
    std::string series;
    std::int64_t ts = 0;
    double value_w = 0.0;
    double expected_mean_w = 0.0;
    double stddev_w = 0.0;
    /// |x - mu| / sigma; absent for constant-deviation flags (sigma = 0).
    std::optional<double> score;
    double k_used = 0.0;
    stats::AttributeKind kind = stats::AttributeKind::hour_of_week;
    std::size_t bucket = 0;
    DetectorKind detector = DetectorKind::k_sigma;
};

json encode(const AnomalyEvent& e);
AnomalyEvent decode_anomaly(const json& doc);

/// The k-sigma test against one bucket: none when the bucket has fewer
/// than min_count values; when sigma = 0 a constant-deviation flag is
/// raised iff x differs from the mean; otherwise an event iff
/// |x - mu| >= k * sigma.
std::optional<AnomalyEvent> evaluate(const std::string& series, std::int64_t ts_ms, double value_w,
                                     const stats::TemporalStatsBucket& bucket, std::size_t bucket_index,
                                     const EffectiveConfig& cfg);
std::optional<AnomalyEvent> evaluate(const Measurement& m, const stats::StatsSnapshot& snapshot,
                                     const AnomalyConfig& cfg);

struct AnomalyMetrics {
    std::uint64_t evaluated = 0;
    std::uint64_t insufficient_data = 0;
    std::uint64_t events = 0;
    std::uint64_t constant_flags = 0;
    std::uint64_t residual_events = 0;
    std::uint64_t late_drops = 0;
};

struct AnomalyQuery {
    std::optional<std::string> series;
    std::int64_t from_ms = 0;
    std::int64_t to_ms = 0;
    std::optional<double> min_score;
};

/// Joins final measurements and group emissions with the newest statistics
/// snapshot that precedes them in event time.
class Detector : public pipeline::Stage {
public:
    Detector(AnomalyConfig config, pipeline::EventTimePolicy policy);

    std::string name() const override { return "anomaly"; }
    std::vector<std::string> outputs() const override { return {topics::anomalies}; }
    std::vector<std::string> derived_inputs() const override { return {topics::aggregated, topics::stats}; }

    void on_measurement(const Measurement& m, pipeline::Emitter& out) override;
    void on_flush(pipeline::Emitter& out) override;
    void on_derived(const std::string& topic, const json& payload, pipeline::Emitter& out) override;
    void end_step(pipeline::Emitter& out) override;

    std::vector<AnomalyEvent> query_anomalies(const AnomalyQuery& q) const;
    const std::vector<AnomalyEvent>& events() const noexcept { return events_; }
    const AnomalyMetrics& metrics() const noexcept { return metrics_; }
    const AnomalyConfig& config() const noexcept { return config_; }

private:
    const stats::StatsSnapshot* snapshot_for(const std::string& series, std::int64_t ts_ms) const;
    void evaluate_point(const std::string& series, std::int64_t ts_ms, double value_w, pipeline::Emitter& out);
    void prune_snapshots();

    AnomalyConfig config_;
    pipeline::EventClock clock_;
    std::map<std::string, std::deque<stats::StatsSnapshot>> snapshots_;
    std::vector<Measurement> pending_;
    std::vector<std::pair<std::string, std::pair<std::int64_t, double>>> pending_groups_;
    std::map<std::string, stats::TemporalStatsBucket> residual_stats_;
    std::vector<AnomalyEvent> events_;
    AnomalyMetrics metrics_;
    bool flushing_ = false;
};

}  // namespace ampwatch::anomaly
