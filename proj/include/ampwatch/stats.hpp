#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ampwatch/stage.hpp"

namespace ampwatch::stats {

enum class AttributeKind { hour_of_day, day_of_week, hour_of_week, month_of_year };

inline constexpr std::array<AttributeKind, 4> kAllKinds{AttributeKind::hour_of_day, AttributeKind::day_of_week,
                                                        AttributeKind::hour_of_week, AttributeKind::month_of_year};

std::size_t bucket_count(AttributeKind kind) noexcept;
std::string_view to_string(AttributeKind kind) noexcept;
/// Accepts "HOUR_OF_WEEK" and "hour_of_week" spellings.
AttributeKind parse_kind(std::string_view text);
/// Monday = 0; HOUR_OF_WEEK counts from Monday 00:00.
std::size_t bucket_of(AttributeKind kind, std::int64_t ts_ms, const TimeZone& tz = {}) noexcept;

/// Streaming mean and population variance (Welford).
struct TemporalStatsBucket {
    std::uint64_t count = 0;
    double mean_w = 0.0;
    double m2 = 0.0;
    double max_w = 0.0;

    void update(double x) noexcept;
    /// Combines partial moments (Chan et al.).
    void merge(std::uint64_t other_count, double other_mean, double other_m2) noexcept;
    double variance() const noexcept { return count == 0 ? 0.0 : m2 / static_cast<double>(count); }
    double stddev() const noexcept;

    bool operator==(const TemporalStatsBucket&) const = default;
};

struct SeriesBuckets {
    std::array<std::vector<TemporalStatsBucket>, 4> by_kind;
    std::uint64_t total = 0;

    SeriesBuckets();
    const std::vector<TemporalStatsBucket>& of(AttributeKind kind) const noexcept {
        return by_kind[static_cast<std::size_t>(kind)];
    }
    void update(std::int64_t ts_ms, double value, const TimeZone& tz) noexcept;

    bool operator==(const SeriesBuckets&) const = default;
};

/// Bucket state of one series covering exactly its final data with
/// ts < cutoff_ts.
struct StatsSnapshot {
    std::string series;
    std::int64_t cutoff_ts = 0;
    SeriesBuckets buckets;
};

json encode(const StatsSnapshot& s);
StatsSnapshot decode_snapshot(const json& doc);

struct StatsConfig {
    /// Publish a snapshot after this many updates of a series.
    std::uint64_t snapshot_every = 1000;
    TimeZone tz;
};

struct StatsMetrics {
    std::uint64_t updates = 0;
    std::uint64_t late_drops = 0;
    std::uint64_t snapshots = 0;
};

/// Temporal-attribute aggregation over final measurements (raw sensors)
/// and final group emissions.
class StatsEngine : public pipeline::Stage {
public:
    StatsEngine(StatsConfig config, pipeline::EventTimePolicy policy);

    std::string name() const override { return "stats"; }
    std::vector<std::string> outputs() const override { return {topics::stats}; }
    std::vector<std::string> derived_inputs() const override { return {topics::aggregated}; }

    void on_measurement(const Measurement& m, pipeline::Emitter& out) override;
    void on_flush(pipeline::Emitter& out) override;
    void on_derived(const std::string& topic, const json& payload, pipeline::Emitter& out) override;

    /// Immediate single-value update, bypassing event-time finalization.
    void update(const std::string& series, std::int64_t ts_ms, double value_w);
    /// Copy of the bucket array; unknown series yield empty buckets.
    std::vector<TemporalStatsBucket> snapshot(const std::string& series, AttributeKind kind) const;
    std::optional<StatsSnapshot> full_snapshot(const std::string& series) const;
    std::vector<std::string> series() const;
    const StatsMetrics& metrics() const noexcept { return metrics_; }
    const StatsConfig& config() const noexcept { return config_; }

private:
    struct SeriesState {
        SeriesBuckets buckets;
        std::uint64_t since_publish = 0;
        std::int64_t last_ts = 0;
    };

    void apply(const std::string& series, std::int64_t ts_ms, double value_w, pipeline::Emitter* out);
    void publish(const std::string& series, SeriesState& state, pipeline::Emitter& out);
    void finalize_pending(pipeline::Emitter& out);

    StatsConfig config_;
    pipeline::EventClock clock_;
    std::map<std::string, SeriesState> series_;
    std::vector<Measurement> pending_;
    StatsMetrics metrics_;
};

}  // namespace ampwatch::stats
