#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ampwatch/history.hpp"
#include "ampwatch/stage.hpp"
#include "ampwatch/stats.hpp"

namespace ampwatch::forecast {

inline constexpr std::string_view kSeasonalMean = "seasonal-mean";

struct ForecastPoint {
    std::string series;
    std::int64_t target_ts = 0;
    double predicted_w = 0.0;
    std::string model;
    std::int64_t issued_at = 0;

    bool operator==(const ForecastPoint&) const = default;
};

json encode(const ForecastPoint& p);
ForecastPoint decode_forecast(const json& doc);

/// Mean of the HOUR_OF_WEEK bucket holding target_ts, or none when that
/// bucket has fewer than min_count values.
std::optional<ForecastPoint> seasonal_mean_forecast(const std::string& series, std::int64_t target_ts,
                                                    const stats::StatsSnapshot& snapshot, std::uint64_t min_count,
                                                    std::int64_t issued_at, const TimeZone& tz = {});

struct BacktestResult {
    double mae = 0.0;
    std::uint64_t count = 0;
};

/// Trains on finest-resolution rows ending at or before `from`, then scores
/// every finest window in [from, to) that has data.
BacktestResult backtest(const history::HistoryStore& history, const std::string& series, std::string_view model,
                        std::int64_t from_ms, std::int64_t to_ms, std::uint64_t min_count = 1,
                        const TimeZone& tz = {});

struct ForecastConfig {
    std::int64_t horizon_ms = kHourMs;
    std::int64_t cadence_ms = 15 * kMinuteMs;
    std::uint64_t min_count = 1;
    TimeZone tz;
};

void validate(const ForecastConfig& cfg);

/// Event-time driven forecaster: whenever the watermark crosses a cadence
/// boundary b, publishes a forecast for b + horizon for every series with
/// statistics, using the newest snapshot with cutoff <= b.
class Forecaster : public pipeline::Stage {
public:
    explicit Forecaster(ForecastConfig config);

    std::string name() const override { return "forecast"; }
    std::vector<std::string> outputs() const override { return {topics::forecasts}; }
    std::vector<std::string> derived_inputs() const override { return {topics::stats}; }

    void on_measurement(const Measurement& m, pipeline::Emitter& out) override;
    void on_derived(const std::string& topic, const json& payload, pipeline::Emitter& out) override;
    void end_step(pipeline::Emitter& out) override;

    /// Points for a series with from <= target_ts < to, in publication order.
    std::vector<ForecastPoint> forecasts(const std::string& series, std::int64_t from_ms, std::int64_t to_ms) const;
    std::uint64_t published() const noexcept { return published_; }
    const ForecastConfig& config() const noexcept { return config_; }

private:
    ForecastConfig config_;
    bool started_ = false;
    std::int64_t issued_through_ = 0;
    std::int64_t watermark_ = 0;
    std::map<std::string, std::deque<stats::StatsSnapshot>> snapshots_;
    std::map<std::string, std::vector<ForecastPoint>> points_;
    std::uint64_t published_ = 0;
};

}  // namespace ampwatch::forecast
