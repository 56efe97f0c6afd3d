#include "ampwatch/forecast.hpp"

#include <cmath>

namespace ampwatch::forecast {

namespace {

constexpr std::int64_t kMaxBoundariesPerStep = 7 * 24 * 4;

}  // namespace

json encode(const ForecastPoint& p) {
    return json{{"series", p.series},
                {"target_ts", p.target_ts},
                {"predicted_w", p.predicted_w},
                {"model", p.model},
                {"issued_at", p.issued_at}};
}

ForecastPoint decode_forecast(const json& doc) {
    return ForecastPoint{doc.at("series").get<std::string>(), doc.at("target_ts").get<std::int64_t>(),
                         doc.at("predicted_w").get<double>(), doc.at("model").get<std::string>(),
                         doc.at("issued_at").get<std::int64_t>()};
}

std::optional<ForecastPoint> seasonal_mean_forecast(const std::string& series, std::int64_t target_ts,
                                                    const stats::StatsSnapshot& snapshot, std::uint64_t min_count,
                                                    std::int64_t issued_at, const TimeZone& tz) {
    const auto kind = stats::AttributeKind::hour_of_week;
    const auto& bucket = snapshot.buckets.of(kind)[stats::bucket_of(kind, target_ts, tz)];
    if (bucket.count == 0 || bucket.count < min_count) return std::nullopt;
    return ForecastPoint{series, target_ts, bucket.mean_w, std::string(kSeasonalMean), issued_at};
}

BacktestResult backtest(const history::HistoryStore& history, const std::string& series, std::string_view model,
                        std::int64_t from_ms, std::int64_t to_ms, std::uint64_t min_count, const TimeZone& tz) {
    if (model != kSeasonalMean) fail(ErrorCode::validation, "unknown forecast model '" + std::string(model) + "'");
    if (from_ms >= to_ms) fail(ErrorCode::validation, "backtest needs from < to");
    if (!history.has_series(series)) fail(ErrorCode::not_found, "unknown series '" + series + "'");

    const std::int64_t w = history.finest_window_ms();
    const auto kind = stats::AttributeKind::hour_of_week;
    std::vector<std::pair<double, std::uint64_t>> buckets(stats::bucket_count(kind));
    for (const auto& row : history.query_range(series, w, INT64_MIN / 2, from_ms - w + 1)) {
        if (row.stats.count == 0 || row.window_start + w > from_ms) continue;
        auto& [sum, count] = buckets[stats::bucket_of(kind, row.window_start, tz)];
        sum += row.stats.sum_w();
        count += row.stats.count;
    }

    BacktestResult result;
    double abs_sum = 0.0;
    for (const auto& row : history.query_range(series, w, from_ms, to_ms)) {
        if (row.stats.count == 0) continue;
        const auto& [sum, count] = buckets[stats::bucket_of(kind, row.window_start, tz)];
        if (count == 0 || count < min_count) continue;
        abs_sum += std::abs(sum / static_cast<double>(count) - average(row.stats));
        ++result.count;
    }
    if (result.count == 0) fail(ErrorCode::insufficient_data, "no forecastable windows in backtest range");
    result.mae = abs_sum / static_cast<double>(result.count);
    return result;
}

void validate(const ForecastConfig& cfg) {
    if (cfg.horizon_ms < 0) fail(ErrorCode::validation, "forecast horizon must be >= 0");
    if (cfg.cadence_ms <= 0) fail(ErrorCode::validation, "forecast cadence must be > 0");
}

Forecaster::Forecaster(ForecastConfig config) : config_(std::move(config)) { validate(config_); }

void Forecaster::on_measurement(const Measurement& m, pipeline::Emitter&) {
    const std::int64_t ts = m.ts.epoch_ms;
    if (!started_) {
        started_ = true;
        watermark_ = ts;
        issued_through_ = floor_div(ts, config_.cadence_ms) * config_.cadence_ms;
        return;
    }
    watermark_ = std::max(watermark_, ts);
}

void Forecaster::on_derived(const std::string& topic, const json& payload, pipeline::Emitter&) {
    if (topic != topics::stats) return;
    auto snap = stats::decode_snapshot(payload);
    snapshots_[snap.series].push_back(std::move(snap));
}

void Forecaster::end_step(pipeline::Emitter& out) {
    if (!started_) return;
    const std::int64_t c = config_.cadence_ms;
    const std::int64_t last = floor_div(watermark_, c) * c;
    if (last <= issued_through_) return;
    std::int64_t b = std::max(issued_through_ + c, last - (kMaxBoundariesPerStep - 1) * c);
    for (; b <= last; b += c) {
        for (auto& [series, list] : snapshots_) {
            const stats::StatsSnapshot* snap = nullptr;
            for (const auto& s : list) {
                if (s.cutoff_ts <= b) snap = &s;
            }
            if (!snap) continue;
            auto p = seasonal_mean_forecast(series, b + config_.horizon_ms, *snap, config_.min_count, b, config_.tz);
            if (!p) continue;
            out.emit(topics::forecasts, series, p->target_ts, encode(*p));
            points_[series].push_back(std::move(*p));
            ++published_;
        }
    }
    issued_through_ = last;
    for (auto& [_, list] : snapshots_) {
        while (list.size() >= 2 && list[1].cutoff_ts <= issued_through_) list.pop_front();
    }
}

std::vector<ForecastPoint> Forecaster::forecasts(const std::string& series, std::int64_t from_ms,
                                                 std::int64_t to_ms) const {
    if (from_ms > to_ms) fail(ErrorCode::validation, "forecast query needs from <= to");
    std::vector<ForecastPoint> out;
    auto it = points_.find(series);
    if (it == points_.end()) return out;
    for (const auto& p : it->second) {
        if (p.target_ts >= from_ms && p.target_ts < to_ms) out.push_back(p);
    }
    return out;
}

}  // namespace ampwatch::forecast
