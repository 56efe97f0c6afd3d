#include <gtest/gtest.h>

#include <cmath>

#include "ampwatch/forecast.hpp"
#include "ampwatch/pipeline.hpp"
#include "support.hpp"

using namespace ampwatch;
using namespace ampwatch::forecast;

namespace {

// Hour of the week counted from Monday 00:00 UTC; the epoch fell on a Thursday.
std::size_t oracle_hour_of_week(std::int64_t ts) { return static_cast<std::size_t>((ts / kHourMs + 72) % 168); }

void append(topiclog::TopicLog& log, const Measurement& m) {
    log.append(topics::measurements, m.sensor.str(), m.ts.epoch_ms, codec::measurement_payload(m));
}

std::vector<ForecastPoint> run_forecaster(const std::vector<Measurement>& ms, std::uint64_t chunk) {
    topiclog::TopicLog log;
    PipelineConfig c;
    c.stats.snapshot_every = 10;
    pipeline::Pipeline p(log, c);
    for (const auto& m : ms) append(log, m);
    p.pump(chunk);
    return p.forecaster().forecasts("s1", 0, 20 * kDayMs);
}

}  // namespace

TEST(SeasonalMeanTest, BucketMeanOfTargetHour) {
    stats::StatsEngine engine(stats::StatsConfig{}, pipeline::EventTimePolicy{});
    engine.update("s1", 0, 10);
    engine.update("s1", 60'000, 30);
    engine.update("s1", kHourMs, 99);
    const auto snap = *engine.full_snapshot("s1");
    const auto p = seasonal_mean_forecast("s1", kWeekMs + 1000, snap, 1, 5);
    ASSERT_TRUE(p);
    EXPECT_EQ(p->predicted_w, 20.0);
    EXPECT_EQ(p->model, "seasonal-mean");
    EXPECT_EQ(p->issued_at, 5);
    EXPECT_FALSE(seasonal_mean_forecast("s1", kWeekMs + 1000, snap, 3, 5));
    EXPECT_FALSE(seasonal_mean_forecast("s1", 5 * kHourMs, snap, 1, 5));
}

TEST(BacktestTest, ConstantSeriesHasZeroError) {
    history::HistoryStore store(history::ResolutionPolicy::defaults());
    for (std::int64_t t = 0; t < 2 * kWeekMs; t += kMinuteMs) store.update(make_measurement("flat", t, 100));
    const auto r = backtest(store, "flat", kSeasonalMean, kWeekMs, 2 * kWeekMs);
    EXPECT_EQ(r.mae, 0.0);
    EXPECT_EQ(r.count, 10080u);
}

TEST(BacktestTest, PeriodicSeriesPredictedExactly) {
    history::HistoryStore store(history::ResolutionPolicy::defaults());
    for (std::int64_t t = 0; t < 3 * kWeekMs; t += kMinuteMs) {
        store.update(make_measurement("p", t, 200 + 50 * static_cast<double>(oracle_hour_of_week(t) % 13)));
    }
    EXPECT_LE(backtest(store, "p", kSeasonalMean, kWeekMs, 3 * kWeekMs).mae, 1e-9);
}

TEST(BacktestTest, MatchesIndependentComputation) {
    testsupport::Rng rng(17);
    history::HistoryStore store(history::ResolutionPolicy::defaults());
    std::vector<Measurement> ms;
    for (std::int64_t t = 0; t < 2 * kWeekMs; t += 20'000) {
        if (rng.uniform() < 0.1) continue;
        ms.push_back(make_measurement("s", t, rng.uniform(0, 1000)));
        store.update(ms.back());
    }
    const std::int64_t from = kWeekMs + 13 * kMinuteMs, to = 2 * kWeekMs - 7 * kMinuteMs;

    std::vector<double> sum(168, 0.0), count(168, 0.0);
    std::map<std::int64_t, std::pair<double, double>> actual;
    for (const auto& m : ms) {
        const std::int64_t start = m.ts.epoch_ms / kMinuteMs * kMinuteMs;
        if (start + kMinuteMs <= from) {
            sum[oracle_hour_of_week(start)] += m.value_w;
            count[oracle_hour_of_week(start)] += 1;
        }
        if (start >= from && start < to) {
            actual[start].first += m.value_w;
            actual[start].second += 1;
        }
    }
    double err = 0.0;
    std::uint64_t n = 0;
    for (const auto& [start, sc] : actual) {
        const auto h = oracle_hour_of_week(start);
        if (count[h] == 0) continue;
        err += std::fabs(sum[h] / count[h] - sc.first / sc.second);
        ++n;
    }
    const auto r = backtest(store, "s", kSeasonalMean, from, to);
    EXPECT_EQ(r.count, n);
    EXPECT_TRUE(testsupport::close_rel(r.mae, err / static_cast<double>(n), 1e-9));
}

TEST(BacktestTest, Errors) {
    history::HistoryStore store(history::ResolutionPolicy::defaults());
    store.update(make_measurement("s", 0, 1));
    auto code = [&](auto&& fn) {
        try {
            fn();
        } catch (const Error& e) {
            return e.code();
        }
        return ErrorCode::internal;
    };
    EXPECT_EQ(code([&] { backtest(store, "s", "arima", 0, 1); }), ErrorCode::validation);
    EXPECT_EQ(code([&] { backtest(store, "s", kSeasonalMean, 5, 5); }), ErrorCode::validation);
    EXPECT_EQ(code([&] { backtest(store, "nobody", kSeasonalMean, 0, 1); }), ErrorCode::not_found);
    EXPECT_EQ(code([&] { backtest(store, "s", kSeasonalMean, 0, kDayMs); }), ErrorCode::insufficient_data);
}

TEST(ForecasterTest, PublishesAtCadenceForHorizonAhead) {
    std::vector<Measurement> ms;
    for (std::int64_t t = 0; t < kWeekMs + kDayMs; t += kMinuteMs) ms.push_back(make_measurement("s1", t, 100));
    const auto points = run_forecaster(ms, 0);
    // Hour-of-week buckets: the first target with history is one week after the start.
    ASSERT_EQ(points.size(), 100u);
    EXPECT_EQ(points.front().target_ts, kWeekMs);
    for (const auto& p : points) {
        EXPECT_EQ(p.predicted_w, 100.0);
        EXPECT_EQ(p.target_ts - p.issued_at, kHourMs);
        EXPECT_EQ(p.issued_at % (15 * kMinuteMs), 0);
    }
    EXPECT_EQ(points.back().issued_at, kWeekMs + 1425 * kMinuteMs);
}

TEST(ForecasterTest, IndependentOfChunking) {
    testsupport::Rng rng(3);
    std::vector<Measurement> ms;
    for (std::int64_t t = 0; t < kWeekMs + kDayMs; t += 2 * kMinuteMs) ms.push_back(make_measurement("s1", t, rng.uniform(0, 50)));
    const auto whole = run_forecaster(ms, 0);
    EXPECT_FALSE(whole.empty());
    EXPECT_EQ(run_forecaster(ms, 1), whole);
    EXPECT_EQ(run_forecaster(ms, 97), whole);
}

TEST(ForecasterTest, QueryRangeAndConfig) {
    Forecaster f(ForecastConfig{});
    EXPECT_TRUE(f.forecasts("s1", 0, 10).empty());
    EXPECT_THROW(f.forecasts("s1", 10, 0), Error);
    EXPECT_THROW(Forecaster(ForecastConfig{kHourMs, 0, 1, {}}), Error);
    EXPECT_THROW(Forecaster(ForecastConfig{-1, kMinuteMs, 1, {}}), Error);
}

TEST(ForecastEncodingTest, RoundTrip) {
    const ForecastPoint p{"s1", 3600000, 42.5, "seasonal-mean", 0};
    EXPECT_EQ(decode_forecast(codec::parse(codec::dump(encode(p)))), p);
}
