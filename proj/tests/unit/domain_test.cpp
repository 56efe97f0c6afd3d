#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <unordered_set>

#include "ampwatch/domain.hpp"
#include "support.hpp"

using namespace ampwatch;
using testsupport::Rng;

namespace {

void expect_code(ErrorCode code, const std::function<void()>& fn) {
    try {
        fn();
        FAIL() << "expected " << to_string(code);
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), code) << e.what();
    }
}

PowerStats random_stats(Rng& rng) {
    PowerStats s;
    const int n = static_cast<int>(rng.integer(0, 5));
    for (int i = 0; i < n; ++i) s = stats_merge(s, stats_from_value(rng.uniform(0, 1000)));
    return s;
}

void expect_equivalent(const PowerStats& a, const PowerStats& b) {
    ASSERT_EQ(a.count, b.count);
    if (a.count == 0) return;
    EXPECT_EQ(a.min_w, b.min_w);
    EXPECT_EQ(a.max_w, b.max_w);
    EXPECT_TRUE(testsupport::close_rel(a.sum_w(), b.sum_w(), 1e-9)) << a.sum_w() << " vs " << b.sum_w();
}

}  // namespace

TEST(SensorIdTest, AcceptsAllowedCharacters) {
    EXPECT_EQ(SensorId("comp-1_a.b").str(), "comp-1_a.b");
    EXPECT_TRUE(SensorId::is_valid(std::string(128, 'x')));
}

TEST(SensorIdTest, RejectsInvalidIds) {
    EXPECT_FALSE(SensorId::is_valid(""));
    EXPECT_FALSE(SensorId::is_valid(std::string(129, 'x')));
    EXPECT_FALSE(SensorId::is_valid("has space"));
    EXPECT_FALSE(SensorId::is_valid("a:b"));
    expect_code(ErrorCode::validation, [] { SensorId("bad id"); });
}

TEST(SensorIdTest, ComparableAndHashableByValue) {
    std::unordered_set<SensorId> ids{SensorId("a"), SensorId("a"), SensorId("b")};
    EXPECT_EQ(ids.size(), 2u);
    EXPECT_LT(SensorId("a"), SensorId("b"));
}

TEST(MeasurementTest, RejectsNegativeAndNonFinite) {
    EXPECT_NO_THROW(make_measurement("s1", 0, 0.0));
    expect_code(ErrorCode::validation, [] { make_measurement("s1", 0, -1.0); });
    expect_code(ErrorCode::validation, [] { make_measurement("s1", 0, std::numeric_limits<double>::infinity()); });
    expect_code(ErrorCode::validation, [] { make_measurement("s1", -5, 1.0); });
}

TEST(PowerStatsTest, SingletonFromValue) {
    const auto s = stats_from_value(10.0);
    EXPECT_EQ(s.sum_w(), 10.0);
    EXPECT_EQ(s.count, 1u);
    EXPECT_EQ(s.min_w, 10.0);
    EXPECT_EQ(s.max_w, 10.0);
}

TEST(PowerStatsTest, ZeroSingleton) {
    const auto s = stats_from_value(0.0);
    EXPECT_EQ(s.sum_w(), 0.0);
    EXPECT_EQ(s.count, 1u);
    EXPECT_EQ(s.min_w, 0.0);
    EXPECT_EQ(s.max_w, 0.0);
}

TEST(PowerStatsTest, NanRejected) {
    expect_code(ErrorCode::validation, [] { stats_from_value(std::nan("")); });
}

TEST(PowerStatsTest, MergeTwoSingletons) {
    const auto s = stats_merge(stats_from_value(10), stats_from_value(20));
    EXPECT_EQ(s.sum_w(), 30.0);
    EXPECT_EQ(s.count, 2u);
    EXPECT_EQ(s.min_w, 10.0);
    EXPECT_EQ(s.max_w, 20.0);
    EXPECT_EQ(average(s), 15.0);
}

TEST(PowerStatsTest, IdentityElement) {
    const auto s = stats_merge(stats_from_value(10), stats_from_value(20));
    EXPECT_TRUE(same_stats(stats_merge(s, PowerStats::identity()), s));
    EXPECT_TRUE(same_stats(stats_merge(PowerStats::identity(), s), s));
    const auto id = PowerStats::identity();
    EXPECT_EQ(id.count, 0u);
    EXPECT_EQ(id.sum_w(), 0.0);
    EXPECT_EQ(id.min_w, std::numeric_limits<double>::infinity());
    EXPECT_EQ(id.max_w, -std::numeric_limits<double>::infinity());
}

TEST(PowerStatsTest, AverageOfSingletonAndEmpty) {
    EXPECT_EQ(average(stats_from_value(10.0)), 10.0);
    expect_code(ErrorCode::empty_stats, [] { average(PowerStats::identity()); });
}

TEST(PowerStatsTest, AverageIsIdentityOnValue) {
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        const double v = rng.uniform(0, 1e6);
        EXPECT_EQ(average(stats_from_value(v)), v);
    }
}

TEST(PowerStatsProperty, FoldUnderPermutationsAndTreeShapes) {
    Rng rng(17);
    std::vector<PowerStats> singles;
    std::vector<double> values;
    for (int i = 0; i < 50; ++i) {
        values.push_back(rng.uniform(0, 5000));
        singles.push_back(stats_from_value(values.back()));
    }
    double oracle_sum = 0.0;
    for (double v : values) oracle_sum += v;
    const double oracle_min = *std::min_element(values.begin(), values.end());
    const double oracle_max = *std::max_element(values.begin(), values.end());

    for (int trial = 0; trial < 100; ++trial) {
        auto work = singles;
        rng.shuffle(work);
        // Random tree shape: repeatedly merge two random neighbours.
        while (work.size() > 1) {
            const auto i = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(work.size()) - 2));
            work[i] = stats_merge(work[i], work[i + 1]);
            work.erase(work.begin() + static_cast<std::ptrdiff_t>(i) + 1);
        }
        EXPECT_EQ(work[0].count, 50u);
        EXPECT_EQ(work[0].min_w, oracle_min);
        EXPECT_EQ(work[0].max_w, oracle_max);
        EXPECT_TRUE(testsupport::close_rel(work[0].sum_w(), oracle_sum, 1e-9));
    }
}

TEST(PowerStatsProperty, CommutativeMonoid) {
    Rng rng(29);
    for (int i = 0; i < 500; ++i) {
        const auto a = random_stats(rng), b = random_stats(rng), c = random_stats(rng);
        expect_equivalent(stats_merge(a, b), stats_merge(b, a));
        expect_equivalent(stats_merge(stats_merge(a, b), c), stats_merge(a, stats_merge(b, c)));
        const auto m = stats_merge(a, b);
        if (m.count > 0) {
            EXPECT_LE(m.min_w, average(m) * (1 + 1e-12));
            EXPECT_GE(m.max_w, average(m) * (1 - 1e-12));
        }
    }
}

TEST(TimeTest, WindowStartFloors) {
    EXPECT_EQ(window_start_of(0, 60000), 0);
    EXPECT_EQ(window_start_of(59999, 60000), 0);
    EXPECT_EQ(window_start_of(60000, 60000), 60000);
    EXPECT_EQ(window_start_of(-1, 60000), -60000);
    EXPECT_EQ(floor_div(-7, 2), -4);
}

TEST(TimeTest, CalendarAttributes) {
    EXPECT_EQ(day_of_week(0), 3);
    EXPECT_EQ(hour_of_day(25 * kHourMs), 1);
    EXPECT_EQ(month_of_year(0), 0);
    // 2024-03-01T00:00:00Z
    EXPECT_EQ(month_of_year(1709251200000), 2);
    EXPECT_EQ(day_of_week(1709251200000), 4);
}

TEST(TimeTest, TimeZoneOffsets) {
    EXPECT_EQ(TimeZone::parse("UTC").offset_ms, 0);
    EXPECT_EQ(TimeZone::parse("+02:00").offset_ms, 2 * kHourMs);
    EXPECT_EQ(TimeZone::parse("UTC-05:30").offset_ms, -(5 * kHourMs + 30 * kMinuteMs));
    EXPECT_EQ(hour_of_day(0, TimeZone::parse("+02:00")), 2);
    EXPECT_THROW(TimeZone::parse("Mars/Base"), Error);
}

TEST(TimeTest, ParseTimeAndDuration) {
    EXPECT_EQ(parse_time("1700000000000"), 1700000000000);
    EXPECT_EQ(parse_time("1970-01-01T00:01:00Z"), 60000);
    EXPECT_EQ(parse_time("1970-01-01T02:00:00+02:00"), 0);
    EXPECT_EQ(parse_time("2024-01-01"), 1704067200000);
    EXPECT_EQ(format_iso8601(1704067200000), "2024-01-01T00:00:00.000Z");
    EXPECT_EQ(parse_duration("5m"), 5 * kMinuteMs);
    EXPECT_EQ(parse_duration("250"), 250);
    EXPECT_EQ(parse_duration("2w"), 2 * kWeekMs);
    EXPECT_THROW(parse_time("yesterday"), Error);
    EXPECT_THROW(parse_duration("5 parsecs"), Error);
}
